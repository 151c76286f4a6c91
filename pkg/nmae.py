#!/usr/bin/env python3
"""
Entry point para nmae-cli.

Este arquivo serve como ponto de entrada principal para a aplicação,
delegando a execução para o módulo CLI.
"""

import sys

from nmae_core.cli import main

if __name__ == '__main__':
    sys.exit(main())
