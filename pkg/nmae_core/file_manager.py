"""
Módulo de gerenciamento de arquivos e diretórios.

Este módulo é responsável por:
- Criar a estrutura de diretórios de saída de um pré-treinamento
- Gerar nomes padronizados de arquivos
- Gravar arquivos de forma atômica (checkpoints, logs, painéis)
"""

import json
import os
import tempfile
from datetime import datetime
from typing import Any, Dict, Optional


class FileManager:
    """Gerenciador de arquivos e diretórios do sistema"""

    # Subdiretórios criados dentro do diretório de saída
    DIRETORIOS = [
        'checkpoints',
        'logs',
        'panels',
    ]

    @staticmethod
    def criar_diretorios(out_dir: str, silent: bool = False):
        """
        Cria o diretório de saída e seus subdiretórios se não existirem.

        Args:
            out_dir: Diretório de saída do pré-treinamento
            silent: Se True, não exibe mensagens informativas
        """
        for diretorio in FileManager.DIRETORIOS:
            caminho = os.path.join(out_dir, diretorio)
            if not os.path.exists(caminho):
                os.makedirs(caminho, exist_ok=True)
                if not silent:
                    print(f"✓ Diretório criado: {caminho}/")

    @staticmethod
    def gerar_timestamp() -> str:
        """
        Gera timestamp no formato YYYYMMDD_HHMMSS.

        Returns:
            String com timestamp formatado (ex: "20240115_143022")
        """
        return datetime.now().strftime("%Y%m%d_%H%M%S")

    @staticmethod
    def gerar_nome_arquivo(prefixo: str, step: Optional[int] = None, extensao: str = '',
                           timestamp: Optional[str] = None) -> str:
        """
        Gera nome padronizado de arquivo.

        Formato: {prefixo}[_{timestamp}][_step{step:08d}].{extensao}

        Example:
            >>> FileManager.gerar_nome_arquivo('ckpt', step=120, extensao='nmck')
            'ckpt_step00000120.nmck'
        """
        partes = [prefixo]
        if timestamp:
            partes.append(timestamp)
        if step is not None:
            partes.append(f"step{step:08d}")
        nome_base = '_'.join(partes)
        if extensao:
            return f"{nome_base}.{extensao}"
        return nome_base

    @staticmethod
    def salvar_atomico(caminho: str, dados: bytes):
        """
        Grava bytes num arquivo temporário do mesmo diretório e o renomeia para `caminho`.

        Um leitor concorrente vê o arquivo antigo ou o novo, nunca um arquivo parcial.
        """
        diretorio = os.path.dirname(os.path.abspath(caminho))
        os.makedirs(diretorio, exist_ok=True)
        descritor, temporario = tempfile.mkstemp(dir=diretorio, prefix='.tmp_', suffix=os.path.basename(caminho))
        try:
            with os.fdopen(descritor, 'wb') as f:
                f.write(dados)
                f.flush()
                os.fsync(f.fileno())
            os.replace(temporario, caminho)
        except BaseException:
            if os.path.exists(temporario):
                os.remove(temporario)
            raise

    @staticmethod
    def salvar_log(dados: Dict[str, Any], caminho: str, silent: bool = False):
        """
        Salva log JSON formatado.

        Args:
            dados: Dicionário com dados do log
            caminho: Caminho completo do arquivo
            silent: Se True, não exibe mensagens informativas
        """
        conteudo = json.dumps(dados, indent=2, ensure_ascii=False).encode('utf-8')
        FileManager.salvar_atomico(caminho, conteudo)

        if not silent:
            print(f"✓ Log salvo: {caminho}")
