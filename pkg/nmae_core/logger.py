"""
Módulo de logging estruturado para o nmae-cli.

Este módulo gerencia o log JSON de cada pré-treinamento (configuração,
política, métricas finais e metadados do sistema) e o registro de métricas
por passo em formato JSON Lines.
"""

import json
import os
import platform
import sys
from dataclasses import dataclass, asdict, field
from typing import Any, Dict, List, Optional

from . import __version__
from .config import Config
from .file_manager import FileManager


@dataclass
class RegistroMetricas:
    """
    Métricas de um passo de otimização.

    Attributes:
        step: Passo concluído
        images_seen: Imagens processadas até o passo
        loss: Perda média do batch
        lr: Taxa de aprendizado usada no passo
        mask_ratio: Razão de mascaramento média dos pares do batch
        cross_fraction: Fração média de pixels CROSS do batch
        policy: Política de pesos
    """
    step: int
    images_seen: int
    loss: float
    lr: float
    mask_ratio: float
    cross_fraction: float
    policy: str

    def para_dict(self) -> Dict[str, Any]:
        return asdict(self)


class ArquivoMetricas:
    """Anexa registros de métricas a um arquivo JSON Lines (um objeto por linha)."""

    def __init__(self, caminho: str, truncar: bool = False):
        self.caminho = caminho
        diretorio = os.path.dirname(caminho)
        if diretorio:
            os.makedirs(diretorio, exist_ok=True)
        if truncar and os.path.exists(caminho):
            os.remove(caminho)

    def anexar(self, registro: RegistroMetricas):
        with open(self.caminho, 'a', encoding='utf-8') as f:
            f.write(json.dumps(registro.para_dict(), ensure_ascii=False) + '\n')

    def ler(self) -> List[RegistroMetricas]:
        """Lê todos os registros do arquivo (vazio se não existir)."""
        if not os.path.exists(self.caminho):
            return []
        registros = []
        with open(self.caminho, 'r', encoding='utf-8') as f:
            for linha in f:
                linha = linha.strip()
                if linha:
                    registros.append(RegistroMetricas(**json.loads(linha)))
        return registros

    def truncar_apos(self, step: int):
        """Remove registros posteriores a `step` (retomada a partir de checkpoint)."""
        mantidos = [r for r in self.ler() if r.step <= step]
        conteudo = ''.join(json.dumps(r.para_dict(), ensure_ascii=False) + '\n' for r in mantidos)
        FileManager.salvar_atomico(self.caminho, conteudo.encode('utf-8'))


@dataclass
class LogTreino:
    """
    Estrutura de log de um pré-treinamento.

    Attributes:
        timestamp: Timestamp no formato YYYYMMDD_HHMMSS
        config: Configuração completa usada
        seed: Semente
        policy: Política de pesos
        pairing: 'neighbors' ou 'single'
        steps: Passos concluídos
        images_seen: Imagens processadas
        metricas_finais: Perda média dos primeiros e últimos passos, entre outras
        checkpoint: Caminho do checkpoint final
        metadados: Metadados do sistema
    """
    timestamp: str
    config: Dict[str, Any]
    seed: int
    policy: str
    pairing: str
    steps: int
    images_seen: int
    metricas_finais: Dict[str, Any] = field(default_factory=dict)
    checkpoint: Optional[str] = None
    metadados: Dict[str, Any] = field(default_factory=dict)

    def para_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def salvar(self, caminho: str):
        """
        Salva log em arquivo JSON formatado (indentação de 2 espaços).

        Raises:
            IOError: Se houver erro ao salvar o arquivo
        """
        try:
            FileManager.salvar_log(self.para_dict(), caminho, silent=True)
        except OSError as e:
            raise IOError(f"Erro ao salvar log em {caminho}: {e}")


def criar_log_treino(config: Config, timestamp: str, steps: int, images_seen: int,
                     registros: List[RegistroMetricas], checkpoint: Optional[str] = None) -> LogTreino:
    """
    Monta o LogTreino a partir da configuração e dos registros de métricas.

    As métricas finais resumem a perda média dos 10 primeiros e dos 10
    últimos passos registrados.
    """
    metricas = {}
    if registros:
        primeiros = [r.loss for r in registros[:10]]
        ultimos = [r.loss for r in registros[-10:]]
        metricas = {
            'loss_inicial_media': sum(primeiros) / len(primeiros),
            'loss_final_media': sum(ultimos) / len(ultimos),
            'loss_final': registros[-1].loss,
            'mask_ratio_media': sum(r.mask_ratio for r in registros) / len(registros),
            'cross_fraction_media': sum(r.cross_fraction for r in registros) / len(registros),
        }

    return LogTreino(
        timestamp=timestamp,
        config=config.para_dict(),
        seed=config.train.seed,
        policy=config.loss.policy,
        pairing=config.data.pairing,
        steps=steps,
        images_seen=images_seen,
        metricas_finais=metricas,
        checkpoint=checkpoint,
        metadados=obter_metadados(),
    )


def obter_metadados() -> Dict[str, str]:
    """
    Obtém metadados do sistema.

    Example:
        >>> obter_metadados()['sistema_operacional']
        'Linux'
    """
    import numpy
    import torch

    versao_python = f"{sys.version_info.major}.{sys.version_info.minor}.{sys.version_info.micro}"

    return {
        'versao_python': versao_python,
        'sistema_operacional': platform.system(),
        'versao_nmae_cli': __version__,
        'versao_numpy': numpy.__version__,
        'versao_torch': torch.__version__,
        'threads_torch': str(torch.get_num_threads()),
    }
