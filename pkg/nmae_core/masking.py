"""
Módulo de mascaramento dinâmico.

A razão de mascaramento de cada par é interpolada entre m1 e m2 pela IoU
dos retângulos após a aumentação; cada imagem recebe uma máscara aleatória
independente com essa mesma razão.
"""

import math
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from .validation import ValidationError, validar_intervalo


# Linhas da tabela de ablação da razão de mascaramento: (m1, m2)
MASK_PRESETS: Dict[str, Tuple[float, float]] = {
    'const-0.75': (0.75, 0.75),
    '0.75-0.80': (0.75, 0.80),
    '0.75-0.85': (0.75, 0.85),
    '0.75-0.90': (0.75, 0.90),
    'const-0.80': (0.80, 0.80),
    '0.80-0.85': (0.80, 0.85),
}


@dataclass(frozen=True)
class PatchMask:
    """
    Máscara binária por patch (True = mascarado).

    Attributes:
        mask: Grade linhas×colunas de booleanos
        keep_count: Número de patches visíveis
    """
    mask: np.ndarray
    keep_count: int

    @property
    def grid(self) -> Tuple[int, int]:
        return tuple(self.mask.shape)

    @property
    def masked_count(self) -> int:
        return int(self.mask.size - self.keep_count)

    def indices_visiveis(self) -> np.ndarray:
        """Índices (ordem linha a linha) dos patches visíveis, em ordem crescente."""
        return np.flatnonzero(~self.mask.reshape(-1))

    def indices_mascarados(self) -> np.ndarray:
        return np.flatnonzero(self.mask.reshape(-1))


def dynamic_mask_ratio(iou: float, cfg) -> float:
    """
    Razão de mascaramento do par: m1 + IoU·(m2 − m1).

    Calculada como (1 − IoU)·m1 + IoU·m2, exata nos extremos IoU = 0 e IoU = 1.

    Args:
        iou: IoU pós-aumentação em [0, 1]
        cfg: Seção de máscara (mask_m1, mask_m2)

    Example:
        >>> dynamic_mask_ratio(0.5, MaskConfig(0.75, 0.85))
        0.8
    """
    validar_intervalo(iou, 'iou', 0.0, 1.0)
    ratio = (1.0 - iou) * cfg.mask_m1 + iou * cfg.mask_m2
    return min(max(ratio, cfg.mask_m1), cfg.mask_m2)


def contar_mascarados(n: int, ratio: float) -> int:
    """
    Número de patches mascarados: arredondamento meio-para-cima de n·ratio.

    Para 0 < ratio < 1 e n >= 2 o resultado fica em [1, n − 1].
    """
    k = int(math.floor(n * ratio + 0.5))
    if 0.0 < ratio < 1.0 and n >= 2:
        k = min(max(k, 1), n - 1)
    return min(max(k, 0), n)


def sample_mask(grid: Tuple[int, int], ratio: float, rng: np.random.Generator) -> PatchMask:
    """
    Mascara exatamente round(linhas·colunas·ratio) patches sem reposição.

    Raises:
        ValidationError: Se ratio não estiver em [0, 1) ou a grade for vazia
    """
    linhas, colunas = grid
    n = linhas * colunas
    if n < 1:
        raise ValidationError(f"Grade deve ter ao menos um patch, recebido: {grid}")
    if not 0.0 <= ratio < 1.0:
        raise ValidationError(f"Razão de mascaramento deve estar em [0, 1), recebido: {ratio}")

    k = contar_mascarados(n, ratio)
    plano = np.zeros(n, dtype=bool)
    if k:
        plano[rng.choice(n, size=k, replace=False)] = True
    return PatchMask(mask=plano.reshape(linhas, colunas), keep_count=n - k)


def mask_pair(pair, cfg, rng: np.random.Generator, grid: Tuple[int, int]) -> Tuple[PatchMask, PatchMask, float]:
    """
    Sorteia as máscaras das duas imagens de um par.

    A razão vem da IoU pós-aumentação do par; as duas máscaras usam a mesma
    razão e sub-geradores independentes derivados de `rng` (o primeiro para
    a imagem i, o segundo para a imagem j).

    Returns:
        (máscara_i, máscara_j, razão)
    """
    ratio = dynamic_mask_ratio(pair.iou, cfg)
    semente_i, semente_j = rng.integers(0, 2 ** 63 - 1, size=2)
    mascara_i = sample_mask(grid, ratio, np.random.default_rng(int(semente_i)))
    mascara_j = sample_mask(grid, ratio, np.random.default_rng(int(semente_j)))
    return mascara_i, mascara_j, ratio
