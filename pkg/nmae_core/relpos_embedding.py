"""
Módulo de embedding posicional relativo.

Normaliza os retângulos de um par de imagens num referencial comum [0, 1],
calcula os retângulos de cada patch e os codifica com senoides. Um embedding
aprendível por imagem (slot 0 ou 1) é somado para distinguir os tokens de
cada imagem do par.
"""

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
import torch

from .models import GeoBBox
from .validation import GeometryError, ValidationError, validar_inteiro_positivo


ESCALA_COORDENADAS_PADRAO = 100.0


@dataclass(frozen=True)
class NormalizedBBox:
    """
    Retângulo no referencial comum do par.

    top corresponde à maior latitude (top > bottom); left à menor longitude.
    """
    top: float
    bottom: float
    left: float
    right: float

    def validar(self) -> List[str]:
        """
        Valida os dados do retângulo normalizado.

        Returns:
            Lista de erros encontrados (vazia se válido)
        """
        erros = []
        if not 0.0 <= self.bottom < self.top <= 1.0:
            erros.append(f"Esperado 0 <= bottom < top <= 1, recebido bottom={self.bottom}, top={self.top}")
        if not 0.0 <= self.left < self.right <= 1.0:
            erros.append(f"Esperado 0 <= left < right <= 1, recebido left={self.left}, right={self.right}")
        return erros

    @property
    def area(self) -> float:
        return (self.top - self.bottom) * (self.right - self.left)

    @property
    def centro(self) -> Tuple[float, float]:
        """(x, y) = (longitude normalizada, latitude normalizada) do centro."""
        return ((self.left + self.right) / 2.0, (self.top + self.bottom) / 2.0)

    def como_array(self) -> np.ndarray:
        return np.array([self.top, self.bottom, self.left, self.right], dtype=np.float64)


def single_image_box() -> NormalizedBBox:
    """Retângulo constante de uma imagem isolada (ocupa todo o referencial)."""
    return NormalizedBBox(top=1.0, bottom=0.0, left=0.0, right=1.0)


def normalize_pair(bbox_i: GeoBBox, bbox_j: GeoBBox) -> Tuple[NormalizedBBox, NormalizedBBox]:
    """
    Normaliza os dois retângulos pelo mínimo e máximo de latitude e longitude do par.

    Raises:
        GeometryError: Se a união do par tiver extensão nula em algum eixo
    """
    phi_lo = min(bbox_i.phi_min, bbox_j.phi_min)
    phi_hi = max(bbox_i.phi_max, bbox_j.phi_max)
    lam_lo = min(bbox_i.lambda_min, bbox_j.lambda_min)
    lam_hi = max(bbox_i.lambda_max, bbox_j.lambda_max)

    extensao_phi = phi_hi - phi_lo
    extensao_lam = lam_hi - lam_lo
    if not extensao_phi > 0.0 or not extensao_lam > 0.0:
        raise GeometryError(
            f"União do par com extensão nula (latitude={extensao_phi}, longitude={extensao_lam})"
        )

    def normalizar(b: GeoBBox) -> NormalizedBBox:
        return NormalizedBBox(
            top=(b.phi_max - phi_lo) / extensao_phi,
            bottom=(b.phi_min - phi_lo) / extensao_phi,
            left=(b.lambda_min - lam_lo) / extensao_lam,
            right=(b.lambda_max - lam_lo) / extensao_lam,
        )

    return normalizar(bbox_i), normalizar(bbox_j)


def patch_bboxes(nb: NormalizedBBox, grid: Tuple[int, int], espelhado: bool = False) -> List[NormalizedBBox]:
    """
    Divide o retângulo numa grade regular de patches, em ordem linha a linha.

    A linha 0 ocupa a faixa superior (maior latitude). Com `espelhado=True`
    (imagem invertida horizontalmente) a coluna 0 ocupa a faixa da direita.

    Args:
        nb: Retângulo normalizado da imagem
        grid: (linhas, colunas)
        espelhado: Se a imagem foi invertida horizontalmente

    Returns:
        linhas·colunas retângulos
    """
    linhas, colunas = grid
    validar_inteiro_positivo(linhas, 'grid.linhas')
    validar_inteiro_positivo(colunas, 'grid.colunas')

    # bordas calculadas diretamente para que patches vizinhos compartilhem a mesma aresta
    bordas_y = [nb.top + (nb.bottom - nb.top) * r / linhas for r in range(linhas + 1)]
    bordas_y[-1] = nb.bottom
    bordas_x = [nb.left + (nb.right - nb.left) * c / colunas for c in range(colunas + 1)]
    bordas_x[-1] = nb.right

    caixas = []
    for r in range(linhas):
        for c in range(colunas):
            k = colunas - 1 - c if espelhado else c
            caixas.append(NormalizedBBox(
                top=bordas_y[r],
                bottom=bordas_y[r + 1],
                left=bordas_x[k],
                right=bordas_x[k + 1],
            ))
    return caixas


def sinusoidal_embed(boxes: Sequence[NormalizedBBox], d: int,
                     escala: float = ESCALA_COORDENADAS_PADRAO) -> np.ndarray:
    """
    Codificação senoidal das 4 coordenadas de cada retângulo.

    Cada coordenada ocupa um bloco de d/4 valores com seno e cosseno
    intercalados nas frequências 1/10000^(2k/(d/4)); os blocos seguem a ordem
    (top, bottom, left, right). As coordenadas são multiplicadas por `escala`
    antes da codificação.

    Returns:
        Array N×d em float64

    Raises:
        ValidationError: Se d não for divisível por 4
    """
    if d < 4 or d % 4 != 0:
        raise ValidationError(f"Dimensão do embedding deve ser múltiplo positivo de 4, recebido: {d}")

    bloco = d // 4
    n_freq = (bloco + 1) // 2
    frequencias = 1.0 / 10000.0 ** (2.0 * np.arange(n_freq, dtype=np.float64) / bloco)

    coords = np.array([b.como_array() for b in boxes], dtype=np.float64).reshape(-1, 4) * escala
    fases = coords[:, :, None] * frequencias[None, None, :]  # N×4×F

    intercalado = np.empty((coords.shape[0], 4, 2 * n_freq), dtype=np.float64)
    intercalado[:, :, 0::2] = np.sin(fases)
    intercalado[:, :, 1::2] = np.cos(fases)

    return intercalado[:, :, :bloco].reshape(coords.shape[0], d)


def compose_positional(per_patch: torch.Tensor, image_slot: int, slot_table: torch.Tensor) -> torch.Tensor:
    """
    Soma o embedding aprendível da imagem a todas as linhas do embedding por patch.

    Args:
        per_patch: N×d
        image_slot: 0 ou 1
        slot_table: 2×d (parâmetro treinável)
    """
    if image_slot not in (0, 1):
        raise ValidationError(f"image_slot deve ser 0 ou 1, recebido: {image_slot}")
    if per_patch.shape[-1] != slot_table.shape[-1]:
        raise ValidationError(
            f"Dimensões incompatíveis: per_patch {tuple(per_patch.shape)}, slot_table {tuple(slot_table.shape)}"
        )
    return per_patch + slot_table[image_slot].unsqueeze(0)
