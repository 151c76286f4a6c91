"""
Módulo de visibilidade e perda ponderada.

Este módulo é responsável por:
- Construir as transformações afins entre pixels de cada imagem e o referencial comum
- Encontrar o pixel correspondente de um pixel na imagem vizinha
- Classificar cada pixel como visível na própria imagem (SELF), visível pela
  vizinha (CROSS) ou não visível (NOT)
- Calcular os pesos da perda (fora do grafo de gradiente) e a MSE ponderada
"""

from dataclasses import dataclass
from enum import IntEnum
from typing import Dict, Optional, Tuple

import numpy as np
import torch

from .masking import PatchMask
from .relpos_embedding import NormalizedBBox
from .validation import GeometryError, ValidationError


EPS_DENOMINADOR = 1e-8

# (peso SELF, peso CROSS, peso NOT); None = peso limitado pela cópia da vizinha
WEIGHT_POLICIES: Dict[str, Tuple[float, Optional[float], float]] = {
    'ours': (0.0, None, 1.0),
    'full_cross': (0.0, 1.0, 1.0),
    'no_cross': (0.0, 0.0, 1.0),
    'full_all': (1.0, 1.0, 1.0),
}


class Visibilidade(IntEnum):
    """Categoria de visibilidade de um pixel."""
    SELF = 0
    CROSS = 1
    NOT = 2


@dataclass(frozen=True)
class FrameTransform:
    """
    Transformações afins entre pixels (u=coluna, v=linha, 1) e o referencial comum.

    Attributes:
        to_shared: 3×3, pixels -> referencial comum
        from_shared: 3×3, referencial comum -> pixels
        nb: Retângulo normalizado da imagem
        size: (H', W') da imagem
        espelhado: Se a imagem foi invertida horizontalmente
    """
    to_shared: np.ndarray
    from_shared: np.ndarray
    nb: NormalizedBBox
    size: Tuple[int, int]
    espelhado: bool = False

    @property
    def borda_esquerda(self) -> float:
        """Longitude normalizada da coluna u = 0."""
        return self.nb.right if self.espelhado else self.nb.left

    @property
    def borda_direita(self) -> float:
        """Longitude normalizada da coluna u = W'."""
        return self.nb.left if self.espelhado else self.nb.right


@dataclass(frozen=True)
class VisibilityMap:
    """
    Classificação de cada pixel da imagem i.

    Attributes:
        category: Grade H'×W' com valores de Visibilidade
        correspondence: Grade H'×W'×2 com (u, v) na imagem vizinha; NaN fora de CROSS
    """
    category: np.ndarray
    correspondence: np.ndarray

    def contagens(self) -> Dict[str, int]:
        return {v.name: int(np.count_nonzero(self.category == v)) for v in Visibilidade}


@dataclass(frozen=True)
class LossWeightMap:
    """
    Pesos da perda por pixel, constantes para o gradiente.

    Attributes:
        weights: Tensor H'×W' em [0, 1]
    """
    weights: torch.Tensor


def frame_transform(nb: NormalizedBBox, size: Tuple[int, int], espelhado: bool = False) -> FrameTransform:
    """
    Monta as matrizes pixel -> referencial comum e sua inversa.

    Args:
        nb: Retângulo normalizado da imagem
        size: (H', W')
        espelhado: Se a coluna u = 0 corresponde à borda direita

    Raises:
        GeometryError: Se o retângulo tiver largura ou altura nula
    """
    H, W = size
    if H < 1 or W < 1:
        raise ValidationError(f"Tamanho de imagem inválido: {size}")
    if not nb.right > nb.left or not nb.top > nb.bottom:
        raise GeometryError(f"Retângulo normalizado degenerado: {nb}")

    esquerda, direita = (nb.right, nb.left) if espelhado else (nb.left, nb.right)

    to_shared = np.array([
        [(direita - esquerda) / W, 0.0, esquerda],
        [0.0, (nb.bottom - nb.top) / H, nb.top],
        [0.0, 0.0, 1.0],
    ])
    from_shared = np.array([
        [W / (direita - esquerda), 0.0, W * esquerda / (esquerda - direita)],
        [0.0, H / (nb.bottom - nb.top), H * nb.top / (nb.top - nb.bottom)],
        [0.0, 0.0, 1.0],
    ])
    return FrameTransform(to_shared=to_shared, from_shared=from_shared, nb=nb,
                          size=(int(H), int(W)), espelhado=espelhado)


def compor(t_i: FrameTransform, t_j: FrameTransform) -> Tuple[float, float, float, float]:
    """
    Coeficientes de pixels de i -> pixels de j: u_j = a_u·u + b_u, v_j = a_v·v + b_v.

    Forma fechada de from_shared_j · to_shared_i; quando os dois referenciais
    coincidem o resultado é exatamente a identidade.
    """
    H_i, W_i = t_i.size
    H_j, W_j = t_j.size
    esq_i, dir_i = t_i.borda_esquerda, t_i.borda_direita
    esq_j, dir_j = t_j.borda_esquerda, t_j.borda_direita

    a_u = (dir_i - esq_i) / (dir_j - esq_j) * W_j / W_i
    b_u = W_j * (esq_i - esq_j) / (dir_j - esq_j)
    a_v = (t_i.nb.bottom - t_i.nb.top) / (t_j.nb.bottom - t_j.nb.top) * H_j / H_i
    b_v = H_j * (t_i.nb.top - t_j.nb.top) / (t_j.nb.bottom - t_j.nb.top)
    return a_u, b_u, a_v, b_v


def correspond(p: Tuple[float, float], t_i: FrameTransform, t_j: FrameTransform) -> Optional[Tuple[float, float]]:
    """
    Pixel correspondente na imagem j de um ponto p = (u, v) da imagem i.

    Returns:
        (u_j, v_j), ou None (fora dos limites [0, W') × [0, H') da imagem j)
    """
    a_u, b_u, a_v, b_v = compor(t_i, t_j)
    u_j = a_u * p[0] + b_u
    v_j = a_v * p[1] + b_v
    H_j, W_j = t_j.size
    if 0.0 <= u_j < W_j and 0.0 <= v_j < H_j:
        return (u_j, v_j)
    return None


def corresponder_centros(t_i: FrameTransform, t_j: FrameTransform) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Correspondência dos centros de todos os pixels da imagem i.

    Returns:
        (u_j, v_j, dentro): grades H'×W'; `dentro` indica correspondência nos limites de j
    """
    H_i, W_i = t_i.size
    H_j, W_j = t_j.size
    a_u, b_u, a_v, b_v = compor(t_i, t_j)

    v, u = np.meshgrid(np.arange(H_i) + 0.5, np.arange(W_i) + 0.5, indexing='ij')
    u_j = a_u * u + b_u
    v_j = a_v * v + b_v
    dentro = (u_j >= 0.0) & (u_j < W_j) & (v_j >= 0.0) & (v_j < H_j)
    return u_j, v_j, dentro


def _mascara_por_pixel(mask: PatchMask, size: Tuple[int, int], patch_size: int) -> np.ndarray:
    H, W = size
    linhas, colunas = mask.grid
    if (linhas * patch_size, colunas * patch_size) != (H, W):
        raise ValidationError(
            f"Máscara {mask.grid} com patch {patch_size} não cobre imagem {H}×{W}"
        )
    return np.repeat(np.repeat(mask.mask, patch_size, axis=0), patch_size, axis=1)


def classify_pixels(mask_i: PatchMask, mask_j: Optional[PatchMask], t_i: FrameTransform,
                    t_j: Optional[FrameTransform], patch_size: int) -> VisibilityMap:
    """
    Classifica os pixels da imagem i em SELF, CROSS ou NOT.

    SELF: o patch do próprio pixel está visível. CROSS: o centro do pixel,
    levado à imagem j, cai dentro dela e num patch visível de j (o patch que
    contém o ponto). NOT: demais pixels. Sem vizinha (`mask_j`/`t_j` None)
    não há pixels CROSS.
    """
    mascarado_i = _mascara_por_pixel(mask_i, t_i.size, patch_size)
    categoria = np.full(t_i.size, int(Visibilidade.NOT), dtype=np.int8)
    categoria[~mascarado_i] = int(Visibilidade.SELF)
    correspondencia = np.full(t_i.size + (2,), np.nan)

    if mask_j is None or t_j is None:
        return VisibilityMap(category=categoria, correspondence=correspondencia)

    u_j, v_j, dentro = corresponder_centros(t_i, t_j)
    H_j, W_j = t_j.size
    linha_patch = np.clip(np.floor(np.where(dentro, v_j, 0.0) / patch_size).astype(int), 0, H_j // patch_size - 1)
    coluna_patch = np.clip(np.floor(np.where(dentro, u_j, 0.0) / patch_size).astype(int), 0, W_j // patch_size - 1)
    visivel_em_j = dentro & ~mask_j.mask[linha_patch, coluna_patch]

    cruzado = mascarado_i & visivel_em_j
    categoria[cruzado] = int(Visibilidade.CROSS)
    correspondencia[cruzado, 0] = u_j[cruzado]
    correspondencia[cruzado, 1] = v_j[cruzado]
    return VisibilityMap(category=categoria, correspondence=correspondencia)


def cross_fraction(vis: VisibilityMap) -> float:
    """Fração dos pixels classificados como CROSS."""
    return float(np.mean(vis.category == int(Visibilidade.CROSS)))


def _destacar(pesos: torch.Tensor) -> torch.Tensor:
    return pesos.detach()


def loss_weights(vis: VisibilityMap, img_i: torch.Tensor, img_j: Optional[torch.Tensor],
                 recon_i: torch.Tensor, politica: str = 'ours') -> LossWeightMap:
    """
    Pesos da perda por pixel da imagem i.

    SELF e NOT recebem os pesos constantes da política. Em CROSS, na política
    'ours', o peso é min(MSE(vizinha no ponto correspondente, alvo) /
    MSE(reconstrução, alvo), 1), com as MSEs tomadas como média nos canais, o
    denominador limitado inferiormente por 1e-8 e o pixel vizinho obtido por
    vizinho mais próximo. O resultado não participa do gradiente.

    Args:
        vis: Classificação dos pixels de i
        img_i, img_j: Alvos H'×W'×C (no espaço usado para comparar)
        recon_i: Reconstrução H'×W'×C da imagem i
        politica: Uma de WEIGHT_POLICIES
    """
    if politica not in WEIGHT_POLICIES:
        raise ValidationError(
            f"Política '{politica}' inválida. Deve ser uma de: {', '.join(WEIGHT_POLICIES)}"
        )
    if img_i.shape != recon_i.shape:
        raise ValidationError(f"Formas incompatíveis: alvo {tuple(img_i.shape)}, reconstrução {tuple(recon_i.shape)}")

    peso_self, peso_cross, peso_not = WEIGHT_POLICIES[politica]
    categoria = torch.from_numpy(vis.category.astype(np.int64)).to(img_i.device)

    pesos = torch.zeros(categoria.shape, dtype=recon_i.dtype, device=recon_i.device)
    pesos = torch.where(categoria == int(Visibilidade.SELF), torch.full_like(pesos, peso_self), pesos)
    pesos = torch.where(categoria == int(Visibilidade.NOT), torch.full_like(pesos, peso_not), pesos)

    cruzado = vis.category == int(Visibilidade.CROSS)
    if cruzado.any():
        if peso_cross is not None:
            pesos = torch.where(categoria == int(Visibilidade.CROSS), torch.full_like(pesos, peso_cross), pesos)
        else:
            if img_j is None:
                raise ValidationError("Pixels CROSS exigem a imagem vizinha")
            linhas, colunas = np.nonzero(cruzado)
            H_j, W_j = img_j.shape[:2]
            u_j = np.clip(np.floor(vis.correspondence[linhas, colunas, 0]).astype(np.int64), 0, W_j - 1)
            v_j = np.clip(np.floor(vis.correspondence[linhas, colunas, 1]).astype(np.int64), 0, H_j - 1)

            l = torch.from_numpy(linhas)
            c = torch.from_numpy(colunas)
            alvo = img_i[l, c]
            numerador = ((img_j[torch.from_numpy(v_j), torch.from_numpy(u_j)] - alvo) ** 2).mean(dim=-1)
            denominador = ((recon_i[l, c] - alvo) ** 2).mean(dim=-1).clamp_min(EPS_DENOMINADOR)
            razao = torch.minimum(numerador / denominador, torch.ones_like(numerador))

            pesos = pesos.index_put((l, c), razao.to(pesos.dtype))

    return LossWeightMap(weights=_destacar(pesos))


def loss_target(image: torch.Tensor, patch_size: int, norm_pix: bool) -> torch.Tensor:
    """
    Alvo da reconstrução no espaço da perda.

    Com `norm_pix` cada patch é normalizado pela própria média e variância
    (sobre pixels e canais), como no MAE; caso contrário retorna a imagem.
    """
    if not norm_pix:
        return image

    from .toy_model import patchify, unpatchify

    patches = patchify(image, patch_size)
    media = patches.mean(dim=-1, keepdim=True)
    variancia = patches.var(dim=-1, keepdim=True)
    normalizado = (patches - media) / (variancia + 1.0e-6) ** 0.5
    return unpatchify(normalizado, patch_size, tuple(image.shape))


def weighted_recon_loss(recon_i: torch.Tensor, recon_j: Optional[torch.Tensor],
                        img_i: torch.Tensor, img_j: Optional[torch.Tensor],
                        weights_i: LossWeightMap, weights_j: Optional[LossWeightMap],
                        norm_pix: bool = False, patch_size: Optional[int] = None) -> torch.Tensor:
    """
    MSE ponderada por pixel das duas imagens, normalizada pela soma dos pesos.

    loss = Σ_p w(p)·‖recon(p) − alvo(p)‖²/C / Σ_p w(p). Soma de pesos nula
    resulta em perda 0. Com `norm_pix` os alvos são normalizados por patch
    antes da comparação (exige `patch_size`). Argumentos da imagem j podem
    ser None (entrada de imagem única).
    """
    termos = [(recon_i, img_i, weights_i)]
    if recon_j is not None:
        if img_j is None or weights_j is None:
            raise ValidationError("Reconstrução da imagem j exige alvo e pesos da imagem j")
        termos.append((recon_j, img_j, weights_j))

    soma = recon_i.new_zeros(())
    soma_pesos = recon_i.new_zeros(())
    for recon, alvo, pesos in termos:
        if recon.shape != alvo.shape or tuple(pesos.weights.shape) != tuple(recon.shape[:2]):
            raise ValidationError(
                f"Formas incompatíveis: reconstrução {tuple(recon.shape)}, alvo {tuple(alvo.shape)}, "
                f"pesos {tuple(pesos.weights.shape)}"
            )
        if norm_pix:
            if patch_size is None:
                raise ValidationError("norm_pix exige patch_size")
            alvo = loss_target(alvo, patch_size, True)
        erro = ((recon - alvo) ** 2).mean(dim=-1)
        w = pesos.weights.to(recon.dtype)
        soma = soma + (w * erro).sum()
        soma_pesos = soma_pesos + w.sum()

    if float(soma_pesos) == 0.0:
        return soma * 0.0
    return soma / soma_pesos
