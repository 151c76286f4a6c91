"""
Módulo de visualização das reconstruções.

Cada imagem do par gera uma linha de 5 painéis: imagem, imagem mascarada,
predição, pixels visíveis pela vizinha (CROSS) e peso da perda.
"""

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
import torch
from PIL import Image

from .augmentation import AugmentedPair
from .masking import PatchMask
from .toy_model import ResultadoPerda, ToyMAE, denormalizar_predicao, forward_loss
from .visibility_loss import Visibilidade


PAINEIS = ('pair', 'mask', 'prediction', 'cross', 'weight')
CINZA_MASCARA = 0.5
MARGEM_PX = 2


@dataclass
class Painel:
    """Figura montada e os resultados usados para desenhá-la."""
    imagem: Image.Image
    resultado: ResultadoPerda
    linhas: List[List[np.ndarray]]


def mascarar_imagem(pixels: np.ndarray, mask: PatchMask, patch_size: int) -> np.ndarray:
    """Substitui os patches mascarados por cinza."""
    mascarado = np.repeat(np.repeat(mask.mask, patch_size, axis=0), patch_size, axis=1)
    saida = np.array(pixels, dtype=np.float64, copy=True)
    saida[mascarado] = CINZA_MASCARA
    return saida


def _para_rgb(painel: np.ndarray) -> np.ndarray:
    if painel.ndim == 2:
        painel = np.repeat(painel[:, :, None], 3, axis=2)
    return np.clip(painel, 0.0, 1.0)


def _para_uint8(painel: np.ndarray) -> np.ndarray:
    return np.round(_para_rgb(painel) * 255.0).astype(np.uint8)


def paineis_da_vista(pixels: np.ndarray, mask: PatchMask, recon: torch.Tensor, resultado: ResultadoPerda,
                     k: int, patch_size: int, norm_pix: bool) -> List[np.ndarray]:
    """Os 5 painéis de uma imagem do par, como arrays H×W×3 em [0, 1]."""
    imagem = torch.from_numpy(np.ascontiguousarray(pixels)).to(recon.dtype)
    predicao = denormalizar_predicao(recon, imagem, patch_size) if norm_pix else recon
    predicao = predicao.detach().cpu().numpy()

    mascarado = np.repeat(np.repeat(mask.mask, patch_size, axis=0), patch_size, axis=1)
    composta = np.where(mascarado[:, :, None], predicao, pixels)

    cruzado = (resultado.visibilidade[k].category == int(Visibilidade.CROSS)).astype(np.float64)
    peso = resultado.pesos[k].weights.detach().cpu().numpy().astype(np.float64)

    return [
        _para_rgb(pixels),
        _para_rgb(mascarar_imagem(pixels, mask, patch_size)),
        _para_rgb(composta),
        _para_rgb(cruzado),
        _para_rgb(peso),
    ]


def montar_figura(linhas: Sequence[Sequence[np.ndarray]], escala: int = 4) -> Image.Image:
    """Compõe uma grade de painéis (linhas × 5) com margem branca, ampliada por `escala`."""
    altura, largura = linhas[0][0].shape[:2]
    altura, largura = altura * escala, largura * escala
    n_colunas = max(len(linha) for linha in linhas)
    figura = Image.new(
        'RGB',
        (n_colunas * largura + (n_colunas + 1) * MARGEM_PX, len(linhas) * altura + (len(linhas) + 1) * MARGEM_PX),
        color=(255, 255, 255),
    )
    for r, linha in enumerate(linhas):
        for c, painel in enumerate(linha):
            bloco = Image.fromarray(_para_uint8(painel)).resize((largura, altura), resample=Image.NEAREST)
            figura.paste(bloco, (MARGEM_PX + c * (largura + MARGEM_PX), MARGEM_PX + r * (altura + MARGEM_PX)))
    return figura


def render_painel(model: ToyMAE, pair: AugmentedPair, masks: Tuple[PatchMask, PatchMask],
                  policy: str = 'ours', norm_pix: bool = True, weight_space: str = 'loss',
                  escala: int = 4) -> Painel:
    """
    Executa o modelo sobre o par e monta a figura de 2 linhas × 5 painéis.

    A predição mostra os pixels originais nos patches visíveis e a
    reconstrução (no espaço de pixels) nos mascarados.
    """
    with torch.no_grad():
        resultado = forward_loss(model, pair, masks, policy, norm_pix=norm_pix, weight_space=weight_space)

    linhas = [
        paineis_da_vista(img.pixels, mascara, recon, resultado, k, model.cfg.patch_size, norm_pix)
        for k, (img, mascara, recon) in enumerate(zip((pair.img_i, pair.img_j), masks, resultado.recons))
    ]
    return Painel(imagem=montar_figura(linhas, escala), resultado=resultado, linhas=linhas)


def salvar_painel(painel: Painel, caminho: str):
    """Salva a figura como PNG."""
    painel.imagem.save(caminho, format='PNG')
