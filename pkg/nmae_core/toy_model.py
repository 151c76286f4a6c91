"""
Módulo do autoencoder mascarado de pequena escala.

Transformer no estilo MAE que processa uma ou duas vistas mascaradas: o
encoder recebe a concatenação dos patches visíveis das vistas (atenção
completa entre imagens) e o decoder preenche as posições mascaradas com um
token de máscara compartilhado antes de prever os pixels de cada patch.
"""

from dataclasses import dataclass
from functools import partial
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
from timm.models.vision_transformer import Block

from .augmentation import AugmentedPair
from .masking import PatchMask
from .relpos_embedding import (
    ESCALA_COORDENADAS_PADRAO,
    NormalizedBBox,
    compose_positional,
    patch_bboxes,
    single_image_box,
    sinusoidal_embed,
)
from .validation import ValidationError
from .visibility_loss import (
    LossWeightMap,
    VisibilityMap,
    classify_pixels,
    frame_transform,
    loss_target,
    loss_weights,
    weighted_recon_loss,
)


DTYPES = {'float64': torch.float64, 'float32': torch.float32}


def patchify(image: torch.Tensor, patch_size: int) -> torch.Tensor:
    """
    Divide uma imagem H×W×C em N×(p²·C) patches, linha a linha a partir do topo esquerdo.

    Raises:
        ValidationError: Se H ou W não forem múltiplos de patch_size
    """
    if image.dim() != 3:
        raise ValidationError(f"Imagem deve ser H×W×C, recebido: {tuple(image.shape)}")
    H, W, C = image.shape
    if H % patch_size or W % patch_size:
        raise ValidationError(f"Imagem {H}×{W} não é divisível em patches de {patch_size}")

    h, w = H // patch_size, W // patch_size
    x = image.reshape(h, patch_size, w, patch_size, C)
    x = torch.einsum('hpwqc->hwpqc', x)
    return x.reshape(h * w, patch_size * patch_size * C)


def unpatchify(patches: torch.Tensor, patch_size: int, shape: Tuple[int, int, int]) -> torch.Tensor:
    """Inverso exato de patchify para uma imagem de forma `shape` = (H, W, C)."""
    H, W, C = shape
    h, w = H // patch_size, W // patch_size
    if tuple(patches.shape) != (h * w, patch_size * patch_size * C):
        raise ValidationError(
            f"Patches {tuple(patches.shape)} incompatíveis com imagem {shape} e patch {patch_size}"
        )
    x = patches.reshape(h, w, patch_size, patch_size, C)
    x = torch.einsum('hwpqc->hpwqc', x)
    return x.reshape(H, W, C)


def denormalizar_predicao(recon: torch.Tensor, image: torch.Tensor, patch_size: int) -> torch.Tensor:
    """Leva uma predição no espaço normalizado por patch de volta ao espaço de pixels da imagem."""
    patches = patchify(image, patch_size)
    media = patches.mean(dim=-1, keepdim=True)
    desvio = (patches.var(dim=-1, keepdim=True) + 1.0e-6) ** 0.5
    return unpatchify(patchify(recon, patch_size) * desvio + media, patch_size, tuple(image.shape))


@dataclass
class MaskedView:
    """
    Uma imagem do par pronta para o modelo.

    Attributes:
        image: Tensor H'×W'×C
        mask: Máscara por patch
        nb: Retângulo no referencial comum
        slot: 0 para a imagem i, 1 para a imagem j
        espelhado: Se a imagem foi invertida horizontalmente
    """
    image: torch.Tensor
    mask: PatchMask
    nb: NormalizedBBox
    slot: int
    espelhado: bool = False


@dataclass
class TokenBatch:
    """
    Tokens codificados das vistas de um par.

    Attributes:
        tokens: K×enc_dim, K = soma dos patches visíveis das vistas
        origin: K×2 com (slot da imagem, índice do patch) de cada token
        views: Vistas de origem (retângulos, máscaras e imagens)
    """
    tokens: torch.Tensor
    origin: np.ndarray
    views: List[MaskedView]


@dataclass
class ResultadoPerda:
    """Saída de forward_loss."""
    loss: torch.Tensor
    recons: Tuple[torch.Tensor, ...]
    pesos: Tuple[LossWeightMap, ...]
    visibilidade: Tuple[VisibilityMap, ...]
    alvos: Tuple[torch.Tensor, ...]


class ToyMAE(nn.Module):
    """Autoencoder mascarado com embedding posicional relativo ao par."""

    def __init__(self, cfg, coord_scale: float = ESCALA_COORDENADAS_PADRAO):
        super().__init__()
        erros = cfg.validar()
        if erros:
            raise ValidationError('; '.join(erros))

        self.cfg = cfg
        self.coord_scale = coord_scale
        self.grid = (cfg.input_size // cfg.patch_size, cfg.input_size // cfg.patch_size)
        dim_patch = cfg.patch_size * cfg.patch_size * cfg.channels
        norm_layer = partial(nn.LayerNorm, eps=1e-6)

        # encoder
        self.patch_embed = nn.Linear(dim_patch, cfg.enc_dim, bias=True)
        self.enc_slot = nn.Parameter(torch.zeros(2, cfg.enc_dim))
        self.blocks = nn.ModuleList([
            Block(cfg.enc_dim, cfg.heads, cfg.mlp_ratio, qkv_bias=True, norm_layer=norm_layer)
            for _ in range(cfg.enc_depth)
        ])
        self.norm = norm_layer(cfg.enc_dim)

        # decoder
        self.decoder_embed = nn.Linear(cfg.enc_dim, cfg.dec_dim, bias=True)
        self.mask_token = nn.Parameter(torch.zeros(1, cfg.dec_dim))
        self.dec_slot = nn.Parameter(torch.zeros(2, cfg.dec_dim))
        self.decoder_blocks = nn.ModuleList([
            Block(cfg.dec_dim, cfg.heads, cfg.mlp_ratio, qkv_bias=True, norm_layer=norm_layer)
            for _ in range(cfg.dec_depth)
        ])
        self.decoder_norm = norm_layer(cfg.dec_dim)
        self.decoder_pred = nn.Linear(cfg.dec_dim, dim_patch, bias=True)

        self.initialize_weights()
        self.to(DTYPES[cfg.dtype])

    @property
    def dtype(self) -> torch.dtype:
        return DTYPES[self.cfg.dtype]

    def initialize_weights(self):
        torch.nn.init.normal_(self.enc_slot, std=0.02)
        torch.nn.init.normal_(self.dec_slot, std=0.02)
        torch.nn.init.normal_(self.mask_token, std=0.02)
        self.apply(self._init_weights)

    def _init_weights(self, m):
        if isinstance(m, nn.Linear):
            torch.nn.init.xavier_uniform_(m.weight)
            if m.bias is not None:
                nn.init.constant_(m.bias, 0)
        elif isinstance(m, nn.LayerNorm):
            nn.init.constant_(m.bias, 0)
            nn.init.constant_(m.weight, 1.0)

    def _posicional(self, view: MaskedView, dim: int) -> torch.Tensor:
        caixas = patch_bboxes(view.nb, self.grid, view.espelhado)
        return torch.from_numpy(sinusoidal_embed(caixas, dim, self.coord_scale)).to(self.dtype)

    def embutir(self, views: Sequence[MaskedView]) -> Tuple[torch.Tensor, np.ndarray]:
        """
        Projeta os patches visíveis e soma os embeddings posicionais e de imagem.

        Returns:
            (tokens K×enc_dim antes dos blocos, origem K×2)
        """
        tokens, origem = [], []
        for view in views:
            if view.mask.grid != self.grid:
                raise ValidationError(f"Máscara {view.mask.grid} incompatível com grade {self.grid}")
            visiveis = view.mask.indices_visiveis()
            indices = torch.from_numpy(visiveis)
            x = self.patch_embed(patchify(view.image.to(self.dtype), self.cfg.patch_size)[indices])
            pos = self._posicional(view, self.cfg.enc_dim)[indices]
            tokens.append(x + compose_positional(pos, view.slot, self.enc_slot))
            origem.append(np.stack([np.full(len(visiveis), view.slot), visiveis], axis=1))
        return torch.cat(tokens, dim=0), np.concatenate(origem, axis=0).astype(np.int64)

    def transformar(self, tokens: torch.Tensor) -> torch.Tensor:
        """Aplica os blocos do encoder com atenção completa sobre a sequência K×enc_dim."""
        x = tokens.unsqueeze(0)
        for blk in self.blocks:
            x = blk(x)
        return self.norm(x).squeeze(0)

    def encode(self, views: Sequence[MaskedView]) -> TokenBatch:
        tokens, origem = self.embutir(views)
        return TokenBatch(tokens=self.transformar(tokens), origin=origem, views=list(views))

    def decode(self, enc: TokenBatch) -> Tuple[torch.Tensor, ...]:
        """
        Reconstrói todas as vistas a partir dos tokens codificados.

        Posições mascaradas recebem o token de máscara; a sequência completa
        (N tokens por vista) passa pelos blocos do decoder.

        Returns:
            Uma reconstrução H'×W'×C por vista
        """
        x = self.decoder_embed(enc.tokens)
        n = self.grid[0] * self.grid[1]

        sequencias = []
        inicio = 0
        for view in enc.views:
            visiveis = torch.from_numpy(view.mask.indices_visiveis())
            fim = inicio + len(visiveis)
            seq = self.mask_token.repeat(n, 1).index_copy(0, visiveis, x[inicio:fim])
            pos = self._posicional(view, self.cfg.dec_dim)
            sequencias.append(seq + compose_positional(pos, view.slot, self.dec_slot))
            inicio = fim

        y = torch.cat(sequencias, dim=0).unsqueeze(0)
        for blk in self.decoder_blocks:
            y = blk(y)
        y = self.decoder_pred(self.decoder_norm(y)).squeeze(0)

        forma = (self.cfg.input_size, self.cfg.input_size, self.cfg.channels)
        return tuple(
            unpatchify(y[k * n:(k + 1) * n], self.cfg.patch_size, forma)
            for k in range(len(enc.views))
        )

    def forward(self, views: Sequence[MaskedView]) -> Tuple[torch.Tensor, ...]:
        return self.decode(self.encode(views))


def construir_modelo(cfg, seed: int, coord_scale: float = ESCALA_COORDENADAS_PADRAO) -> ToyMAE:
    """Cria o modelo com inicialização determinística sem alterar o estado global do torch."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return ToyMAE(cfg, coord_scale=coord_scale)


def montar_vistas(pair: AugmentedPair, masks: Sequence[PatchMask], dtype=torch.float64) -> List[MaskedView]:
    """
    Vistas do modelo a partir do par aumentado.

    Com uma única máscara a imagem i é tratada como entrada isolada: retângulo
    constante (0, 1, 0, 1) e slot 0.
    """
    if len(masks) not in (1, 2):
        raise ValidationError(f"Esperadas 1 ou 2 máscaras, recebido: {len(masks)}")

    def tensor(pixels: np.ndarray) -> torch.Tensor:
        return torch.from_numpy(np.ascontiguousarray(pixels)).to(dtype)

    if len(masks) == 1:
        return [MaskedView(image=tensor(pair.img_i.pixels), mask=masks[0], nb=single_image_box(), slot=0)]

    return [
        MaskedView(image=tensor(pair.img_i.pixels), mask=masks[0], nb=pair.nb_i, slot=0,
                   espelhado=pair.img_i.espelhado),
        MaskedView(image=tensor(pair.img_j.pixels), mask=masks[1], nb=pair.nb_j, slot=1,
                   espelhado=pair.img_j.espelhado),
    ]


def forward_loss(model: ToyMAE, pair: AugmentedPair, masks: Sequence[PatchMask], weights_policy: str = 'ours',
                 norm_pix: bool = True, weight_space: str = 'loss',
                 pesos_fixos: Optional[Sequence[LossWeightMap]] = None) -> ResultadoPerda:
    """
    Perda de reconstrução conjunta de um par.

    Codifica e decodifica as vistas, classifica a visibilidade de cada pixel,
    calcula os pesos (sem gradiente) e a MSE ponderada.

    Args:
        model: Modelo
        pair: Par aumentado
        masks: (máscara_i, máscara_j), ou só (máscara_i,) para entrada isolada
        weights_policy: Uma de WEIGHT_POLICIES
        norm_pix: Alvos normalizados por patch
        weight_space: 'loss' (pesos no espaço do alvo) ou 'raw' (pixels originais)
        pesos_fixos: Substitui os pesos calculados (usado na checagem por diferenças finitas)
    """
    if weight_space not in ('loss', 'raw'):
        raise ValidationError(f"weight_space '{weight_space}' inválido. Deve ser um de: loss, raw")

    p = model.cfg.patch_size
    views = montar_vistas(pair, masks, model.dtype)
    recons = model(views)

    alvos = tuple(loss_target(v.image, p, norm_pix) for v in views)
    frames = [frame_transform(v.nb, tuple(v.image.shape[:2]), v.espelhado) for v in views]

    visibilidade = []
    pesos = []
    for k, view in enumerate(views):
        outro = 1 - k if len(views) == 2 else None
        vis = classify_pixels(
            view.mask, views[outro].mask if outro is not None else None,
            frames[k], frames[outro] if outro is not None else None, p,
        )
        visibilidade.append(vis)

        if weight_space == 'loss':
            referencia, vizinha, recon = alvos[k], alvos[outro] if outro is not None else None, recons[k]
        else:
            referencia = view.image
            vizinha = views[outro].image if outro is not None else None
            recon = denormalizar_predicao(recons[k], view.image, p) if norm_pix else recons[k]
        pesos.append(loss_weights(vis, referencia, vizinha, recon, weights_policy))

    if pesos_fixos is not None:
        pesos = list(pesos_fixos)

    if len(views) == 2:
        loss = weighted_recon_loss(recons[0], recons[1], alvos[0], alvos[1], pesos[0], pesos[1])
    else:
        loss = weighted_recon_loss(recons[0], None, alvos[0], None, pesos[0], None)

    return ResultadoPerda(loss=loss, recons=recons, pesos=tuple(pesos),
                          visibilidade=tuple(visibilidade), alvos=alvos)
