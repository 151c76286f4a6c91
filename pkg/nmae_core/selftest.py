"""
Verificações de propriedades executadas por `nmae selftest`.

Cada verificação tem um nome estável, roda em segundos sobre dados
gerados em memória e devolve um ResultadoVerificacao. A falha de qualquer
uma faz o comando terminar com código 1 citando o nome.
"""

import time
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np
import torch

from .augmentation import AugmentedImage, AugmentedPair, CropParams
from .config import MaskConfig, ModelConfig
from .geo_index import build_index, build_index_bruto, iou
from .gradient_check import checar_gradientes, gradiente_analitico, maior_diferenca
from .masking import PatchMask, dynamic_mask_ratio, sample_mask
from .models import GeoBBox, ImageRecord
from .relpos_embedding import NormalizedBBox, normalize_pair
from .synthetic_world import oraculo_geolocalizacao
from .toy_model import construir_modelo, forward_loss
from .visibility_loss import (
    LossWeightMap,
    Visibilidade,
    classify_pixels,
    corresponder_centros,
    frame_transform,
    loss_weights,
)


AMOSTRAS_GRADIENTE = 6

@dataclass
class ResultadoVerificacao:
    """Resultado de uma verificação nomeada."""
    nome: str
    passou: bool
    detalhe: str
    segundos: float = 0.0


def bbox_aleatorio(rng: np.random.Generator, centro: Tuple[float, float] = (0.0, 0.0),
                   espalhamento: float = 1.0) -> GeoBBox:
    """Retângulo com centro perto de `centro` e lados em [0.2, 1.2]·espalhamento."""
    lat = centro[0] + rng.uniform(-espalhamento, espalhamento)
    lon = centro[1] + rng.uniform(-espalhamento, espalhamento)
    altura = rng.uniform(0.2, 1.2) * espalhamento
    largura = rng.uniform(0.2, 1.2) * espalhamento
    return GeoBBox(lat - altura / 2, lat + altura / 2, lon - largura / 2, lon + largura / 2)


def imagem_em_memoria(pixels: np.ndarray, bbox: GeoBBox, source_id: str) -> AugmentedImage:
    H, W = pixels.shape[:2]
    return AugmentedImage(pixels=pixels, bbox=bbox, source_id=source_id, crop=CropParams(0, 0, H, W))


def par_em_memoria(pixels_i: np.ndarray, pixels_j: np.ndarray, bbox_i: GeoBBox, bbox_j: GeoBBox) -> AugmentedPair:
    """Par pronto para o modelo sem passar pelo disco nem pela aumentação."""
    nb_i, nb_j = normalize_pair(bbox_i, bbox_j)
    return AugmentedPair(
        img_i=imagem_em_memoria(pixels_i, bbox_i, 'i'),
        img_j=imagem_em_memoria(pixels_j, bbox_j, 'j'),
        nb_i=nb_i, nb_j=nb_j, iou=iou(bbox_i, bbox_j),
    )


def classificar_bruto(mask_i: PatchMask, mask_j: PatchMask, nb_i: NormalizedBBox, nb_j: NormalizedBBox,
                      size: Tuple[int, int], patch_size: int) -> np.ndarray:
    """Classificação pixel a pixel pela geometria do referencial comum (oráculo)."""
    H, W = size
    categoria = np.empty((H, W), dtype=np.int8)
    for v in range(H):
        for u in range(W):
            if not mask_i.mask[v // patch_size, u // patch_size]:
                categoria[v, u] = Visibilidade.SELF
                continue
            x = nb_i.left + (u + 0.5) / W * (nb_i.right - nb_i.left)
            y = nb_i.top + (v + 0.5) / H * (nb_i.bottom - nb_i.top)
            u_j = (x - nb_j.left) / (nb_j.right - nb_j.left) * W
            v_j = (y - nb_j.top) / (nb_j.bottom - nb_j.top) * H
            dentro = 0.0 <= u_j < W and 0.0 <= v_j < H
            if dentro and not mask_j.mask[int(v_j) // patch_size, int(u_j) // patch_size]:
                categoria[v, u] = Visibilidade.CROSS
            else:
                categoria[v, u] = Visibilidade.NOT
    return categoria


def verificar_geometria(rng: np.random.Generator, n_pares: int = 200) -> Tuple[bool, str]:
    pior_inversa = 0.0
    pior_oraculo = 0.0
    for _ in range(n_pares):
        bbox_i = bbox_aleatorio(rng)
        bbox_j = bbox_aleatorio(rng, centro=((bbox_i.phi_min + bbox_i.phi_max) / 2,
                                             (bbox_i.lambda_min + bbox_i.lambda_max) / 2))
        size_i = (int(rng.integers(8, 65)), int(rng.integers(8, 65)))
        size_j = (int(rng.integers(8, 65)), int(rng.integers(8, 65)))
        nb_i, nb_j = normalize_pair(bbox_i, bbox_j)
        t_i = frame_transform(nb_i, size_i)
        t_j = frame_transform(nb_j, size_j)

        pontos = np.stack([rng.uniform(0, size_i[1], 20), rng.uniform(0, size_i[0], 20), np.ones(20)])
        volta = t_i.from_shared @ (t_i.to_shared @ pontos)
        pior_inversa = max(pior_inversa, float(np.abs(volta - pontos).max()))

        u_j, v_j, _ = corresponder_centros(t_i, t_j)
        u_o, v_o = oraculo_geolocalizacao(bbox_i, size_i, bbox_j, size_j)
        pior_oraculo = max(pior_oraculo, float(np.abs(u_j - u_o).max()), float(np.abs(v_j - v_o).max()))

    identico = frame_transform(NormalizedBBox(0.9, 0.1, 0.2, 0.7), (32, 32))
    u_j, v_j, _ = corresponder_centros(identico, identico)
    v, u = np.meshgrid(np.arange(32) + 0.5, np.arange(32) + 0.5, indexing='ij')
    identidade = bool(np.array_equal(u_j, u) and np.array_equal(v_j, v))

    passou = pior_inversa < 1e-10 and pior_oraculo < 0.51 and identidade
    return passou, (f"inversa={pior_inversa:.2e}, oráculo={pior_oraculo:.2e} px, "
                    f"identidade={'ok' if identidade else 'falhou'}")


def verificar_indice(rng: np.random.Generator, n_registros: int = 500) -> Tuple[bool, str]:
    registros = [
        ImageRecord(id=f"r{k:04d}", path='', bbox=bbox_aleatorio(rng, espalhamento=2.0), width_px=1, height_px=1)
        for k in range(n_registros)
    ]
    for alpha in (0.0, 0.1, 0.5):
        rapido = build_index(registros, alpha)
        bruto = build_index_bruto(registros, alpha)
        if rapido.table != bruto.table:
            return False, f"alpha={alpha}: índice difere da comparação de todos os pares"
        for a, vizinhos in rapido.table.items():
            if a in vizinhos or any(a not in rapido.table[b] for b in vizinhos):
                return False, f"alpha={alpha}: tabela não simétrica ou com auto-vizinho em '{a}'"
    return True, f"{n_registros} registros, alpha em (0.0, 0.1, 0.5)"


def verificar_razao_mascara(rng: np.random.Generator, n_pares: int = 10000) -> Tuple[bool, str]:
    cfg = MaskConfig(mask_m1=0.75, mask_m2=0.85)
    if dynamic_mask_ratio(0.0, cfg) != 0.75 or dynamic_mask_ratio(1.0, cfg) != 0.85:
        return False, "extremos da razão diferentes de m1 e m2"
    pior = 0.0
    for _ in range(n_pares):
        lado = int(rng.integers(2, 15))
        ratio = dynamic_mask_ratio(float(rng.uniform(0.0, 1.0)), cfg)
        mascara = sample_mask((lado, lado), ratio, rng)
        n = lado * lado
        erro = abs(mascara.masked_count / n - ratio) * 2 * n
        pior = max(pior, erro)
    return pior <= 1.0 + 1e-9, f"maior desvio = {pior:.3f}/(2N)"


def verificar_particao(rng: np.random.Generator, n_pares: int = 50, lado: int = 32,
                       patch_size: int = 8) -> Tuple[bool, str]:
    grade = (lado // patch_size, lado // patch_size)
    for k in range(n_pares):
        bbox_i = bbox_aleatorio(rng)
        bbox_j = bbox_aleatorio(rng, centro=((bbox_i.phi_min + bbox_i.phi_max) / 2,
                                             (bbox_i.lambda_min + bbox_i.lambda_max) / 2))
        nb_i, nb_j = normalize_pair(bbox_i, bbox_j)
        mask_i = sample_mask(grade, float(rng.uniform(0.0, 0.9)), rng)
        mask_j = sample_mask(grade, float(rng.uniform(0.0, 0.9)), rng)
        vis = classify_pixels(mask_i, mask_j, frame_transform(nb_i, (lado, lado)),
                              frame_transform(nb_j, (lado, lado)), patch_size)
        contagens = vis.contagens()
        if sum(contagens.values()) != lado * lado:
            return False, f"par {k}: categorias não particionam os pixels ({contagens})"
        oraculo = classificar_bruto(mask_i, mask_j, nb_i, nb_j, (lado, lado), patch_size)
        if not np.array_equal(vis.category, oraculo):
            return False, f"par {k}: {int((vis.category != oraculo).sum())} pixels diferem do oráculo"
    return True, f"{n_pares} pares {lado}×{lado}"


def _par_identico(rng: np.random.Generator, lado: int, ruido: float = 0.0):
    pixels = rng.uniform(0.0, 1.0, size=(lado, lado, 3))
    vizinha = np.clip(pixels + rng.normal(0.0, ruido, size=pixels.shape), 0.0, 1.0) if ruido else pixels.copy()
    bbox = GeoBBox(0.0, 1.0, 0.0, 1.0)
    return par_em_memoria(pixels, vizinha, bbox, bbox)


def _mascaras_complementares(rng: np.random.Generator, grade: Tuple[int, int]) -> Tuple[PatchMask, PatchMask]:
    mask_i = sample_mask(grade, 0.5, rng)
    n = grade[0] * grade[1]
    return mask_i, PatchMask(mask=~mask_i.mask, keep_count=n - mask_i.keep_count)


def verificar_pesos(rng: np.random.Generator, lado: int = 32, patch_size: int = 8) -> Tuple[bool, str]:
    par = _par_identico(rng, lado)
    mask_i, mask_j = _mascaras_complementares(rng, (lado // patch_size, lado // patch_size))
    t = frame_transform(par.nb_i, (lado, lado))
    vis = classify_pixels(mask_i, mask_j, t, t, patch_size)

    img = torch.from_numpy(par.img_i.pixels)
    recon = img + torch.from_numpy(rng.normal(0.0, 0.1, size=img.shape))
    cruzado = vis.category == Visibilidade.CROSS
    if not cruzado.any():
        return False, "nenhum pixel CROSS num par idêntico com máscaras complementares"

    nossos = loss_weights(vis, img, img, recon, 'ours').weights.numpy()
    cheios = loss_weights(vis, img, img, recon, 'full_cross').weights.numpy()

    if np.any(nossos[vis.category == Visibilidade.SELF] != 0.0):
        return False, "peso diferente de 0 em pixel SELF"
    if np.any(nossos[vis.category == Visibilidade.NOT] != 1.0):
        return False, "peso diferente de 1 em pixel NOT"
    if nossos.min() < 0.0 or nossos.max() > 1.0:
        return False, "peso fora de [0, 1]"

    media_nossa = float(nossos[cruzado].mean())
    media_cheia = float(cheios[cruzado].mean())
    passou = media_nossa < 0.01 and media_cheia == 1.0
    return passou, f"peso CROSS médio: ours={media_nossa:.4f}, full_cross={media_cheia:.4f}"


def _instancia_gradiente(rng: np.random.Generator):
    cfg = ModelConfig(input_size=16, patch_size=4, enc_dim=32, dec_dim=32, enc_depth=1, dec_depth=1,
                      heads=4, dtype='float64')
    modelo = construir_modelo(cfg, seed=int(rng.integers(0, 2 ** 31)))
    par = _par_identico(rng, 16, ruido=0.02)
    mascaras = _mascaras_complementares(rng, (4, 4))
    return modelo, par, mascaras


def _congelar(pesos: List[LossWeightMap]) -> List[LossWeightMap]:
    return [LossWeightMap(weights=w.weights.detach().clone()) for w in pesos]


def verificar_desacoplamento(rng: np.random.Generator) -> Tuple[bool, str]:
    """O gradiente da perda deve ser igual ao gradiente com os pesos congelados."""
    modelo, par, mascaras = _instancia_gradiente(rng)

    resultado = forward_loss(modelo, par, mascaras, 'ours')
    pesos = [w.weights.detach().numpy() for w in resultado.pesos]
    cruzados = np.concatenate([
        p[v.category == Visibilidade.CROSS] for p, v in zip(pesos, resultado.visibilidade)
    ])
    interiores = int(((cruzados > 0.0) & (cruzados < 1.0)).sum())
    if interiores == 0:
        return False, "instância sem pixels CROSS com peso estritamente entre 0 e 1"

    congelados = _congelar(resultado.pesos)
    real = gradiente_analitico(modelo, lambda: forward_loss(modelo, par, mascaras, 'ours').loss)
    fixo = gradiente_analitico(
        modelo, lambda: forward_loss(modelo, par, mascaras, 'ours', pesos_fixos=congelados).loss,
    )
    diferenca = maior_diferenca(real, fixo)
    return diferenca < 1e-8, f"diferença relativa = {diferenca:.2e} ({interiores} pixels CROSS com peso em (0, 1))"


def verificar_gradiente(rng: np.random.Generator) -> Tuple[bool, str]:
    """
    Diferenças finitas centrais (eps 1e-5, float64) contra o autograd.

    Todos os tensores de parâmetros são visitados, mas de cada um só são
    conferidas AMOSTRAS_GRADIENTE entradas sorteadas (todas quando o tensor
    é menor). O detalhe informa o total de entradas conferidas.
    """
    modelo, par, mascaras = _instancia_gradiente(rng)
    congelados = _congelar(forward_loss(modelo, par, mascaras, 'ours').pesos)

    def perda() -> torch.Tensor:
        return forward_loss(modelo, par, mascaras, 'ours', pesos_fixos=congelados).loss

    relatorio = checar_gradientes(modelo, perda, eps=1e-5, amostras_por_parametro=AMOSTRAS_GRADIENTE,
                                  rng=rng)
    detalhe = f"erro relativo máximo = {relatorio.max_erro_relativo:.2e} em {relatorio.entradas} entradas"
    if not relatorio.passou(1e-4):
        detalhe += "; piores: " + " | ".join(relatorio.piores[:3])
    return relatorio.passou(1e-4), detalhe


VERIFICACOES: List[Tuple[str, Callable[[np.random.Generator], Tuple[bool, str]]]] = [
    ('geometry-roundtrip', verificar_geometria),
    ('index-equivalence', verificar_indice),
    ('mask-ratio-law', verificar_razao_mascara),
    ('visibility-partition', verificar_particao),
    ('weight-contract', verificar_pesos),
    ('weight-detachment', verificar_desacoplamento),
    ('gradient-fidelity', verificar_gradiente),
]


def executar_selftest(seed: int = 0, apenas: Optional[List[str]] = None,
                      ao_concluir: Optional[Callable[[ResultadoVerificacao], None]] = None) -> List[ResultadoVerificacao]:
    """
    Executa as verificações em ordem, cada uma com gerador próprio derivado de `seed`.

    Exceções inesperadas contam como falha da verificação.
    """
    resultados = []
    for k, (nome, verificacao) in enumerate(VERIFICACOES):
        if apenas and nome not in apenas:
            continue
        inicio = time.perf_counter()
        try:
            passou, detalhe = verificacao(np.random.default_rng([seed, k]))
        except Exception as e:
            passou, detalhe = False, f"{type(e).__name__}: {e}"
        resultado = ResultadoVerificacao(nome, passou, detalhe, time.perf_counter() - inicio)
        resultados.append(resultado)
        if ao_concluir is not None:
            ao_concluir(resultado)
    return resultados
