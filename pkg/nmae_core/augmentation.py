"""
Módulo de aumentação de dados.

Aplica Random-Resized-Crop a cada imagem de um par, propaga o retângulo
georreferenciado através do recorte e redimensiona para o tamanho de
entrada do modelo.
"""

import math
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .geo_index import iou
from .models import GeoBBox, ImageRecord
from .relpos_embedding import NormalizedBBox, normalize_pair
from .validation import GeometryError, ValidationError


@dataclass(frozen=True)
class CropParams:
    """
    Parâmetros de recorte em pixels da imagem original.

    - i: linha do canto superior esquerdo
    - j: coluna do canto superior esquerdo
    - h, w: altura e largura do recorte
    """
    i: int
    j: int
    h: int
    w: int

    def validar(self, H: int, W: int) -> List[str]:
        """
        Valida o recorte contra as dimensões da imagem.

        Returns:
            Lista de erros encontrados (vazia se válido)
        """
        erros = []
        if self.h < 1 or self.w < 1:
            erros.append(f"Recorte deve ter h, w >= 1, recebido h={self.h}, w={self.w}")
        if self.i < 0 or self.i + self.h > H:
            erros.append(f"Recorte vertical fora da imagem: i={self.i}, h={self.h}, H={H}")
        if self.j < 0 or self.j + self.w > W:
            erros.append(f"Recorte horizontal fora da imagem: j={self.j}, w={self.w}, W={W}")
        return erros


@dataclass
class AugmentedImage:
    """
    Imagem recortada e redimensionada.

    Attributes:
        pixels: Array H'×W'×C em [0, 1]
        bbox: Retângulo georreferenciado após o recorte
        source_id: Id do registro de origem
        crop: Parâmetros do recorte aplicado
        espelhado: Se o conteúdo foi invertido horizontalmente
    """
    pixels: np.ndarray
    bbox: GeoBBox
    source_id: str
    crop: CropParams
    espelhado: bool = False


@dataclass
class AugmentedPair:
    """
    Par de entrada do modelo.

    Attributes:
        img_i, img_j: Imagens aumentadas
        nb_i, nb_j: Retângulos no referencial comum do par
        iou: IoU dos retângulos após a aumentação
        mask_ratio: Razão de mascaramento sorteada para o par (preenchida pelo mascaramento)
    """
    img_i: AugmentedImage
    img_j: AugmentedImage
    nb_i: NormalizedBBox
    nb_j: NormalizedBBox
    iou: float
    mask_ratio: Optional[float] = None

    @property
    def ids(self) -> Tuple[str, str]:
        return (self.img_i.source_id, self.img_j.source_id)


def carregar_imagem(caminho: str) -> np.ndarray:
    """
    Lê um PNG RGB de 8 bits e converte para reais em [0, 1].

    Returns:
        Array H×W×3 em float64

    Raises:
        IOError: Se o arquivo não puder ser lido (a mensagem cita o caminho)
    """
    try:
        with Image.open(caminho) as imagem:
            dados = np.asarray(imagem.convert('RGB'), dtype=np.float64)
    except (OSError, ValueError) as e:
        raise IOError(f"Erro ao ler imagem {caminho}: {e}") from e
    return dados / 255.0


def salvar_imagem(pixels: np.ndarray, caminho: str):
    """Salva array H×W×3 (ou H×W) em [0, 1] como PNG de 8 bits."""
    dados = np.clip(np.round(np.asarray(pixels) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(dados).save(caminho, format='PNG')


def _interpolar(a: float, b: float, t: float) -> float:
    # extremos exatos para que o recorte identidade preserve o retângulo
    if t == 0.0:
        return a
    if t == 1.0:
        return b
    return a + (b - a) * t


def crop_bbox(src: GeoBBox, crop: CropParams, H: int, W: int) -> GeoBBox:
    """
    Retângulo georreferenciado de um recorte.

    As linhas são medidas a partir do topo da imagem, onde a latitude é phi_max.

    Raises:
        GeometryError: Se o recorte sair dos limites da imagem
    """
    erros = crop.validar(H, W)
    if erros:
        raise GeometryError('; '.join(erros))

    phi_max = _interpolar(src.phi_max, src.phi_min, crop.i / H)
    phi_min = _interpolar(src.phi_max, src.phi_min, (crop.i + crop.h) / H)
    lam_min = _interpolar(src.lambda_min, src.lambda_max, crop.j / W)
    lam_max = _interpolar(src.lambda_min, src.lambda_max, (crop.j + crop.w) / W)

    return GeoBBox(
        phi_min=min(max(phi_min, src.phi_min), src.phi_max),
        phi_max=min(max(phi_max, src.phi_min), src.phi_max),
        lambda_min=min(max(lam_min, src.lambda_min), src.lambda_max),
        lambda_max=min(max(lam_max, src.lambda_min), src.lambda_max),
    )


def sortear_recorte(H: int, W: int, rng: np.random.Generator,
                    scale: Tuple[float, float] = (0.2, 1.0),
                    aspect: Tuple[float, float] = (3.0 / 4.0, 4.0 / 3.0)) -> CropParams:
    """
    Sorteia os parâmetros do Random-Resized-Crop.

    A fração de área é uniforme em `scale`. A razão de aspecto é log-uniforme
    na parte de `aspect` que mantém o recorte dentro da imagem para a área
    sorteada, então não há laço de rejeição e a fração de área realizada
    permanece uniforme.
    """
    lo, hi = scale
    if not (0.0 < lo <= hi <= 1.0):
        raise ValidationError(f"Faixa de escala inválida: {scale}")
    if not (0.0 < aspect[0] <= aspect[1]):
        raise ValidationError(f"Faixa de aspecto inválida: {aspect}")

    area = H * W * float(rng.uniform(lo, hi))

    r_lo = max(aspect[0], area / (H * H))
    r_hi = min(aspect[1], (W * W) / area)
    if r_lo > r_hi:
        r_lo = r_hi = math.sqrt(r_lo * r_hi)
    razao = math.exp(float(rng.uniform(math.log(r_lo), math.log(r_hi))))

    w = int(min(max(round(math.sqrt(area * razao)), 1), W))
    h = int(min(max(round(math.sqrt(area / razao)), 1), H))

    i = int(rng.integers(0, H - h + 1))
    j = int(rng.integers(0, W - w + 1))
    return CropParams(i=i, j=j, h=h, w=w)


def redimensionar(pixels: np.ndarray, out_size: Tuple[int, int]) -> np.ndarray:
    """Redimensionamento bilinear com antialiasing (H×W×C -> H'×W'×C)."""
    tensor = torch.from_numpy(np.ascontiguousarray(pixels, dtype=np.float64)).permute(2, 0, 1).unsqueeze(0)
    if tuple(tensor.shape[-2:]) == tuple(out_size):
        return np.array(pixels, dtype=np.float64, copy=True)
    saida = F.interpolate(tensor, size=tuple(out_size), mode='bilinear', align_corners=False, antialias=True)
    return saida.squeeze(0).permute(1, 2, 0).clamp(0.0, 1.0).numpy()


def random_resized_crop(record: ImageRecord, pixels: np.ndarray, rng: np.random.Generator,
                        scale: Tuple[float, float] = (0.2, 1.0),
                        out_size: Tuple[int, int] = (224, 224),
                        aspect: Tuple[float, float] = (3.0 / 4.0, 4.0 / 3.0),
                        flip_enabled: bool = False) -> AugmentedImage:
    """
    Recorta, propaga o retângulo georreferenciado e redimensiona uma imagem.

    Args:
        record: Metadados da imagem
        pixels: Array H×W×C da imagem original
        rng: Gerador numpy com semente
        scale: Faixa da fração de área do recorte
        out_size: (H', W') de saída
        aspect: Faixa da razão de aspecto (largura/altura)
        flip_enabled: Habilita inversão horizontal aleatória (extensão opcional)

    Raises:
        ValidationError: Se as dimensões de `pixels` não baterem com o registro
    """
    H, W = pixels.shape[:2]
    if (H, W) != (record.height_px, record.width_px):
        raise ValidationError(
            f"Imagem '{record.id}' tem {H}×{W} pixels, metadados indicam "
            f"{record.height_px}×{record.width_px}"
        )

    crop = sortear_recorte(H, W, rng, scale, aspect)
    bbox = crop_bbox(record.bbox, crop, H, W)
    recorte = pixels[crop.i:crop.i + crop.h, crop.j:crop.j + crop.w]
    saida = redimensionar(recorte, out_size)

    espelhado = False
    if flip_enabled and rng.random() < 0.5:
        saida = np.ascontiguousarray(saida[:, ::-1])
        espelhado = True

    return AugmentedImage(pixels=saida, bbox=bbox, source_id=record.id, crop=crop, espelhado=espelhado)


def augment_pair(rec_i: ImageRecord, rec_j: ImageRecord, rng: np.random.Generator, config,
                 out_size: Tuple[int, int],
                 carregar: Callable[[str], np.ndarray] = carregar_imagem) -> Tuple[AugmentedImage, AugmentedImage]:
    """
    Aumenta as duas imagens do par com sorteios independentes.

    Args:
        rec_i, rec_j: Registros (podem ser o mesmo registro no fallback sem vizinho)
        rng: Gerador numpy; dois sub-geradores independentes são derivados dele
        config: Seção de aumentação (crop_scale_lo/hi, aspect_lo/hi, flip_enabled)
        out_size: (H', W') de entrada do modelo
        carregar: Função que lê a imagem de um caminho

    Raises:
        IOError: Se alguma imagem não puder ser lida
    """
    sementes = rng.integers(0, 2 ** 63 - 1, size=2)
    saidas = []
    for registro, semente in zip((rec_i, rec_j), sementes):
        pixels = carregar(registro.path)
        saidas.append(random_resized_crop(
            registro, pixels, np.random.default_rng(int(semente)),
            scale=(config.crop_scale_lo, config.crop_scale_hi),
            out_size=out_size,
            aspect=(config.aspect_lo, config.aspect_hi),
            flip_enabled=config.flip_enabled,
        ))
    return saidas[0], saidas[1]


def montar_par(rec_i: ImageRecord, rec_j: ImageRecord, rng: np.random.Generator, config,
               out_size: Tuple[int, int],
               carregar: Callable[[str], np.ndarray] = carregar_imagem) -> AugmentedPair:
    """
    Aumenta o par e calcula o referencial comum e a IoU pós-aumentação.
    """
    img_i, img_j = augment_pair(rec_i, rec_j, rng, config, out_size, carregar)
    nb_i, nb_j = normalize_pair(img_i.bbox, img_j.bbox)
    return AugmentedPair(
        img_i=img_i, img_j=img_j, nb_i=nb_i, nb_j=nb_j,
        iou=iou(img_i.bbox, img_j.bbox),
    )


def com_razao(par: AugmentedPair, ratio: float) -> AugmentedPair:
    """Cópia do par com a razão de mascaramento registrada."""
    return replace(par, mask_ratio=ratio)
