"""
Módulo de mundo sintético.

Gera um raster RGB global por ruído de valor multi-oitava (fBm), recorta
tiles sobrepostos com retângulos georreferenciados lineares e, no modo de
revisita, re-renderiza janelas existentes com perturbação de brilho/cor.
Também verifica a consistência geométrica de um conjunto gerado.
"""

import json
import math
import os
from dataclasses import dataclass, asdict, field
from datetime import datetime, timedelta, timezone
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .augmentation import carregar_imagem, salvar_imagem
from .geo_index import build_index
from .models import GeoBBox, ImageRecord, salvar_metadados
from .relpos_embedding import normalize_pair
from .validation import ValidationError, validar_inteiro_positivo
from .visibility_loss import corresponder_centros, frame_transform


MODOS = ('grid_adjacent', 'random_jitter', 'revisit')
TOLERANCIA_REAMOSTRAGEM = 2.0 / 255.0


@dataclass
class WorldSpec:
    """
    Parâmetros do mundo sintético.

    Attributes:
        world_px: Lado do raster global
        noise_octaves: Oitavas do fBm
        seed: Semente
        tile_px: Lado de cada tile
        n_tiles: Número de tiles
        overlap_mode: grid_adjacent, random_jitter ou revisit
        revisit_noise: Desvio padrão da perturbação de brilho/cor por canal
        stride_px: Passo da grade (padrão tile_px // 2)
        graus_por_pixel: Resolução do mapeamento linear para lat/lon
        origem_lat, origem_lon: Latitude sul e longitude oeste do raster
    """
    world_px: int = 1024
    noise_octaves: int = 5
    seed: int = 0
    tile_px: int = 64
    n_tiles: int = 400
    overlap_mode: str = 'grid_adjacent'
    revisit_noise: float = 0.0
    stride_px: Optional[int] = None
    graus_por_pixel: float = 1e-4
    origem_lat: float = -10.0
    origem_lon: float = -50.0

    @property
    def passo(self) -> int:
        return self.stride_px if self.stride_px else max(self.tile_px // 2, 1)

    def validar(self) -> List[str]:
        """
        Valida os parâmetros do mundo.

        Returns:
            Lista de erros encontrados (vazia se válido)
        """
        erros = []
        if self.tile_px < 1 or self.world_px < 1:
            erros.append(f"world_px e tile_px devem ser >= 1, recebido: {self.world_px}, {self.tile_px}")
        elif self.tile_px > self.world_px:
            erros.append(f"tile_px ({self.tile_px}) não pode exceder world_px ({self.world_px})")
        if self.n_tiles < 2:
            erros.append(f"n_tiles deve ser >= 2, recebido: {self.n_tiles}")
        if self.noise_octaves < 1:
            erros.append(f"noise_octaves deve ser >= 1, recebido: {self.noise_octaves}")
        if self.overlap_mode not in MODOS:
            erros.append(f"overlap_mode '{self.overlap_mode}' inválido. Deve ser um de: {', '.join(MODOS)}")
        if self.revisit_noise < 0:
            erros.append(f"revisit_noise não pode ser negativo, recebido: {self.revisit_noise}")
        if self.passo < 1:
            erros.append(f"stride_px deve ser >= 1, recebido: {self.stride_px}")
        if not self.graus_por_pixel > 0:
            erros.append(f"graus_por_pixel deve ser positivo, recebido: {self.graus_por_pixel}")
        return erros

    def salvar(self, caminho: str):
        with open(caminho, 'w', encoding='utf-8') as f:
            json.dump(asdict(self), f, indent=2, ensure_ascii=False)

    @classmethod
    def carregar(cls, caminho: str) -> 'WorldSpec':
        if not os.path.exists(caminho):
            raise FileNotFoundError(f"Arquivo não encontrado: {caminho}")
        with open(caminho, 'r', encoding='utf-8') as f:
            return cls(**json.load(f))


@dataclass
class Tile:
    """Janela do raster global (linha e coluna do canto superior esquerdo) e visita."""
    id: str
    linha: int
    coluna: int
    visita: int = 0


@dataclass
class ResultadoMundo:
    """Saída de generate."""
    records: List[ImageRecord]
    metadata: str
    world_json: str
    tiles: List[Tile] = field(default_factory=list)


def _fade(t: np.ndarray) -> np.ndarray:
    return t * t * t * (t * (t * 6 - 15) + 10)


def value_noise_2d(height: int, width: int, scale: float, rng: np.random.Generator) -> np.ndarray:
    """Ruído de valor 2D com interpolação suave da grade aleatória; valores em [0, 1]."""
    scale = max(scale, 1.0)
    gh = int(np.ceil(height / scale)) + 2
    gw = int(np.ceil(width / scale)) + 2
    grid = rng.random((gh, gw))

    y = np.arange(height) / scale
    x = np.arange(width) / scale
    yi = np.floor(y).astype(int)
    xi = np.floor(x).astype(int)
    yf = _fade(y - yi)
    xf = _fade(x - xi)

    yi_m, xi_m = np.meshgrid(yi, xi, indexing='ij')
    uy, ux = np.meshgrid(yf, xf, indexing='ij')

    v0 = grid[yi_m, xi_m] + ux * (grid[yi_m, xi_m + 1] - grid[yi_m, xi_m])
    v1 = grid[yi_m + 1, xi_m] + ux * (grid[yi_m + 1, xi_m + 1] - grid[yi_m + 1, xi_m])
    return v0 + uy * (v1 - v0)


def fbm_2d(height: int, width: int, octaves: int, base_scale: float, rng: np.random.Generator,
           persistence: float = 0.5, lacunarity: float = 2.0) -> np.ndarray:
    """Soma de oitavas de ruído de valor (fBm), normalizada para [0, 1]."""
    resultado = np.zeros((height, width), dtype=np.float64)
    amplitude, total, scale = 1.0, 0.0, base_scale
    for _ in range(octaves):
        resultado += amplitude * value_noise_2d(height, width, scale, rng)
        total += amplitude
        amplitude *= persistence
        scale /= lacunarity
    return resultado / total


def render_world(spec: WorldSpec) -> np.ndarray:
    """
    Raster global world_px×world_px×3 em 8 bits.

    Cada canal é um fBm independente com contraste esticado para [0, 255].
    """
    rng = np.random.default_rng([spec.seed, 0])
    canais = []
    for _ in range(3):
        canal = fbm_2d(spec.world_px, spec.world_px, spec.noise_octaves, spec.world_px / 8.0, rng)
        lo, hi = canal.min(), canal.max()
        canais.append((canal - lo) / (hi - lo) if hi > lo else np.zeros_like(canal))
    return np.round(np.stack(canais, axis=-1) * 255.0).astype(np.uint8)


def bbox_da_janela(spec: WorldSpec, linha: int, coluna: int) -> GeoBBox:
    """Retângulo georreferenciado de uma janela tile_px×tile_px (linha 0 = norte)."""
    g = spec.graus_por_pixel
    topo = spec.origem_lat + spec.world_px * g
    return GeoBBox(
        phi_min=topo - (linha + spec.tile_px) * g,
        phi_max=topo - linha * g,
        lambda_min=spec.origem_lon + coluna * g,
        lambda_max=spec.origem_lon + (coluna + spec.tile_px) * g,
    )


def _posicoes_grade(spec: WorldSpec, n: int) -> List[Tuple[int, int]]:
    colunas = int(math.ceil(math.sqrt(n)))
    linhas = int(math.ceil(n / colunas))
    extensao = max(linhas, colunas) * spec.passo - spec.passo + spec.tile_px
    if extensao > spec.world_px:
        raise ValidationError(
            f"Grade de {linhas}×{colunas} tiles com passo {spec.passo} ocupa {extensao} px, "
            f"maior que world_px ({spec.world_px})"
        )
    return [(r * spec.passo, c * spec.passo) for r in range(linhas) for c in range(colunas)][:n]


def planejar_tiles(spec: WorldSpec) -> List[Tile]:
    """
    Posições dos tiles de acordo com o modo de sobreposição.

    - grid_adjacent: grade quase quadrada com passo stride_px
    - random_jitter: a mesma grade com deslocamento inteiro aleatório de até meio passo
    - revisit: metade dos tiles em grade; os demais revisitam janelas existentes
    """
    erros = spec.validar()
    if erros:
        raise ValidationError('; '.join(erros))

    if spec.overlap_mode == 'revisit':
        n_base = int(math.ceil(spec.n_tiles / 2))
        base = _posicoes_grade(spec, n_base)
        tiles = [Tile(id=f"tile_{k:05d}_v0", linha=r, coluna=c) for k, (r, c) in enumerate(base)]
        for k in range(spec.n_tiles - n_base):
            origem = tiles[k % n_base]
            visita = 1 + k // n_base
            base_id = origem.id.rsplit('_v', 1)[0]
            tiles.append(Tile(id=f"{base_id}_v{visita}", linha=origem.linha, coluna=origem.coluna, visita=visita))
        return tiles

    posicoes = _posicoes_grade(spec, spec.n_tiles)
    if spec.overlap_mode == 'random_jitter':
        rng = np.random.default_rng([spec.seed, 1])
        limite = spec.world_px - spec.tile_px
        meio = spec.passo // 2
        posicoes = [
            (int(np.clip(r + rng.integers(-meio, meio + 1), 0, limite)),
             int(np.clip(c + rng.integers(-meio, meio + 1), 0, limite)))
            for r, c in posicoes
        ]
    return [Tile(id=f"tile_{k:05d}", linha=r, coluna=c) for k, (r, c) in enumerate(posicoes)]


def perturbar(pixels: np.ndarray, revisit_noise: float, rng: np.random.Generator) -> np.ndarray:
    """Deslocamento de brilho/cor por canal ~ N(0, revisit_noise); sem ruído devolve os mesmos bytes."""
    if revisit_noise == 0.0:
        return pixels.copy()
    deslocamento = rng.normal(0.0, revisit_noise, size=3) * 255.0
    return np.clip(np.round(pixels.astype(np.float64) + deslocamento), 0, 255).astype(np.uint8)


def generate(spec: WorldSpec, out_dir: str, silent: bool = True) -> ResultadoMundo:
    """
    Gera o conjunto sintético em disco.

    Layout:
        out_dir/images/<id>.png
        out_dir/metadata.jsonl   (caminhos relativos a out_dir)
        out_dir/world.json       (WorldSpec)

    Raises:
        ValidationError: Parâmetros inválidos
        IOError: Falha de escrita
    """
    tiles = planejar_tiles(spec)
    mundo = render_world(spec)
    out_dir = os.path.abspath(out_dir)

    diretorio_imagens = os.path.join(out_dir, 'images')
    os.makedirs(diretorio_imagens, exist_ok=True)

    inicio = datetime(2020, 1, 1, tzinfo=timezone.utc)
    registros = []
    for k, tile in enumerate(tiles):
        janela = mundo[tile.linha:tile.linha + spec.tile_px, tile.coluna:tile.coluna + spec.tile_px]
        if tile.visita:
            janela = perturbar(janela, spec.revisit_noise, np.random.default_rng([spec.seed, 2, k]))

        caminho = os.path.join(diretorio_imagens, f"{tile.id}.png")
        try:
            salvar_imagem(janela.astype(np.float64) / 255.0, caminho)
        except OSError as e:
            raise IOError(f"Erro ao salvar tile {caminho}: {e}") from e

        timestamp = None
        if spec.overlap_mode == 'revisit':
            timestamp = (inicio + timedelta(days=30 * tile.visita)).strftime('%Y-%m-%dT%H:%M:%SZ')
        registros.append(ImageRecord(
            id=tile.id, path=caminho, bbox=bbox_da_janela(spec, tile.linha, tile.coluna),
            width_px=spec.tile_px, height_px=spec.tile_px, timestamp=timestamp,
        ))

    caminho_metadados = os.path.join(out_dir, 'metadata.jsonl')
    salvar_metadados(registros, caminho_metadados, base=out_dir)
    caminho_mundo = os.path.join(out_dir, 'world.json')
    spec.salvar(caminho_mundo)

    if not silent:
        print(f"✓ {len(registros)} tiles salvos em {diretorio_imagens}/")
        print(f"✓ Metadados: {caminho_metadados}")

    return ResultadoMundo(records=registros, metadata=caminho_metadados, world_json=caminho_mundo, tiles=tiles)


def oraculo_geolocalizacao(bbox_i: GeoBBox, size_i: Tuple[int, int], bbox_j: GeoBBox,
                           size_j: Tuple[int, int]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Correspondência dos centros de pixel de i em j passando por coordenadas geográficas.

    Cada centro (u + 0.5, v + 0.5) é levado a (lat, lon) pelo retângulo de i e
    daí para pixels de j pelo retângulo de j.

    Returns:
        (u_j, v_j): grades H_i×W_i
    """
    H_i, W_i = size_i
    H_j, W_j = size_j
    v, u = np.meshgrid(np.arange(H_i) + 0.5, np.arange(W_i) + 0.5, indexing='ij')
    lon = bbox_i.lambda_min + u / W_i * bbox_i.largura
    lat = bbox_i.phi_max - v / H_i * bbox_i.altura
    u_j = (lon - bbox_j.lambda_min) / bbox_j.largura * W_j
    v_j = (bbox_j.phi_max - lat) / bbox_j.altura * H_j
    return u_j, v_j


def cross_correlation(a: np.ndarray, b: np.ndarray) -> float:
    """Correlação de Pearson entre dois arrays de mesmo tamanho (1.0 se ambos constantes e iguais)."""
    x = np.asarray(a, dtype=np.float64).ravel()
    y = np.asarray(b, dtype=np.float64).ravel()
    if x.size != y.size:
        raise ValidationError(f"Arrays de tamanhos diferentes: {x.size} e {y.size}")
    if x.size == 0:
        return 1.0
    dx, dy = x - x.mean(), y - y.mean()
    norma = math.sqrt(float(np.dot(dx, dx)) * float(np.dot(dy, dy)))
    if norma == 0.0:
        return 1.0 if np.array_equal(x, y) else 0.0
    return float(np.dot(dx, dy)) / norma


@dataclass
class ResultadoPar:
    """Verificação de um par: pixels sobrepostos, erro absoluto médio e correlação."""
    ids: Tuple[str, str]
    n_pixels: int
    erro_medio: float
    correlacao: float
    passou: bool


@dataclass
class RelatorioConsistencia:
    """Relatório de verify_consistency."""
    tolerancia: float
    pares: List[ResultadoPar] = field(default_factory=list)

    @property
    def passou(self) -> bool:
        return all(p.passou for p in self.pares)

    @property
    def falhas(self) -> List[ResultadoPar]:
        return [p for p in self.pares if not p.passou]


def comparar_sobreposicao(rec_i: ImageRecord, rec_j: ImageRecord, pixels_i: np.ndarray,
                          pixels_j: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Valores dos pixels de i e dos correspondentes (vizinho mais próximo) em j na sobreposição.

    Usa o referencial comum do par e as transformações de pixel.
    """
    nb_i, nb_j = normalize_pair(rec_i.bbox, rec_j.bbox)
    t_i = frame_transform(nb_i, pixels_i.shape[:2])
    t_j = frame_transform(nb_j, pixels_j.shape[:2])
    u_j, v_j, dentro = corresponder_centros(t_i, t_j)
    linhas = np.floor(v_j[dentro]).astype(int)
    colunas = np.floor(u_j[dentro]).astype(int)
    return pixels_i[dentro], pixels_j[linhas, colunas]


def verify_consistency(records: Sequence[ImageRecord], revisit_noise: float = 0.0, pares: int = 50,
                       seed: int = 0, carregar: Callable[[str], np.ndarray] = carregar_imagem,
                       tolerancia_reamostragem: float = TOLERANCIA_REAMOSTRAGEM,
                       pares_explicitos: Optional[Sequence[Tuple[str, str]]] = None) -> RelatorioConsistencia:
    """
    Confere que tiles sobrepostos mostram o mesmo conteúdo onde a geometria diz que se sobrepõem.

    Para até `pares` pares vizinhos sorteados (ou os pares explícitos), leva
    cada pixel de i ao referencial comum e a j e exige erro absoluto médio
    <= revisit_noise·3 + tolerancia_reamostragem. Pares sem sobreposição
    passam trivialmente.
    """
    validar_inteiro_positivo(pares, 'pares')
    tolerancia = revisit_noise * 3.0 + tolerancia_reamostragem
    por_id: Dict[str, ImageRecord] = {r.id: r for r in records}

    if pares_explicitos is None:
        indice = build_index(records, alpha=0.0)
        candidatos = sorted({tuple(sorted((a, b))) for a, vs in indice.table.items() for b in vs})
        rng = np.random.default_rng(seed)
        if len(candidatos) > pares:
            escolhidos = rng.choice(len(candidatos), size=pares, replace=False)
            candidatos = [candidatos[int(k)] for k in sorted(escolhidos)]
    else:
        candidatos = list(pares_explicitos)

    relatorio = RelatorioConsistencia(tolerancia=tolerancia)
    for id_i, id_j in candidatos:
        if id_i not in por_id or id_j not in por_id:
            raise ValidationError(f"Par com id desconhecido: ({id_i}, {id_j})")
        rec_i, rec_j = por_id[id_i], por_id[id_j]
        a, b = comparar_sobreposicao(rec_i, rec_j, carregar(rec_i.path), carregar(rec_j.path))
        if a.size == 0:
            relatorio.pares.append(ResultadoPar((id_i, id_j), 0, 0.0, 1.0, True))
            continue
        erro = float(np.mean(np.abs(a - b)))
        relatorio.pares.append(ResultadoPar(
            ids=(id_i, id_j), n_pixels=int(a.shape[0]), erro_medio=erro,
            correlacao=cross_correlation(a, b), passou=erro <= tolerancia,
        ))
    return relatorio
