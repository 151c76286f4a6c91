"""
Módulo de índice de vizinhança geoespacial.

Este módulo é responsável por:
- Calcular a IoU planar entre retângulos georreferenciados
- Construir a tabela de vizinhos de cada imagem (IoU > alpha)
- Sortear um vizinho de uma imagem âncora durante o treinamento
- Persistir a tabela em formato binário "NMIX" ou JSON
"""

import json
import os
import struct
from collections import Counter
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from rtree import index as rtree_index

from .models import GeoBBox, ImageRecord
from .validation import ValidationError, validar_alpha, validar_ids_unicos


MAGIC_NMIX = b'NMIX'
VERSAO_NMIX = 1


class IndexFormatError(Exception):
    """Exceção para arquivos de índice corrompidos ou de versão desconhecida."""
    pass


def iou(a: GeoBBox, b: GeoBBox) -> float:
    """
    Intersecção sobre união de dois retângulos em graus planos.

    Retângulos disjuntos ou que apenas se tocam numa aresta resultam em 0.

    Example:
        >>> iou(GeoBBox(0, 1, 0, 1), GeoBBox(0.5, 1.5, 0, 1))
        0.3333333333333333
    """
    altura = min(a.phi_max, b.phi_max) - max(a.phi_min, b.phi_min)
    largura = min(a.lambda_max, b.lambda_max) - max(a.lambda_min, b.lambda_min)
    if altura <= 0.0 or largura <= 0.0:
        return 0.0

    intersecao = altura * largura
    uniao = a.area + b.area - intersecao
    return intersecao / uniao


@dataclass(frozen=True)
class NeighborIndex:
    """
    Tabela pré-computada de vizinhos.

    Attributes:
        alpha: Limiar de IoU usado na construção
        table: Mapa id -> tupla ordenada de ids vizinhos (simétrico, sem auto-vizinhos)
    """
    alpha: float
    table: Dict[str, Tuple[str, ...]]

    def vizinhos(self, id_: str) -> Tuple[str, ...]:
        """
        Retorna os vizinhos de uma imagem.

        Raises:
            ValidationError: Se o id não existir no índice
        """
        if id_ not in self.table:
            raise ValidationError(f"Imagem '{id_}' não existe no índice")
        return self.table[id_]

    def validar_cobertura(self, records: Sequence[ImageRecord]):
        """
        Confere que o índice e o conjunto de registros se correspondem.

        Todo registro precisa de uma entrada no índice e todo vizinho
        listado para esses registros precisa existir no conjunto.

        Raises:
            ValidationError: Registros ausentes do índice ou vizinhos ausentes dos registros
        """
        ids = {r.id for r in records}
        ausentes = [r.id for r in records if r.id not in self.table]
        if ausentes:
            raise ValidationError(
                f"{len(ausentes)} registros ausentes do índice (ex.: '{ausentes[0]}')"
            )
        orfaos = sorted({v for r in records for v in self.table[r.id] if v not in ids})
        if orfaos:
            raise ValidationError(
                f"{len(orfaos)} vizinhos do índice ausentes dos metadados (ex.: '{orfaos[0]}')"
            )

    def estatisticas(self) -> Dict[int, int]:
        """
        Histograma do número de vizinhos.

        Returns:
            Mapa quantidade_de_vizinhos -> número de imagens, ordenado pela quantidade
        """
        contagem = Counter(len(v) for v in self.table.values())
        return dict(sorted(contagem.items()))

    def para_dict(self) -> Dict:
        """Converte o índice para o formato de exportação JSON."""
        return {
            'format': 'nmix-json',
            'version': VERSAO_NMIX,
            'alpha': self.alpha,
            'table': {k: list(self.table[k]) for k in sorted(self.table)},
        }

    def salvar(self, caminho: str, formato: str = 'nmix'):
        """
        Salva o índice em disco.

        Args:
            caminho: Caminho do arquivo de saída
            formato: 'nmix' (binário versionado) ou 'json' (exportação para depuração)

        Raises:
            ValueError: Se o formato for desconhecido
        """
        if formato not in ('nmix', 'json'):
            raise ValueError(f"Formato '{formato}' inválido. Deve ser um de: nmix, json")

        diretorio = os.path.dirname(caminho)
        if diretorio and not os.path.exists(diretorio):
            os.makedirs(diretorio, exist_ok=True)

        if formato == 'json':
            with open(caminho, 'w', encoding='utf-8') as f:
                json.dump(self.para_dict(), f, indent=2, ensure_ascii=False)
            return

        with open(caminho, 'wb') as f:
            f.write(_codificar_nmix(self))

    @classmethod
    def carregar(cls, caminho: str) -> 'NeighborIndex':
        """
        Carrega índice salvo em NMIX ou JSON (detectado pelos bytes mágicos).

        Raises:
            FileNotFoundError: Se o arquivo não existir
            IndexFormatError: Se o conteúdo não for um índice válido
        """
        if not os.path.exists(caminho):
            raise FileNotFoundError(f"Arquivo não encontrado: {caminho}")

        with open(caminho, 'rb') as f:
            conteudo = f.read()

        if conteudo[:4] == MAGIC_NMIX:
            return _decodificar_nmix(conteudo)

        try:
            dados = json.loads(conteudo.decode('utf-8'))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise IndexFormatError(f"Arquivo {caminho} não é um índice NMIX nem JSON") from e

        if dados.get('format') != 'nmix-json' or dados.get('version') != VERSAO_NMIX:
            raise IndexFormatError(
                f"Arquivo {caminho} tem formato/versão não suportados: "
                f"{dados.get('format')!r} v{dados.get('version')!r}"
            )
        return cls(
            alpha=float(dados['alpha']),
            table={k: tuple(v) for k, v in dados['table'].items()},
        )


def _validar_registros(records: Sequence[ImageRecord]):
    if not records:
        raise ValidationError("A lista de registros não pode ser vazia")

    validar_ids_unicos([r.id for r in records])

    for registro in records:
        erros = registro.bbox.validar()
        if erros:
            raise ValidationError(f"Registro '{registro.id}' tem bbox inválido: {'; '.join(erros)}")


def _montar_tabela(ids: List[str], pares: List[Tuple[int, int]], alpha: float) -> NeighborIndex:
    vizinhos: Dict[str, List[str]] = {id_: [] for id_ in ids}
    for a, b in pares:
        vizinhos[ids[a]].append(ids[b])
        vizinhos[ids[b]].append(ids[a])
    return NeighborIndex(alpha=float(alpha), table={k: tuple(sorted(v)) for k, v in vizinhos.items()})


def build_index(records: Sequence[ImageRecord], alpha: float) -> NeighborIndex:
    """
    Constrói a tabela de vizinhos com busca acelerada por R-tree.

    A R-tree devolve candidatos cujos retângulos se intersectam (inclusive
    apenas por uma aresta); a IoU exata decide a vizinhança, de modo que o
    resultado é idêntico ao da comparação de todos os pares.

    Args:
        records: Registros com ids únicos
        alpha: Limiar de IoU em [0, 1] (desigualdade estrita)

    Returns:
        NeighborIndex simétrico e sem auto-vizinhos

    Raises:
        ValidationError: Ids duplicados, bbox inválido ou alpha fora de [0, 1]
    """
    validar_alpha(alpha)
    _validar_registros(records)

    ids = [r.id for r in records]
    caixas = [r.bbox for r in records]

    # Eixo x = longitude, eixo y = latitude (interleaved: xmin, ymin, xmax, ymax)
    arvore = rtree_index.Index(
        (i, (b.lambda_min, b.phi_min, b.lambda_max, b.phi_max), None)
        for i, b in enumerate(caixas)
    )

    pares = []
    for i, b in enumerate(caixas):
        for j in arvore.intersection((b.lambda_min, b.phi_min, b.lambda_max, b.phi_max)):
            if j <= i:
                continue
            if iou(b, caixas[j]) > alpha:
                pares.append((i, j))

    return _montar_tabela(ids, pares, alpha)


def build_index_bruto(records: Sequence[ImageRecord], alpha: float) -> NeighborIndex:
    """
    Constrói a tabela comparando todos os pares (O(n²)).

    Usado como oráculo nos testes e no selftest.
    """
    validar_alpha(alpha)
    _validar_registros(records)

    ids = [r.id for r in records]
    pares = [
        (i, j)
        for i in range(len(records))
        for j in range(i + 1, len(records))
        if iou(records[i].bbox, records[j].bbox) > alpha
    ]
    return _montar_tabela(ids, pares, alpha)


def sample_neighbor(index: NeighborIndex, anchor_id: str, rng: np.random.Generator) -> Optional[str]:
    """
    Sorteia uniformemente um vizinho da âncora.

    Args:
        index: Índice de vizinhança
        anchor_id: Id da imagem âncora
        rng: Gerador numpy com semente

    Returns:
        Id do vizinho sorteado, ou None se a âncora não tiver vizinhos
        (o chamador decide o fallback)

    Raises:
        ValidationError: Se a âncora não existir no índice
    """
    candidatos = index.vizinhos(anchor_id)
    if not candidatos:
        return None
    return candidatos[int(rng.integers(len(candidatos)))]


def _codificar_texto(texto: str) -> bytes:
    dados = texto.encode('utf-8')
    return struct.pack('<I', len(dados)) + dados


def _codificar_nmix(indice: NeighborIndex) -> bytes:
    partes = [MAGIC_NMIX, struct.pack('<I', VERSAO_NMIX), struct.pack('<d', indice.alpha),
              struct.pack('<I', len(indice.table))]
    for id_ in sorted(indice.table):
        vizinhos = indice.table[id_]
        partes.append(_codificar_texto(id_))
        partes.append(struct.pack('<I', len(vizinhos)))
        partes.extend(_codificar_texto(v) for v in vizinhos)
    return b''.join(partes)


def _decodificar_nmix(dados: bytes) -> NeighborIndex:
    posicao = 4

    def ler(formato: str):
        nonlocal posicao
        tamanho = struct.calcsize(formato)
        if posicao + tamanho > len(dados):
            raise IndexFormatError("Arquivo NMIX truncado")
        valor = struct.unpack_from(formato, dados, posicao)[0]
        posicao += tamanho
        return valor

    def ler_texto() -> str:
        nonlocal posicao
        tamanho = ler('<I')
        if posicao + tamanho > len(dados):
            raise IndexFormatError("Arquivo NMIX truncado")
        texto = dados[posicao:posicao + tamanho].decode('utf-8')
        posicao += tamanho
        return texto

    versao = ler('<I')
    if versao != VERSAO_NMIX:
        raise IndexFormatError(f"Versão NMIX {versao} não suportada (esperada {VERSAO_NMIX})")

    alpha = ler('<d')
    tabela = {}
    for _ in range(ler('<I')):
        id_ = ler_texto()
        tabela[id_] = tuple(ler_texto() for _ in range(ler('<I')))

    if posicao != len(dados):
        raise IndexFormatError(f"Arquivo NMIX com {len(dados) - posicao} bytes excedentes")

    return NeighborIndex(alpha=alpha, table=tabela)
