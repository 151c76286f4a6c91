"""
Módulo de checkpoints no formato binário "NMCK".

Layout (little-endian):
    b'NMCK' | u32 versão | u32 tamanho do cabeçalho | cabeçalho JSON UTF-8
    | u32 número de registros | registros

Cada registro: u32 tamanho do nome | nome UTF-8 | u8 código do dtype
| u32 número de dimensões | u64 por dimensão | dados brutos.

O cabeçalho guarda a configuração, step, images_seen e a semente. Os
registros guardam os parâmetros ("param/<nome>") e os momentos do AdamW
("adam/<nome>/exp_avg", "adam/<nome>/exp_avg_sq", "adam/<nome>/step").
"""

import json
import os
import struct
from dataclasses import dataclass, field
from typing import Any, Dict

import numpy as np

from .file_manager import FileManager


MAGIC_NMCK = b'NMCK'
VERSAO_NMCK = 1
CAMPOS_CABECALHO = ('config', 'step', 'images_seen', 'seed')

DTYPES_NMCK = {
    0: np.dtype('<f8'),
    1: np.dtype('<f4'),
    2: np.dtype('<i8'),
    3: np.dtype('u1'),
}
CODIGOS_NMCK = {dt.str: codigo for codigo, dt in DTYPES_NMCK.items()}


class CheckpointError(Exception):
    """Exceção para checkpoints corrompidos, truncados ou de versão desconhecida."""
    pass


@dataclass
class Checkpoint:
    """
    Conteúdo de um checkpoint.

    Attributes:
        config: Configuração serializada (Config.para_dict)
        step: Passos de otimização concluídos
        images_seen: Imagens processadas (step · batch_images)
        seed: Semente do treinamento
        tensores: Registros nome -> array
    """
    config: Dict[str, Any]
    step: int
    images_seen: int
    seed: int
    tensores: Dict[str, np.ndarray] = field(default_factory=dict)

    def parametros(self) -> Dict[str, np.ndarray]:
        """Somente os registros de parâmetros, sem o prefixo."""
        prefixo = 'param/'
        return {k[len(prefixo):]: v for k, v in self.tensores.items() if k.startswith(prefixo)}


def codificar(checkpoint: Checkpoint) -> bytes:
    """Serializa o checkpoint no formato NMCK."""
    cabecalho = json.dumps({
        'config': checkpoint.config,
        'step': checkpoint.step,
        'images_seen': checkpoint.images_seen,
        'seed': checkpoint.seed,
    }, sort_keys=True).encode('utf-8')

    partes = [MAGIC_NMCK, struct.pack('<I', VERSAO_NMCK), struct.pack('<I', len(cabecalho)), cabecalho,
              struct.pack('<I', len(checkpoint.tensores))]

    for nome in sorted(checkpoint.tensores):
        array = np.asarray(checkpoint.tensores[nome])
        dtype = array.dtype.newbyteorder('<')
        if dtype.str not in CODIGOS_NMCK:
            raise CheckpointError(f"Registro '{nome}' com dtype não suportado: {array.dtype}")
        nome_bytes = nome.encode('utf-8')
        partes.append(struct.pack('<I', len(nome_bytes)))
        partes.append(nome_bytes)
        partes.append(struct.pack('<B', CODIGOS_NMCK[dtype.str]))
        partes.append(struct.pack('<I', array.ndim))
        partes.append(struct.pack(f'<{array.ndim}Q', *array.shape))
        partes.append(np.ascontiguousarray(array, dtype=dtype).tobytes())

    return b''.join(partes)


def decodificar(dados: bytes) -> Checkpoint:
    """
    Lê um checkpoint NMCK.

    Raises:
        CheckpointError: Magic, versão, truncamento, bytes excedentes ou cabeçalho incompleto
    """
    if dados[:4] != MAGIC_NMCK:
        raise CheckpointError("Arquivo não é um checkpoint NMCK")
    posicao = 4

    def ler(formato: str):
        nonlocal posicao
        tamanho = struct.calcsize(formato)
        if posicao + tamanho > len(dados):
            raise CheckpointError("Checkpoint NMCK truncado")
        valores = struct.unpack_from(formato, dados, posicao)
        posicao += tamanho
        return valores

    def ler_bytes(n: int) -> bytes:
        nonlocal posicao
        if posicao + n > len(dados):
            raise CheckpointError("Checkpoint NMCK truncado")
        trecho = dados[posicao:posicao + n]
        posicao += n
        return trecho

    (versao,) = ler('<I')
    if versao != VERSAO_NMCK:
        raise CheckpointError(f"Versão NMCK {versao} não suportada (esperada {VERSAO_NMCK})")

    (tamanho_cabecalho,) = ler('<I')
    try:
        cabecalho = json.loads(ler_bytes(tamanho_cabecalho).decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"Cabeçalho NMCK inválido: {e}") from e

    tensores = {}
    (n_registros,) = ler('<I')
    for _ in range(n_registros):
        (tamanho_nome,) = ler('<I')
        nome = ler_bytes(tamanho_nome).decode('utf-8')
        (codigo,) = ler('<B')
        if codigo not in DTYPES_NMCK:
            raise CheckpointError(f"Registro '{nome}' com código de dtype desconhecido: {codigo}")
        dtype = DTYPES_NMCK[codigo]
        (ndim,) = ler('<I')
        forma = ler(f'<{ndim}Q') if ndim else ()
        n_bytes = int(np.prod(forma, dtype=np.int64)) * dtype.itemsize
        tensores[nome] = np.frombuffer(ler_bytes(n_bytes), dtype=dtype).reshape(forma).copy()

    if posicao != len(dados):
        raise CheckpointError(f"Checkpoint NMCK com {len(dados) - posicao} bytes excedentes")

    if not isinstance(cabecalho, dict):
        raise CheckpointError("Cabeçalho NMCK deve ser um objeto JSON")
    faltando = [chave for chave in CAMPOS_CABECALHO if chave not in cabecalho]
    if faltando:
        raise CheckpointError(f"Cabeçalho NMCK sem os campos: {', '.join(faltando)}")
    try:
        return Checkpoint(
            config=cabecalho['config'],
            step=int(cabecalho['step']),
            images_seen=int(cabecalho['images_seen']),
            seed=int(cabecalho['seed']),
            tensores=tensores,
        )
    except (TypeError, ValueError) as e:
        raise CheckpointError(f"Cabeçalho NMCK com valor inválido: {e}") from e


def salvar_checkpoint(checkpoint: Checkpoint, caminho: str):
    """Grava o checkpoint de forma atômica (arquivo temporário + rename)."""
    FileManager.salvar_atomico(caminho, codificar(checkpoint))


def carregar_checkpoint(caminho: str) -> Checkpoint:
    """
    Carrega checkpoint do disco.

    Raises:
        FileNotFoundError: Se o arquivo não existir
        CheckpointError: Se o conteúdo for inválido
    """
    if not os.path.exists(caminho):
        raise FileNotFoundError(f"Arquivo não encontrado: {caminho}")
    with open(caminho, 'rb') as f:
        conteudo = f.read()
    try:
        return decodificar(conteudo)
    except CheckpointError as e:
        raise CheckpointError(f"{caminho}: {e}") from e
