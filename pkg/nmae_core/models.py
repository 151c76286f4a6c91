"""
Módulo de modelos de dados para o nmae-cli.

Este módulo define as estruturas de dados (dataclasses) dos metadados
georreferenciados, incluindo validações de campos obrigatórios e a leitura
e escrita do arquivo de metadados (um objeto JSON por linha).
"""

from dataclasses import dataclass, asdict
from typing import Optional, List, Dict, Any
import json
import math
import os

from .validation import ValidationError, validar_ids_unicos


def _filtrar_comentarios(dados: Dict[str, Any]) -> Dict[str, Any]:
    """
    Remove chaves que começam com '_comentario' de um dicionário.

    Args:
        dados: Dicionário com possíveis chaves de comentário

    Returns:
        Dicionário sem chaves de comentário
    """
    return {k: v for k, v in dados.items() if not k.startswith('_comentario')}


@dataclass(frozen=True)
class GeoBBox:
    """
    Retângulo georreferenciado em graus.

    - phi_min, phi_max: latitudes sul e norte
    - lambda_min, lambda_max: longitudes oeste e leste

    A linha superior de uma imagem corresponde a phi_max e a coluna esquerda
    a lambda_min.
    """
    phi_min: float
    phi_max: float
    lambda_min: float
    lambda_max: float

    def validar(self) -> List[str]:
        """
        Valida os dados do retângulo.

        Returns:
            Lista de erros encontrados (vazia se válido)
        """
        erros = []

        campos = asdict(self)
        for nome, valor in campos.items():
            if isinstance(valor, bool) or not isinstance(valor, (int, float)):
                erros.append(f"Campo '{nome}' deve ser numérico, recebido: {valor!r}")
            elif not math.isfinite(valor):
                erros.append(f"Campo '{nome}' deve ser finito, recebido: {valor}")

        if erros:
            return erros

        if not self.phi_min < self.phi_max:
            erros.append(f"Campo 'phi_min' ({self.phi_min}) deve ser menor que 'phi_max' ({self.phi_max})")

        if not self.lambda_min < self.lambda_max:
            erros.append(
                f"Campo 'lambda_min' ({self.lambda_min}) deve ser menor que 'lambda_max' ({self.lambda_max})"
            )

        return erros

    @property
    def altura(self) -> float:
        return self.phi_max - self.phi_min

    @property
    def largura(self) -> float:
        return self.lambda_max - self.lambda_min

    @property
    def area(self) -> float:
        return self.altura * self.largura


@dataclass
class ImageRecord:
    """
    Metadados de uma imagem do conjunto de dados.

    Corresponde às chaves de cada linha do arquivo de metadados:
    - id: Identificador opaco, único no conjunto
    - path: Caminho do arquivo PNG
    - phi_min, phi_max, lambda_min, lambda_max: Retângulo georreferenciado
    - width_px, height_px: Dimensões da imagem em pixels
    - timestamp: Data/hora ISO 8601 (opcional, apenas metadado)
    """
    id: str
    path: str
    bbox: GeoBBox
    width_px: int
    height_px: int
    timestamp: Optional[str] = None

    def validar(self) -> List[str]:
        """
        Valida os dados do registro.

        Returns:
            Lista de erros encontrados (vazia se válido)
        """
        erros = []

        if not self.id:
            erros.append("Campo 'id' é obrigatório")

        for nome in ('width_px', 'height_px'):
            valor = getattr(self, nome)
            if isinstance(valor, bool) or not isinstance(valor, int) or valor < 1:
                erros.append(f"Campo '{nome}' deve ser inteiro >= 1, recebido: {valor!r}")

        erros.extend([f"bbox: {erro}" for erro in self.bbox.validar()])

        return erros

    @classmethod
    def de_dict(cls, dados: Dict[str, Any]) -> 'ImageRecord':
        """
        Cria registro a partir de um objeto JSON de metadados.

        Raises:
            ValidationError: Se faltar alguma chave obrigatória
        """
        dados = _filtrar_comentarios(dados)
        obrigatorios = ['id', 'path', 'phi_min', 'phi_max', 'lambda_min', 'lambda_max',
                        'width_px', 'height_px']
        faltando = [chave for chave in obrigatorios if chave not in dados]
        if faltando:
            raise ValidationError(f"Chaves obrigatórias ausentes: {', '.join(faltando)}")

        return cls(
            id=str(dados['id']),
            path=str(dados['path']),
            bbox=GeoBBox(
                phi_min=dados['phi_min'],
                phi_max=dados['phi_max'],
                lambda_min=dados['lambda_min'],
                lambda_max=dados['lambda_max'],
            ),
            width_px=dados['width_px'],
            height_px=dados['height_px'],
            timestamp=dados.get('timestamp'),
        )

    def para_dict(self) -> Dict[str, Any]:
        """Converte o registro para o formato plano do arquivo de metadados."""
        dados = {
            'id': self.id,
            'path': self.path,
            **asdict(self.bbox),
            'width_px': self.width_px,
            'height_px': self.height_px,
        }
        if self.timestamp is not None:
            dados['timestamp'] = self.timestamp
        return dados


def carregar_metadados(caminho: str) -> List[ImageRecord]:
    """
    Carrega o arquivo de metadados (um objeto JSON por linha).

    Caminhos relativos de imagem são resolvidos em relação ao diretório do
    arquivo de metadados. Linhas vazias são ignoradas.

    Args:
        caminho: Caminho do arquivo .jsonl

    Returns:
        Lista de registros na ordem do arquivo

    Raises:
        FileNotFoundError: Se o arquivo não existir
        ValidationError: Se alguma linha for inválida (a mensagem cita a linha e o id)
    """
    if not os.path.exists(caminho):
        raise FileNotFoundError(f"Arquivo não encontrado: {caminho}")

    base = os.path.dirname(os.path.abspath(caminho))
    registros = []

    with open(caminho, 'r', encoding='utf-8') as f:
        for numero, linha in enumerate(f, start=1):
            linha = linha.strip()
            if not linha:
                continue

            try:
                dados = json.loads(linha)
            except json.JSONDecodeError as e:
                raise ValidationError(f"Linha {numero} de {caminho}: JSON inválido ({e})") from e

            try:
                registro = ImageRecord.de_dict(dados)
            except ValidationError as e:
                raise ValidationError(f"Linha {numero} de {caminho}: {e}") from e

            erros = registro.validar()
            if erros:
                raise ValidationError(
                    f"Linha {numero} de {caminho}, registro '{registro.id}': {'; '.join(erros)}"
                )

            if not os.path.isabs(registro.path):
                registro.path = os.path.join(base, registro.path)

            registros.append(registro)

    validar_ids_unicos([r.id for r in registros])
    return registros


def salvar_metadados(registros: List[ImageRecord], caminho: str, base: Optional[str] = None):
    """
    Salva registros no formato de metadados (um objeto JSON por linha).

    Args:
        registros: Registros a salvar
        caminho: Caminho do arquivo .jsonl
        base: Se fornecido, caminhos de imagem são gravados relativos a este diretório
    """
    diretorio = os.path.dirname(caminho)
    if diretorio and not os.path.exists(diretorio):
        os.makedirs(diretorio, exist_ok=True)

    with open(caminho, 'w', encoding='utf-8') as f:
        for registro in registros:
            dados = registro.para_dict()
            if base is not None and os.path.isabs(dados['path']):
                dados['path'] = os.path.relpath(dados['path'], base)
            f.write(json.dumps(dados, ensure_ascii=False) + '\n')
