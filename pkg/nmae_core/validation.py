"""
Módulo de validação de dados para o nmae-cli.

Este módulo contém a exceção de validação e funções de validação para
coordenadas geográficas, intervalos numéricos e parâmetros de configuração.
"""

import math
from typing import Any, List, Optional, Sequence


class ValidationError(Exception):
    """Exceção para erros de validação de dados."""
    pass


class GeometryError(Exception):
    """Exceção para geometrias degeneradas (extensão nula, recortes fora da imagem)."""
    pass


def validar_finito(valor: Any, nome: str) -> bool:
    """
    Valida que o valor é um número real finito.

    Args:
        valor: Valor a ser validado
        nome: Nome do campo (usado na mensagem de erro)

    Returns:
        True se o valor é válido

    Raises:
        ValidationError: Se o valor não é numérico ou não é finito
    """
    if isinstance(valor, bool) or not isinstance(valor, (int, float)):
        raise ValidationError(f"Campo '{nome}' deve ser numérico, recebido: {valor!r}")

    if not math.isfinite(valor):
        raise ValidationError(f"Campo '{nome}' deve ser finito, recebido: {valor}")

    return True


def validar_intervalo(valor: float, nome: str, minimo: float, maximo: float) -> bool:
    """
    Valida que minimo <= valor <= maximo.

    Raises:
        ValidationError: Se o valor está fora do intervalo fechado
    """
    validar_finito(valor, nome)
    if valor < minimo or valor > maximo:
        raise ValidationError(
            f"Campo '{nome}' deve estar entre {minimo} e {maximo}, recebido: {valor}"
        )
    return True


def validar_inteiro_positivo(valor: Any, nome: str) -> bool:
    """
    Valida que o valor é um inteiro >= 1.

    Raises:
        ValidationError: Se o valor não é inteiro ou é menor que 1
    """
    if isinstance(valor, bool) or not isinstance(valor, int):
        raise ValidationError(f"Campo '{nome}' deve ser inteiro, recebido: {valor!r}")
    if valor < 1:
        raise ValidationError(f"Campo '{nome}' deve ser >= 1, recebido: {valor}")
    return True


def validar_alpha(alpha: float) -> bool:
    """
    Valida o limiar de IoU usado na busca de vizinhos.

    Raises:
        ValidationError: Se alpha não está em [0, 1]
    """
    return validar_intervalo(alpha, 'alpha', 0.0, 1.0)


def validar_limites_mascara(m1: float, m2: float) -> List[str]:
    """
    Valida os limites inferior e superior da razão de mascaramento.

    Returns:
        Lista de erros encontrados (vazia se válido)
    """
    erros = []

    for nome, valor in (('mask_m1', m1), ('mask_m2', m2)):
        try:
            validar_intervalo(valor, nome, 0.0, 1.0)
        except ValidationError as e:
            erros.append(str(e))

    if not erros and m1 > m2:
        erros.append(f"Campo 'mask_m1' ({m1}) não pode ser maior que 'mask_m2' ({m2})")

    return erros


def validar_faixa(lo: float, hi: float, nome: str, minimo: float = 0.0,
                  maximo: Optional[float] = None) -> List[str]:
    """
    Valida uma faixa (lo, hi) com minimo < lo <= hi (<= maximo se fornecido).

    Returns:
        Lista de erros encontrados (vazia se válido)
    """
    erros = []

    try:
        validar_finito(lo, f'{nome}_lo')
        validar_finito(hi, f'{nome}_hi')
    except ValidationError as e:
        return [str(e)]

    if lo <= minimo:
        erros.append(f"Campo '{nome}_lo' deve ser maior que {minimo}, recebido: {lo}")
    if maximo is not None and hi > maximo:
        erros.append(f"Campo '{nome}_hi' deve ser no máximo {maximo}, recebido: {hi}")
    if lo > hi:
        erros.append(f"Campo '{nome}_lo' ({lo}) não pode ser maior que '{nome}_hi' ({hi})")

    return erros


def validar_ids_unicos(ids: Sequence[str]) -> bool:
    """
    Valida que não existem identificadores repetidos.

    Raises:
        ValidationError: Nomeando o primeiro id duplicado encontrado
    """
    vistos = set()
    for id_ in ids:
        if id_ in vistos:
            raise ValidationError(f"Identificador de imagem duplicado: '{id_}'")
        vistos.add(id_)
    return True
