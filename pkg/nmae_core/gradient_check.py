"""
Checagem de gradientes por diferenças finitas centrais.

Compara o gradiente analítico (autograd) de uma função escalar dos
parâmetros de um módulo com a derivada numérica (f(x+eps) − f(x−eps)) / 2eps
em entradas sorteadas de cada parâmetro.
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
import torch
import torch.nn as nn


PISO_RELATIVO = 1e-5


@dataclass
class RelatorioGradiente:
    """
    Resultado de uma checagem de gradientes.

    Attributes:
        erros: Maior erro relativo por parâmetro
        entradas: Número de entradas verificadas
        piores: Descrições das piores entradas (nome, índice, analítico, numérico)
    """
    erros: Dict[str, float] = field(default_factory=dict)
    entradas: int = 0
    piores: List[str] = field(default_factory=list)

    @property
    def max_erro_relativo(self) -> float:
        return max(self.erros.values(), default=0.0)

    def passou(self, tolerancia: float = 1e-4) -> bool:
        return self.max_erro_relativo < tolerancia


def erro_relativo(analitico: float, numerico: float, piso: float = PISO_RELATIVO) -> float:
    """|a − n| / max(|a|, |n|, piso)."""
    return abs(analitico - numerico) / max(abs(analitico), abs(numerico), piso)


def gradiente_analitico(modulo: nn.Module, f: Callable[[], torch.Tensor]) -> Dict[str, torch.Tensor]:
    """Gradiente de f() em relação a cada parâmetro do módulo (zeros se não houver dependência)."""
    modulo.zero_grad(set_to_none=True)
    f().backward()
    return {
        nome: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
        for nome, p in modulo.named_parameters()
    }


def numerical_grad(f: Callable[[], torch.Tensor], parametro: torch.Tensor, indice: tuple,
                   eps: float = 1e-5) -> float:
    """Derivada central de f() em relação a uma entrada do parâmetro."""
    with torch.no_grad():
        original = parametro[indice].item()
        parametro[indice] = original + eps
        f_mais = float(f())
        parametro[indice] = original - eps
        f_menos = float(f())
        parametro[indice] = original
    return (f_mais - f_menos) / (2.0 * eps)


def checar_gradientes(modulo: nn.Module, f: Callable[[], torch.Tensor], eps: float = 1e-5,
                      amostras_por_parametro: int = 3, rng: Optional[np.random.Generator] = None,
                      analitico: Optional[Dict[str, torch.Tensor]] = None) -> RelatorioGradiente:
    """
    Compara gradientes analíticos e numéricos em entradas sorteadas de todos os parâmetros.

    Args:
        modulo: Módulo cujos parâmetros são perturbados
        f: Função sem argumentos que recalcula a perda escalar
        eps: Passo das diferenças finitas
        amostras_por_parametro: Entradas verificadas por parâmetro
        rng: Gerador usado para sortear as entradas
        analitico: Gradientes já calculados (senão são calculados com f)
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    if analitico is None:
        analitico = gradiente_analitico(modulo, f)

    relatorio = RelatorioGradiente()
    piores = []
    for nome, p in modulo.named_parameters():
        n = p.numel()
        escolhidos = rng.choice(n, size=min(amostras_por_parametro, n), replace=False)
        maior = 0.0
        for plano in escolhidos:
            indice = tuple(int(i) for i in np.unravel_index(int(plano), tuple(p.shape)))
            a = float(analitico[nome][indice])
            numerico = numerical_grad(f, p.data, indice, eps)
            erro = erro_relativo(a, numerico)
            maior = max(maior, erro)
            piores.append((erro, f"{nome}{list(indice)}: analítico={a:.6e} numérico={numerico:.6e}"))
            relatorio.entradas += 1
        relatorio.erros[nome] = maior

    piores.sort(key=lambda t: t[0], reverse=True)
    relatorio.piores = [descricao for _, descricao in piores[:5]]
    return relatorio


def maior_diferenca(a: Dict[str, torch.Tensor], b: Dict[str, torch.Tensor]) -> float:
    """Maior erro relativo entre dois conjuntos de gradientes com os mesmos nomes."""
    maior = 0.0
    for nome, ga in a.items():
        gb = b[nome]
        diferenca = (ga - gb).abs().max().item() if ga.numel() else 0.0
        escala = max(ga.abs().max().item(), gb.abs().max().item(), PISO_RELATIVO) if ga.numel() else 1.0
        maior = max(maior, diferenca / escala)
    return maior
