"""
Testes para a checagem de gradientes por diferenças finitas.
"""

import numpy as np
import pytest
import torch
import torch.nn as nn

from nmae_core.gradient_check import (
    checar_gradientes,
    erro_relativo,
    gradiente_analitico,
    maior_diferenca,
    numerical_grad,
)
from nmae_core.masking import sample_mask
from nmae_core.toy_model import forward_loss


def _linear():
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(0)
        return nn.Linear(3, 2).double()


class TestErroRelativo:
    """Testes para o erro relativo"""

    def test_valores(self):
        """Testa erro relativo com e sem piso"""
        assert erro_relativo(1.0, 1.0) == 0.0
        assert erro_relativo(2.0, 1.0) == pytest.approx(0.5)
        assert erro_relativo(0.0, 1e-7) == pytest.approx(1e-7 / 1e-5)


class TestNumericalGrad:
    """Testes para a derivada numérica"""

    def test_quadratica(self):
        """Testa derivada de soma de quadrados e restauração do parâmetro"""
        p = torch.tensor([[1.5, -2.0]], dtype=torch.float64)
        derivada = numerical_grad(lambda: (p ** 2).sum(), p, (0, 1))
        assert derivada == pytest.approx(-4.0, rel=1e-8)
        assert p[0, 1].item() == -2.0


class TestChecarGradientes:
    """Testes para a checagem completa"""

    def test_linear_passa(self):
        """Testa que o gradiente do autograd confere numa camada linear"""
        modulo = _linear()
        x = torch.tensor([[0.3, -1.2, 0.7]], dtype=torch.float64)
        relatorio = checar_gradientes(modulo, lambda: (modulo(x) ** 2).sum(), amostras_por_parametro=6)
        assert relatorio.passou()
        assert relatorio.entradas == 6 + 2
        assert set(relatorio.erros) == {'weight', 'bias'}

    def test_gradiente_errado_falha(self):
        """Testa que um gradiente analítico adulterado é detectado"""
        modulo = _linear()
        x = torch.tensor([[0.3, -1.2, 0.7]], dtype=torch.float64)
        f = lambda: (modulo(x) ** 2).sum()  # noqa: E731
        analitico = {nome: 2.0 * g for nome, g in gradiente_analitico(modulo, f).items()}
        relatorio = checar_gradientes(modulo, f, analitico=analitico)
        assert not relatorio.passou()
        assert relatorio.max_erro_relativo == pytest.approx(0.5, rel=1e-4)
        assert relatorio.piores

    def test_gradiente_analitico_sem_dependencia(self):
        """Testa que parâmetros sem efeito na perda recebem gradiente zero"""
        modulo = _linear()
        grads = gradiente_analitico(modulo, lambda: modulo.bias.sum())
        assert torch.count_nonzero(grads['weight']) == 0
        assert torch.equal(grads['bias'], torch.ones(2, dtype=torch.float64))

    def test_maior_diferenca(self):
        """Testa a maior diferença relativa entre conjuntos de gradientes"""
        a = {'w': torch.tensor([1.0, 2.0]), 'b': torch.tensor([0.0])}
        b = {'w': torch.tensor([1.0, 2.5]), 'b': torch.tensor([0.0])}
        assert maior_diferenca(a, a) == 0.0
        assert maior_diferenca(a, b) == pytest.approx(0.5 / 2.5)

    @pytest.mark.slow
    def test_perda_do_modelo(self, modelo_minimo, par_sintetico):
        """Testa o gradiente da perda ponderada do par com pesos fixos"""
        rng = np.random.default_rng(0)
        mascaras = (sample_mask((4, 4), 0.75, rng), sample_mask((4, 4), 0.75, rng))
        pesos = forward_loss(modelo_minimo, par_sintetico, mascaras).pesos

        def perda():
            return forward_loss(modelo_minimo, par_sintetico, mascaras, pesos_fixos=pesos).loss

        relatorio = checar_gradientes(modelo_minimo, perda, amostras_por_parametro=1, rng=rng)
        assert relatorio.passou(1e-4), relatorio.piores
