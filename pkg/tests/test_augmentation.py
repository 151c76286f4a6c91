"""
Testes para o módulo de aumentação.
"""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nmae_core.augmentation import (
    AugmentedPair,
    CropParams,
    augment_pair,
    carregar_imagem,
    com_razao,
    crop_bbox,
    montar_par,
    random_resized_crop,
    redimensionar,
    salvar_imagem,
    sortear_recorte,
)
from nmae_core.config import AugmentationConfig
from nmae_core.geo_index import iou
from nmae_core.models import GeoBBox, ImageRecord
from nmae_core.validation import GeometryError, ValidationError


def _pixels(H: int, W: int, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).uniform(0.0, 1.0, size=(H, W, 3))


def _contido(externo: GeoBBox, interno: GeoBBox) -> bool:
    return (externo.phi_min <= interno.phi_min and interno.phi_max <= externo.phi_max
            and externo.lambda_min <= interno.lambda_min and interno.lambda_max <= externo.lambda_max)


class TestCropBBox:
    """Testes para a propagação do retângulo através do recorte"""

    def test_metade_superior(self):
        """Testa que a metade superior fica com a metade norte das latitudes"""
        bbox = crop_bbox(GeoBBox(0, 1, 0, 1), CropParams(0, 0, 50, 100), 100, 100)
        assert bbox == GeoBBox(0.5, 1.0, 0.0, 1.0)

    def test_recorte_interno(self):
        """Testa recorte i=25, j=50, h=50, w=25 numa imagem 100×100"""
        bbox = crop_bbox(GeoBBox(10, 20, 30, 40), CropParams(25, 50, 50, 25), 100, 100)
        assert bbox.phi_min == pytest.approx(12.5)
        assert bbox.phi_max == pytest.approx(17.5)
        assert bbox.lambda_min == pytest.approx(35.0)
        assert bbox.lambda_max == pytest.approx(37.5)

    def test_recorte_identidade(self):
        """Testa que o recorte da imagem inteira preserva o retângulo exatamente"""
        origem = GeoBBox(-10.123, -9.456, 47.1, 48.9)
        assert crop_bbox(origem, CropParams(0, 0, 37, 53), 37, 53) == origem

    def test_recorte_fora_da_imagem(self):
        """Testa que recorte fora dos limites gera GeometryError"""
        with pytest.raises(GeometryError):
            crop_bbox(GeoBBox(0, 1, 0, 1), CropParams(60, 0, 50, 100), 100, 100)
        with pytest.raises(GeometryError):
            crop_bbox(GeoBBox(0, 1, 0, 1), CropParams(0, 0, 0, 10), 100, 100)

    @pytest.mark.property
    @given(
        st.integers(8, 200), st.integers(8, 200),
        st.integers(0, 2 ** 32 - 1),
    )
    def test_recorte_contido_na_origem(self, H, W, semente):
        """Property: o retângulo do recorte fica contido no retângulo de origem"""
        origem = GeoBBox(-3.0, 2.0, 100.0, 101.5)
        crop = sortear_recorte(H, W, np.random.default_rng(semente))
        bbox = crop_bbox(origem, crop, H, W)
        assert _contido(origem, bbox)
        assert bbox.validar() == []


class TestSortearRecorte:
    """Testes para o sorteio dos parâmetros do recorte"""

    @pytest.mark.property
    @given(st.integers(4, 300), st.integers(4, 300), st.integers(0, 2 ** 32 - 1))
    def test_recorte_dentro_da_imagem(self, H, W, semente):
        """Property: o recorte sorteado sempre cabe na imagem"""
        crop = sortear_recorte(H, W, np.random.default_rng(semente))
        assert crop.validar(H, W) == []

    def test_fracao_de_area(self):
        """Testa que a fração de área média fica próxima do centro da faixa"""
        rng = np.random.default_rng(0)
        fracoes = []
        for _ in range(2000):
            crop = sortear_recorte(200, 200, rng, scale=(0.2, 1.0))
            fracoes.append(crop.h * crop.w / 200 ** 2)
        assert min(fracoes) >= 0.19
        assert np.mean(fracoes) == pytest.approx(0.6, abs=0.03)

    def test_faixas_invalidas(self):
        """Testa rejeição de faixas de escala e aspecto inválidas"""
        rng = np.random.default_rng(0)
        with pytest.raises(ValidationError):
            sortear_recorte(10, 10, rng, scale=(0.0, 1.0))
        with pytest.raises(ValidationError):
            sortear_recorte(10, 10, rng, aspect=(2.0, 1.0))


class TestRandomResizedCrop:
    """Testes para o Random-Resized-Crop completo"""

    def test_tamanho_de_saida(self, registro_exemplo):
        """Testa que a saída tem o tamanho pedido e valores em [0, 1]"""
        saida = random_resized_crop(registro_exemplo, _pixels(64, 64), np.random.default_rng(1), out_size=(16, 16))
        assert saida.pixels.shape == (16, 16, 3)
        assert saida.pixels.min() >= 0.0 and saida.pixels.max() <= 1.0
        assert saida.source_id == 'img_a'
        assert not saida.espelhado
        assert _contido(registro_exemplo.bbox, saida.bbox)

    def test_dimensoes_divergentes(self, registro_exemplo):
        """Testa que pixels com dimensões diferentes dos metadados são rejeitados"""
        with pytest.raises(ValidationError) as exc_info:
            random_resized_crop(registro_exemplo, _pixels(32, 64), np.random.default_rng(0))
        assert 'img_a' in str(exc_info.value)

    def test_deterministico(self, registro_exemplo):
        """Testa que a mesma semente reproduz recorte e pixels"""
        pixels = _pixels(64, 64)
        a = random_resized_crop(registro_exemplo, pixels, np.random.default_rng(5), out_size=(16, 16))
        b = random_resized_crop(registro_exemplo, pixels, np.random.default_rng(5), out_size=(16, 16))
        assert a.crop == b.crop
        assert a.bbox == b.bbox
        np.testing.assert_array_equal(a.pixels, b.pixels)

    def test_inversao_horizontal(self, registro_exemplo):
        """Testa que a inversão espelha os pixels sem alterar recorte nem retângulo"""
        pixels = _pixels(64, 64)
        espelhados = 0
        for semente in range(20):
            normal = random_resized_crop(registro_exemplo, pixels, np.random.default_rng(semente), out_size=(8, 8))
            talvez = random_resized_crop(registro_exemplo, pixels, np.random.default_rng(semente), out_size=(8, 8),
                                         flip_enabled=True)
            assert talvez.crop == normal.crop
            assert talvez.bbox == normal.bbox
            if talvez.espelhado:
                espelhados += 1
                np.testing.assert_allclose(talvez.pixels, normal.pixels[:, ::-1])
            else:
                np.testing.assert_allclose(talvez.pixels, normal.pixels)
        assert 0 < espelhados < 20

    def test_redimensionar_mesmo_tamanho(self):
        """Testa que redimensionar para o mesmo tamanho devolve cópia idêntica"""
        pixels = _pixels(8, 8)
        saida = redimensionar(pixels, (8, 8))
        np.testing.assert_array_equal(saida, pixels)
        assert saida is not pixels


class TestAugmentPair:
    """Testes para a aumentação de pares"""

    def _carregador(self, tabela):
        return lambda caminho: tabela[caminho]

    def test_par_deterministico(self, registro_exemplo):
        """Testa que a mesma semente produz o mesmo par"""
        vizinho = ImageRecord(id='img_b', path='img_b.png', bbox=GeoBBox(0.0, 1.0, 0.5, 1.5),
                              width_px=64, height_px=64)
        carregar = self._carregador({'img_a.png': _pixels(64, 64, 1), 'img_b.png': _pixels(64, 64, 2)})
        config = AugmentationConfig()

        a = augment_pair(registro_exemplo, vizinho, np.random.default_rng(3), config, (16, 16), carregar)
        b = augment_pair(registro_exemplo, vizinho, np.random.default_rng(3), config, (16, 16), carregar)
        assert [x.crop for x in a] == [x.crop for x in b]
        assert a[0].source_id == 'img_a' and a[1].source_id == 'img_b'

    def test_auto_par_com_sorteios_independentes(self, registro_exemplo):
        """Testa que o mesmo registro nas duas posições recebe recortes independentes"""
        carregar = self._carregador({'img_a.png': _pixels(64, 64)})
        diferentes = 0
        rng = np.random.default_rng(0)
        for _ in range(10):
            img_i, img_j = augment_pair(registro_exemplo, registro_exemplo, rng, AugmentationConfig(), (8, 8), carregar)
            diferentes += img_i.crop != img_j.crop
        assert diferentes >= 8

    def test_montar_par(self, registro_exemplo):
        """Testa que montar_par calcula IoU e referencial comum a partir dos recortes"""
        vizinho = ImageRecord(id='img_b', path='img_b.png', bbox=GeoBBox(0.0, 1.0, 0.5, 1.5),
                              width_px=64, height_px=64)
        carregar = self._carregador({'img_a.png': _pixels(64, 64, 1), 'img_b.png': _pixels(64, 64, 2)})
        par = montar_par(registro_exemplo, vizinho, np.random.default_rng(8), AugmentationConfig(), (16, 16), carregar)

        assert isinstance(par, AugmentedPair)
        assert par.iou == iou(par.img_i.bbox, par.img_j.bbox)
        assert par.nb_i.validar() == [] and par.nb_j.validar() == []
        assert par.mask_ratio is None
        assert com_razao(par, 0.8).mask_ratio == 0.8
        assert par.ids == ('img_a', 'img_b')


class TestArquivosDeImagem:
    """Testes para leitura e escrita de PNG"""

    def test_salvar_e_carregar(self, tmp_path):
        """Testa que a quantização em 8 bits erra no máximo meio nível"""
        pixels = _pixels(12, 10)
        caminho = str(tmp_path / 'img.png')
        salvar_imagem(pixels, caminho)
        lido = carregar_imagem(caminho)
        assert lido.shape == (12, 10, 3)
        np.testing.assert_allclose(lido, pixels, atol=0.5 / 255 + 1e-12)

    def test_arquivo_ilegivel(self, tmp_path):
        """Testa que arquivo inválido gera IOError citando o caminho"""
        caminho = tmp_path / 'quebrado.png'
        caminho.write_bytes(b'nao e png')
        with pytest.raises(IOError) as exc_info:
            carregar_imagem(str(caminho))
        assert 'quebrado.png' in str(exc_info.value)
