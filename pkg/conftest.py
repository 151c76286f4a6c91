"""
Configuração do pytest e fixtures básicas para testes do nmae-cli
"""

import sys

import numpy as np
import pytest
from hypothesis import settings, Verbosity

# Configurar encoding UTF-8 para stdout/stderr no Windows
# Isso evita erros de encoding com emojis e caracteres especiais
if sys.platform == 'win32':
    if hasattr(sys.stdout, 'buffer'):
        sys.stdout.reconfigure(encoding='utf-8', errors='replace')
    if hasattr(sys.stderr, 'buffer'):
        sys.stderr.reconfigure(encoding='utf-8', errors='replace')

# Configuração global do Hypothesis para property-based testing
settings.register_profile("default", max_examples=100, deadline=None, verbosity=Verbosity.normal)
settings.register_profile("ci", max_examples=200, deadline=None, verbosity=Verbosity.verbose)
settings.load_profile("default")


# ============================================================================
# Fixtures de Configuração
# ============================================================================

@pytest.fixture
def config_modelo_minimo():
    """Fixture com ModelConfig 16×16, patch 4, dimensão 32"""
    from nmae_core.config import ModelConfig
    return ModelConfig(input_size=16, patch_size=4, enc_dim=32, dec_dim=32,
                       enc_depth=1, dec_depth=1, heads=4, dtype='float64')


@pytest.fixture
def config_minima(config_modelo_minimo):
    """Fixture com Config completa para pré-treinamentos rápidos (batch 4, 2 passos)"""
    from nmae_core.config import Config, TrainConfig
    return Config(
        model=config_modelo_minimo,
        train=TrainConfig(batch_images=4, epochs=1.0, warmup_epochs=0.0, max_steps=2),
    )


@pytest.fixture
def modelo_minimo(config_modelo_minimo):
    """Fixture com ToyMAE construído a partir de config_modelo_minimo"""
    from nmae_core.toy_model import construir_modelo
    return construir_modelo(config_modelo_minimo, seed=0)


# ============================================================================
# Fixtures de Geometria e Pares
# ============================================================================

@pytest.fixture
def bbox_exemplo():
    """Fixture com retângulo georreferenciado de 1°×1°"""
    from nmae_core.models import GeoBBox
    return GeoBBox(phi_min=0.0, phi_max=1.0, lambda_min=0.0, lambda_max=1.0)


@pytest.fixture
def registro_exemplo(bbox_exemplo):
    """Fixture com ImageRecord sem arquivo associado"""
    from nmae_core.models import ImageRecord
    return ImageRecord(id='img_a', path='img_a.png', bbox=bbox_exemplo, width_px=64, height_px=64)


@pytest.fixture
def criar_par():
    """Fixture que monta AugmentedPair em memória (pixels aleatórios, retângulos dados)"""
    from nmae_core.augmentation import AugmentedImage, AugmentedPair, CropParams
    from nmae_core.geo_index import iou
    from nmae_core.relpos_embedding import normalize_pair

    def _criar(bbox_i, bbox_j, lado: int = 16, seed: int = 0, pixels_j=None):
        rng = np.random.default_rng(seed)
        pixels_i = rng.uniform(0.0, 1.0, size=(lado, lado, 3))
        if pixels_j is None:
            pixels_j = rng.uniform(0.0, 1.0, size=(lado, lado, 3))
        nb_i, nb_j = normalize_pair(bbox_i, bbox_j)
        return AugmentedPair(
            img_i=AugmentedImage(pixels_i, bbox_i, 'i', CropParams(0, 0, lado, lado)),
            img_j=AugmentedImage(pixels_j, bbox_j, 'j', CropParams(0, 0, lado, lado)),
            nb_i=nb_i, nb_j=nb_j, iou=iou(bbox_i, bbox_j),
        )
    return _criar


@pytest.fixture
def par_sintetico(criar_par):
    """Fixture com par 16×16 de retângulos deslocados meio lado na longitude"""
    from nmae_core.models import GeoBBox
    return criar_par(GeoBBox(0.0, 1.0, 0.0, 1.0), GeoBBox(0.0, 1.0, 0.5, 1.5))


# ============================================================================
# Fixtures de Arquivos Temporários
# ============================================================================

@pytest.fixture
def mundo_pequeno(tmp_path):
    """Fixture que gera um mundo sintético 128² com 16 tiles de 32² (grid_adjacent)"""
    from nmae_core.synthetic_world import WorldSpec, generate
    spec = WorldSpec(world_px=128, noise_octaves=3, seed=0, tile_px=32, n_tiles=16)
    return generate(spec, str(tmp_path / 'mundo'))


# ============================================================================
# Markers de Teste
# ============================================================================

def pytest_configure(config):
    """Configura markers customizados para pytest"""
    config.addinivalue_line(
        "markers", "unit: marca testes unitários"
    )
    config.addinivalue_line(
        "markers", "integration: marca testes de integração"
    )
    config.addinivalue_line(
        "markers", "property: marca testes property-based"
    )
    config.addinivalue_line(
        "markers", "slow: marca testes lentos"
    )
