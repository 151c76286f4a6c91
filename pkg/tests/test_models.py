"""
Testes para o módulo de modelos de dados.
"""

import json
import os

import pytest

from nmae_core.models import GeoBBox, ImageRecord, carregar_metadados, salvar_metadados
from nmae_core.validation import ValidationError


class TestGeoBBox:
    """Testes para a classe GeoBBox"""

    def test_bbox_valido(self):
        """Testa criação de retângulo válido"""
        bbox = GeoBBox(phi_min=-10.0, phi_max=-9.5, lambda_min=-50.0, lambda_max=-49.0)
        assert bbox.validar() == []
        assert bbox.altura == pytest.approx(0.5)
        assert bbox.largura == pytest.approx(1.0)
        assert bbox.area == pytest.approx(0.5)

    def test_bbox_invertido(self):
        """Testa que phi_min >= phi_max e lambda_min >= lambda_max são rejeitados"""
        erros = GeoBBox(phi_min=1.0, phi_max=0.0, lambda_min=2.0, lambda_max=2.0).validar()
        assert len(erros) == 2
        assert any("phi_min" in erro for erro in erros)
        assert any("lambda_min" in erro for erro in erros)

    def test_bbox_nao_finito(self):
        """Testa que NaN e infinito são rejeitados"""
        erros = GeoBBox(phi_min=float('nan'), phi_max=1.0, lambda_min=0.0, lambda_max=float('inf')).validar()
        assert any("phi_min" in erro and "finito" in erro for erro in erros)
        assert any("lambda_max" in erro and "finito" in erro for erro in erros)

    def test_bbox_nao_numerico(self):
        """Testa que valores não numéricos são rejeitados"""
        erros = GeoBBox(phi_min="0", phi_max=1.0, lambda_min=0.0, lambda_max=1.0).validar()
        assert any("numérico" in erro for erro in erros)


class TestImageRecord:
    """Testes para a classe ImageRecord"""

    def test_de_dict_e_para_dict(self):
        """Testa conversão do formato plano de metadados"""
        dados = {
            'id': 'a', 'path': 'images/a.png',
            'phi_min': 0.0, 'phi_max': 1.0, 'lambda_min': 2.0, 'lambda_max': 3.0,
            'width_px': 64, 'height_px': 32, 'timestamp': '2020-01-31T00:00:00Z',
        }
        registro = ImageRecord.de_dict(dados)
        assert registro.bbox == GeoBBox(0.0, 1.0, 2.0, 3.0)
        assert registro.validar() == []
        assert registro.para_dict() == dados

    def test_de_dict_ignora_comentarios(self):
        """Testa que chaves _comentario são ignoradas"""
        dados = {
            '_comentario': 'tile de teste', 'id': 'a', 'path': 'a.png',
            'phi_min': 0.0, 'phi_max': 1.0, 'lambda_min': 0.0, 'lambda_max': 1.0,
            'width_px': 8, 'height_px': 8,
        }
        assert ImageRecord.de_dict(dados).id == 'a'

    def test_de_dict_chaves_ausentes(self):
        """Testa que chaves obrigatórias ausentes são nomeadas no erro"""
        with pytest.raises(ValidationError) as exc_info:
            ImageRecord.de_dict({'id': 'a', 'path': 'a.png'})
        assert 'phi_min' in str(exc_info.value)
        assert 'width_px' in str(exc_info.value)

    def test_dimensoes_invalidas(self, bbox_exemplo):
        """Testa que width_px e height_px devem ser inteiros >= 1"""
        registro = ImageRecord(id='a', path='a.png', bbox=bbox_exemplo, width_px=0, height_px=True)
        erros = registro.validar()
        assert any('width_px' in erro for erro in erros)
        assert any('height_px' in erro for erro in erros)


class TestMetadados:
    """Testes para leitura e escrita do arquivo de metadados"""

    def _escrever(self, caminho, linhas):
        with open(caminho, 'w', encoding='utf-8') as f:
            for linha in linhas:
                f.write((linha if isinstance(linha, str) else json.dumps(linha)) + '\n')

    def test_carregar_resolve_caminhos_relativos(self, tmp_path):
        """Testa que caminhos relativos são resolvidos pelo diretório do arquivo"""
        caminho = tmp_path / 'metadata.jsonl'
        self._escrever(caminho, [
            {'id': 'a', 'path': 'images/a.png', 'phi_min': 0, 'phi_max': 1,
             'lambda_min': 0, 'lambda_max': 1, 'width_px': 8, 'height_px': 8},
            '',
            {'id': 'b', 'path': '/abs/b.png', 'phi_min': 0, 'phi_max': 1,
             'lambda_min': 0.5, 'lambda_max': 1.5, 'width_px': 8, 'height_px': 8},
        ])
        registros = carregar_metadados(str(caminho))
        assert [r.id for r in registros] == ['a', 'b']
        assert registros[0].path == os.path.join(str(tmp_path), 'images/a.png')
        assert registros[1].path == '/abs/b.png'

    def test_carregar_arquivo_inexistente(self, tmp_path):
        """Testa que arquivo inexistente gera FileNotFoundError"""
        with pytest.raises(FileNotFoundError):
            carregar_metadados(str(tmp_path / 'nao_existe.jsonl'))

    def test_carregar_json_invalido_cita_linha(self, tmp_path):
        """Testa que JSON inválido gera erro citando a linha"""
        caminho = tmp_path / 'metadata.jsonl'
        self._escrever(caminho, [
            {'id': 'a', 'path': 'a.png', 'phi_min': 0, 'phi_max': 1,
             'lambda_min': 0, 'lambda_max': 1, 'width_px': 8, 'height_px': 8},
            '{nao e json',
        ])
        with pytest.raises(ValidationError) as exc_info:
            carregar_metadados(str(caminho))
        assert 'Linha 2' in str(exc_info.value)

    def test_carregar_bbox_invalido_cita_id(self, tmp_path):
        """Testa que bbox degenerado gera erro citando o id"""
        caminho = tmp_path / 'metadata.jsonl'
        self._escrever(caminho, [
            {'id': 'ruim', 'path': 'a.png', 'phi_min': 1, 'phi_max': 1,
             'lambda_min': 0, 'lambda_max': 1, 'width_px': 8, 'height_px': 8},
        ])
        with pytest.raises(ValidationError) as exc_info:
            carregar_metadados(str(caminho))
        assert "'ruim'" in str(exc_info.value)

    def test_carregar_ids_duplicados(self, tmp_path):
        """Testa que ids duplicados são rejeitados"""
        caminho = tmp_path / 'metadata.jsonl'
        linha = {'id': 'a', 'path': 'a.png', 'phi_min': 0, 'phi_max': 1,
                 'lambda_min': 0, 'lambda_max': 1, 'width_px': 8, 'height_px': 8}
        self._escrever(caminho, [linha, linha])
        with pytest.raises(ValidationError) as exc_info:
            carregar_metadados(str(caminho))
        assert 'duplicado' in str(exc_info.value)

    def test_salvar_e_carregar(self, tmp_path, bbox_exemplo):
        """Testa que salvar com base grava caminhos relativos que carregar resolve de volta"""
        caminho_imagem = str(tmp_path / 'images' / 'a.png')
        registro = ImageRecord(id='a', path=caminho_imagem, bbox=bbox_exemplo, width_px=8, height_px=8)
        caminho = tmp_path / 'metadata.jsonl'
        salvar_metadados([registro], str(caminho), base=str(tmp_path))

        with open(caminho, 'r', encoding='utf-8') as f:
            assert json.loads(f.readline())['path'] == os.path.join('images', 'a.png')

        carregado = carregar_metadados(str(caminho))[0]
        assert carregado.path == caminho_imagem
        assert carregado.bbox == bbox_exemplo
