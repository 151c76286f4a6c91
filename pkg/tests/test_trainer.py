"""
Testes para o módulo de pré-treinamento.
"""

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np
import pytest
import torch

from nmae_core.checkpoint import carregar_checkpoint
from nmae_core.config import Config, DataConfig, TrainConfig, aplicar_ablacao
from nmae_core.geo_index import NeighborIndex, build_index
from nmae_core.masking import sample_mask
from nmae_core.models import GeoBBox
from nmae_core.toy_model import construir_modelo
from nmae_core.trainer import (
    PreparedPair,
    TrainingError,
    TrainState,
    ancoras_do_passo,
    criar_otimizador,
    lr_at,
    modelo_de_checkpoint,
    preparar_batch,
    pretrain,
    steps_per_epoch,
    total_steps,
    train_step,
)
from nmae_core.validation import ValidationError


def _com_treino(config, **campos):
    return replace(config, train=replace(config.train, **campos))


def _parametros(model):
    return {nome: p.detach().clone() for nome, p in model.named_parameters()}


class TestAgenda:
    """Testes para passos e taxa de aprendizado"""

    def test_steps_per_epoch(self):
        """Testa divisão inteira e conjunto menor que o batch"""
        assert steps_per_epoch(16, 4) == 4
        assert steps_per_epoch(17, 4) == 4
        with pytest.raises(ValidationError):
            steps_per_epoch(3, 4)

    def test_total_steps(self):
        """Testa floor(epochs · D / B) limitado por max_steps"""
        cfg = TrainConfig(batch_images=4, epochs=2.5, warmup_epochs=0.0)
        assert total_steps(cfg, 10) == 6
        assert total_steps(replace(cfg, max_steps=3), 10) == 3
        assert total_steps(replace(cfg, epochs=0.0), 10) == 0

    def test_lr_aquecimento_e_cosseno(self):
        """Testa lr 0 no início, pico no fim do aquecimento e ~0 no fim"""
        cfg = TrainConfig(base_lr=1.5e-4, batch_images=256, epochs=10.0, warmup_epochs=2.0)
        assert lr_at(0, cfg, 100) == 0.0
        assert lr_at(100, cfg, 100) == pytest.approx(cfg.actual_lr / 2)
        assert lr_at(200, cfg, 100) == pytest.approx(cfg.actual_lr)
        assert lr_at(600, cfg, 100) == pytest.approx(cfg.actual_lr / 2)
        assert lr_at(999, cfg, 100) < 1e-5 * cfg.actual_lr
        assert lr_at(1000, cfg, 100) <= 1e-6 * cfg.actual_lr

    def test_lr_monotona_apos_aquecimento(self):
        """Testa que o cosseno não cresce depois do aquecimento"""
        cfg = TrainConfig(batch_images=32, epochs=4.0, warmup_epochs=1.0)
        taxas = [lr_at(s, cfg, 25) for s in range(25, 101)]
        assert all(a >= b for a, b in zip(taxas, taxas[1:]))

    def test_lr_sem_aquecimento(self):
        """Testa que sem aquecimento o passo 0 já usa o pico"""
        cfg = TrainConfig(batch_images=32, epochs=1.0, warmup_epochs=0.0)
        assert lr_at(0, cfg, 10) == pytest.approx(cfg.actual_lr)
        with pytest.raises(ValidationError):
            lr_at(-1, cfg, 10)

    def test_otimizador(self, modelo_minimo):
        """Testa AdamW com decaimento só em parâmetros de 2 ou mais dimensões"""
        otimizador = criar_otimizador(modelo_minimo, TrainConfig())
        com_decay, sem_decay = otimizador.param_groups
        assert com_decay['weight_decay'] == 0.05 and sem_decay['weight_decay'] == 0.0
        assert all(p.ndim >= 2 for p in com_decay['params'])
        assert all(p.ndim < 2 for p in sem_decay['params'])
        assert com_decay['betas'] == (0.9, 0.95)


class TestAncoras:
    """Testes para o sorteio de âncoras"""

    def test_permutacao_por_ciclo(self):
        """Testa que cada ciclo de n âncoras é uma permutação"""
        ancoras = [a for step in range(8) for a in ancoras_do_passo(step, 16, 2, seed=0)]
        assert sorted(ancoras[:16]) == list(range(16))

    def test_depende_so_de_semente_e_passo(self):
        """Testa reprodutibilidade e sensibilidade à semente"""
        assert ancoras_do_passo(5, 10, 3, seed=1) == ancoras_do_passo(5, 10, 3, seed=1)
        sequencia_a = [ancoras_do_passo(s, 10, 3, seed=1) for s in range(4)]
        sequencia_b = [ancoras_do_passo(s, 10, 3, seed=2) for s in range(4)]
        assert sequencia_a != sequencia_b


class TestPreparacao:
    """Testes para a preparação de pares e batches"""

    def test_batch_deterministico(self, mundo_pequeno, config_minima):
        """Testa que o mesmo passo produz os mesmos pares, em série ou em paralelo"""
        indice = build_index(mundo_pequeno.records, 0.1)
        serie = preparar_batch(3, mundo_pequeno.records, indice, config_minima)
        with ThreadPoolExecutor(max_workers=2) as executor:
            paralelo = preparar_batch(3, mundo_pequeno.records, indice, config_minima, executor=executor)

        assert len(serie) == 2
        for a, b in zip(serie, paralelo):
            assert a.ids == b.ids
            np.testing.assert_array_equal(a.par.img_i.pixels, b.par.img_i.pixels)
            np.testing.assert_array_equal(a.masks[1].mask, b.masks[1].mask)
            assert a.par.mask_ratio == b.par.mask_ratio

    def test_vizinho_do_indice(self, mundo_pequeno, config_minima):
        """Testa que a segunda imagem do par é vizinha da âncora"""
        indice = build_index(mundo_pequeno.records, 0.1)
        for item in preparar_batch(0, mundo_pequeno.records, indice, config_minima):
            ancora, vizinho = item.ids
            assert vizinho in indice.table[ancora]
            assert 0.75 <= item.par.mask_ratio <= 0.85
            assert len(item.masks) == 2

    def test_sem_vizinhos_pareia_consigo(self, mundo_pequeno, config_minima):
        """Testa que âncora sem vizinhos é pareada consigo mesma"""
        vazio = NeighborIndex(alpha=1.0, table={r.id: () for r in mundo_pequeno.records})
        for item in preparar_batch(0, mundo_pequeno.records, vazio, config_minima):
            assert item.ids[0] == item.ids[1]

    def test_imagem_isolada(self, mundo_pequeno, config_minima):
        """Testa pairing 'single': uma máscara e razão m1"""
        config = replace(config_minima, data=DataConfig(pairing='single'))
        for item in preparar_batch(0, mundo_pequeno.records, None, config):
            assert len(item.masks) == 1
            assert item.par.mask_ratio == config.mask.mask_m1


class TestTrainStep:
    """Testes para o passo de otimização"""

    def _estado(self, config):
        model = construir_modelo(config.model, seed=0)
        return TrainState(step=0, images_seen=0, model=model, optimizer=criar_otimizador(model, config.train))

    def _item(self, criar_par, pixels_j=None, seed=0, bbox_j=GeoBBox(0, 1, 0.5, 1.5)):
        rng = np.random.default_rng(seed)
        par = criar_par(GeoBBox(0, 1, 0, 1), bbox_j, seed=seed, pixels_j=pixels_j)
        par.mask_ratio = 0.75
        return PreparedPair(par=par, masks=(sample_mask((4, 4), 0.75, rng), sample_mask((4, 4), 0.75, rng)))

    @staticmethod
    def _gradientes(model):
        return {nome: p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
                for nome, p in model.named_parameters()}

    def test_atualiza_estado(self, config_minima, criar_par):
        """Testa contadores, métricas e mudança dos parâmetros"""
        state = self._estado(config_minima)
        antes = _parametros(state.model)
        state, registro = train_step(state, [self._item(criar_par), self._item(criar_par)], config_minima, 1e-3)

        assert (state.step, state.images_seen) == (1, 4)
        assert (registro.step, registro.images_seen, registro.lr, registro.policy) == (1, 4, 1e-3, 'ours')
        assert registro.mask_ratio == 0.75
        assert 0.0 <= registro.cross_fraction <= 1.0
        assert any(not torch.equal(antes[n], p) for n, p in state.model.named_parameters())

    def test_gradiente_e_media_dos_pares(self, config_minima, criar_par):
        """Testa que o gradiente de um batch de 2 pares é a média dos gradientes de cada par"""
        itens = [self._item(criar_par, seed=0),
                 self._item(criar_par, seed=1, bbox_j=GeoBBox(0.3, 1.3, 0.2, 1.2))]

        conjunto = self._estado(config_minima)
        _, registro = train_step(conjunto, itens, config_minima, 0.0)
        gradiente_batch = self._gradientes(conjunto.model)

        separados, perdas = [], []
        for item in itens:
            estado = self._estado(config_minima)
            _, registro_par = train_step(estado, [item], config_minima, 0.0)
            separados.append(self._gradientes(estado.model))
            perdas.append(registro_par.loss)

        assert registro.loss == pytest.approx(np.mean(perdas), abs=1e-12)
        for nome, valor in gradiente_batch.items():
            media = (separados[0][nome] + separados[1][nome]) / 2
            torch.testing.assert_close(valor, media, atol=1e-6, rtol=0.0, msg=nome)
        assert any(float(v.abs().max()) > 0 for v in gradiente_batch.values())

    def test_taxa_zero_preserva_parametros(self, config_minima, criar_par):
        """Testa que lr = 0 não altera nenhum parâmetro, mesmo com decaimento de pesos"""
        state = self._estado(config_minima)
        antes = _parametros(state.model)
        state, _ = train_step(state, [self._item(criar_par), self._item(criar_par, seed=1)], config_minima, 0.0)

        assert state.step == 1
        for nome, p in state.model.named_parameters():
            assert torch.equal(antes[nome], p.detach()), nome

    def test_batch_vazio(self, config_minima):
        """Testa que batch vazio é rejeitado"""
        with pytest.raises(ValidationError):
            train_step(self._estado(config_minima), [], config_minima, 1e-3)

    def test_perda_nao_finita(self, config_minima, criar_par):
        """Testa que perda NaN gera TrainingError com os ids do par"""
        item = self._item(criar_par, pixels_j=np.full((16, 16, 3), np.nan))
        with pytest.raises(TrainingError) as exc_info:
            train_step(self._estado(config_minima), [item], config_minima, 1e-3)
        assert exc_info.value.pares == [('i', 'j')]
        assert exc_info.value.step == 0


class TestPretrain:
    """Testes para o pré-treinamento completo"""

    def test_zero_epocas(self, mundo_pequeno, config_minima, tmp_path):
        """Testa que epochs = 0 salva checkpoint igual à inicialização"""
        config = _com_treino(config_minima, epochs=0.0, max_steps=0)
        resultado = pretrain(mundo_pequeno.records, build_index(mundo_pequeno.records, 0.1), config, str(tmp_path))

        checkpoint = carregar_checkpoint(resultado.checkpoint)
        assert checkpoint.step == 0
        inicial = _parametros(construir_modelo(config.model, seed=0))
        for nome, valor in checkpoint.parametros().items():
            np.testing.assert_array_equal(valor, inicial[nome].numpy())
        assert resultado.registros == []

    def test_saidas(self, mundo_pequeno, config_minima, tmp_path):
        """Testa checkpoint, métricas JSON Lines, log e callback"""
        vistos = []
        resultado = pretrain(mundo_pequeno.records, build_index(mundo_pequeno.records, 0.1), config_minima,
                             str(tmp_path), ao_registrar=vistos.append)

        assert [r.step for r in resultado.registros] == [1, 2]
        assert vistos == resultado.registros
        assert os.path.exists(resultado.checkpoint)
        with open(resultado.log, 'r', encoding='utf-8') as f:
            log = json.load(f)
        assert log['steps'] == 2
        assert log['images_seen'] == 8
        assert log['policy'] == 'ours'
        assert carregar_checkpoint(resultado.checkpoint).images_seen == 8

    def test_deterministico(self, mundo_pequeno, config_minima, tmp_path):
        """Testa que a mesma semente reproduz perdas e parâmetros"""
        indice = build_index(mundo_pequeno.records, 0.1)
        a = pretrain(mundo_pequeno.records, indice, config_minima, str(tmp_path / 'a'))
        b = pretrain(mundo_pequeno.records, indice, config_minima, str(tmp_path / 'b'))
        assert [r.loss for r in a.registros] == [r.loss for r in b.registros]
        for (nome, pa), (_, pb) in zip(a.state.model.named_parameters(), b.state.model.named_parameters()):
            assert torch.equal(pa, pb), nome

    def test_retomada(self, mundo_pequeno, config_minima, tmp_path):
        """Testa que retomar do passo 1 reproduz o treinamento contínuo"""
        indice = build_index(mundo_pequeno.records, 0.1)
        config = _com_treino(config_minima, checkpoint_every=1)
        continuo = pretrain(mundo_pequeno.records, indice, config, str(tmp_path / 'continuo'))
        intermediario = os.path.join(str(tmp_path / 'continuo'), 'checkpoints', 'ckpt_step00000001.nmck')
        assert os.path.exists(intermediario)

        retomado = pretrain(mundo_pequeno.records, indice, config, str(tmp_path / 'retomado'), resume=intermediario)
        assert retomado.state.step == 2
        assert [r.step for r in retomado.registros] == [2]
        assert retomado.registros[0].loss == continuo.registros[1].loss
        for (nome, pa), (_, pb) in zip(continuo.state.model.named_parameters(),
                                       retomado.state.model.named_parameters()):
            assert torch.equal(pa, pb), nome

    def test_modelo_de_checkpoint(self, mundo_pequeno, config_minima, tmp_path):
        """Testa reconstrução do modelo e da configuração a partir do checkpoint"""
        resultado = pretrain(mundo_pequeno.records, build_index(mundo_pequeno.records, 0.1), config_minima,
                             str(tmp_path))
        model, config = modelo_de_checkpoint(carregar_checkpoint(resultado.checkpoint))
        assert config == config_minima
        for (nome, pa), (_, pb) in zip(model.named_parameters(), resultado.state.model.named_parameters()):
            assert torch.equal(pa, pb), nome

    def test_argumentos_invalidos(self, mundo_pequeno, config_minima, tmp_path):
        """Testa índice ausente, configuração inválida e conjunto pequeno"""
        with pytest.raises(ValidationError):
            pretrain(mundo_pequeno.records, None, config_minima, str(tmp_path))
        with pytest.raises(ValidationError):
            pretrain(mundo_pequeno.records, None, _com_treino(config_minima, batch_images=3), str(tmp_path))
        with pytest.raises(ValidationError):
            pretrain(mundo_pequeno.records[:2], build_index(mundo_pequeno.records[:2], 0.1),
                     config_minima, str(tmp_path))

    def test_max_steps_trunca_agenda(self, mundo_pequeno, config_minima, tmp_path):
        """Testa que max_steps interrompe a agenda definida por epochs sem reescalá-la"""
        resultado = pretrain(mundo_pequeno.records, build_index(mundo_pequeno.records, 0.1), config_minima,
                             str(tmp_path))
        passos_epoca = steps_per_epoch(len(mundo_pequeno.records), config_minima.train.batch_images)
        assert passos_epoca == 4

        taxas = [r.lr for r in resultado.registros]
        assert taxas == [pytest.approx(lr_at(k, config_minima.train, passos_epoca)) for k in range(2)]
        assert taxas[-1] == pytest.approx(config_minima.train.actual_lr * 0.5 * (1 + np.cos(np.pi / 4)))

    def test_vizinho_fora_dos_registros(self, mundo_pequeno, config_minima, tmp_path):
        """Testa que índice com vizinhos ausentes do conjunto gera ValidationError antes de treinar"""
        indice = build_index(mundo_pequeno.records, 0.0)
        parcial = mundo_pequeno.records[1:]
        assert any(mundo_pequeno.records[0].id in indice.table[r.id] for r in parcial)

        with pytest.raises(ValidationError) as exc_info:
            pretrain(parcial, indice, config_minima, str(tmp_path))
        assert mundo_pequeno.records[0].id in str(exc_info.value)
        assert not os.path.exists(os.path.join(str(tmp_path), 'metrics.jsonl'))

    @pytest.mark.slow
    def test_politicas_deterministicas_e_distintas(self, mundo_pequeno, config_minima, tmp_path):
        """Testa que full_all e ours são reprodutíveis e seguem trajetórias diferentes"""
        indice = build_index(mundo_pequeno.records, 0.1)
        config = _com_treino(config_minima, epochs=2.0, max_steps=6)
        perdas = {}
        for politica in ('ours', 'full_all'):
            variante = aplicar_ablacao(config, f'weights={politica}')
            execucoes = [
                [r.loss for r in pretrain(mundo_pequeno.records, indice, variante,
                                          str(tmp_path / f'{politica}_{k}')).registros]
                for k in range(2)
            ]
            assert execucoes[0] == execucoes[1]
            perdas[politica] = execucoes[0]
        assert perdas['ours'] != perdas['full_all']

    @pytest.mark.slow
    def test_perda_cai_no_mundo_sintetico(self, tmp_path):
        """Testa 300 passos com batch 32 em 400 tiles: perda final abaixo de metade da inicial"""
        from nmae_core.synthetic_world import WorldSpec, generate

        mundo = generate(WorldSpec(world_px=1024, tile_px=64, n_tiles=400, seed=0), str(tmp_path / 'mundo'))
        config = _com_treino(Config(), batch_images=32, epochs=24.0, warmup_epochs=2.0, max_steps=300, threads=4)
        resultado = pretrain(mundo.records, build_index(mundo.records, 0.1), config, str(tmp_path / 'run'))

        perdas = [r.loss for r in resultado.registros]
        assert len(perdas) == 300
        assert np.mean(perdas[-10:]) < 0.5 * np.mean(perdas[:10])
