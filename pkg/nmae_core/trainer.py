"""
Módulo de pré-treinamento.

Este módulo é responsável por:
- Agenda de taxa de aprendizado (aquecimento linear + decaimento cosseno)
- Sorteio determinístico de âncoras e vizinhos a partir de (semente, passo)
- Preparação paralela dos pares (aumentação e máscaras)
- Passo de otimização AdamW com perda média por par
- Métricas em JSON Lines, checkpoints NMCK e retomada
"""

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from .augmentation import AugmentedPair, carregar_imagem, com_razao, montar_par, random_resized_crop
from .checkpoint import Checkpoint, carregar_checkpoint, salvar_checkpoint
from .config import Config, TrainConfig
from .file_manager import FileManager
from .geo_index import NeighborIndex, sample_neighbor
from .logger import ArquivoMetricas, RegistroMetricas, criar_log_treino
from .masking import PatchMask, mask_pair, sample_mask
from .models import ImageRecord
from .relpos_embedding import single_image_box
from .toy_model import ToyMAE, construir_modelo, forward_loss
from .validation import ValidationError
from .visibility_loss import cross_fraction


SEMENTE_ANCORAS = 1_000_003


class TrainingError(Exception):
    """Exceção para perda não finita durante o treinamento (carrega os ids dos pares)."""

    def __init__(self, mensagem: str, pares: Sequence[Tuple[str, str]] = (), step: Optional[int] = None):
        super().__init__(mensagem)
        self.pares = list(pares)
        self.step = step


@dataclass
class PreparedPair:
    """Par aumentado e mascarado, pronto para forward_loss."""
    par: AugmentedPair
    masks: Tuple[PatchMask, ...]

    @property
    def ids(self) -> Tuple[str, str]:
        return self.par.ids


@dataclass
class TrainState:
    """
    Estado do treinamento.

    images_seen = step · batch_images.
    """
    step: int
    images_seen: int
    model: ToyMAE
    optimizer: torch.optim.Optimizer


@dataclass
class ResultadoTreino:
    """Saída de pretrain."""
    state: TrainState
    checkpoint: str
    metricas: str
    log: str
    registros: List[RegistroMetricas] = field(default_factory=list)


def steps_per_epoch(n_imagens: int, batch_images: int) -> int:
    """Passos por época (descarta o último batch incompleto)."""
    passos = n_imagens // batch_images
    if passos < 1:
        raise ValidationError(
            f"Conjunto com {n_imagens} imagens é menor que o batch de {batch_images} imagens"
        )
    return passos


def total_steps(cfg: TrainConfig, n_imagens: int) -> int:
    """Passos do treinamento completo: floor(epochs · D / B), limitado por max_steps quando > 0."""
    total = int(math.floor(cfg.epochs * n_imagens / cfg.batch_images))
    if cfg.max_steps:
        total = min(total, cfg.max_steps)
    return total


def lr_at(step: int, cfg: TrainConfig, steps_per_epoch: int) -> float:
    """
    Taxa de aprendizado do passo.

    Aquecimento linear de 0 até base_lr · batch_images / 256 em warmup_epochs,
    depois decaimento cosseno até 0 no fim de epochs.
    max_steps não altera a agenda, só a trunca.
    """
    if step < 0:
        raise ValidationError(f"step deve ser >= 0, recebido: {step}")

    pico = cfg.actual_lr
    aquecimento = cfg.warmup_epochs * steps_per_epoch
    total = cfg.epochs * steps_per_epoch

    if step < aquecimento:
        return pico * step / aquecimento
    if step >= total or total <= aquecimento:
        return 0.0
    progresso = (step - aquecimento) / (total - aquecimento)
    return pico * 0.5 * (1.0 + math.cos(math.pi * progresso))


def criar_otimizador(model: torch.nn.Module, cfg: TrainConfig) -> torch.optim.AdamW:
    """AdamW com decaimento de pesos apenas em parâmetros com 2 ou mais dimensões."""
    decay, sem_decay = [], []
    for _, p in model.named_parameters():
        if not p.requires_grad:
            continue
        (sem_decay if p.ndim < 2 else decay).append(p)
    grupos = [
        {'params': decay, 'weight_decay': cfg.weight_decay},
        {'params': sem_decay, 'weight_decay': 0.0},
    ]
    return torch.optim.AdamW(grupos, lr=cfg.actual_lr, betas=(cfg.beta1, cfg.beta2), eps=1e-8)


def ancoras_do_passo(step: int, n_registros: int, pares_por_passo: int, seed: int) -> List[int]:
    """
    Índices das âncoras de um passo.

    As âncoras vêm de uma sequência de permutações concatenadas; a
    permutação de cada ciclo depende apenas de (seed, ciclo), então o
    resultado depende apenas de (seed, step).
    """
    inicio = step * pares_por_passo
    return [
        int(_permutacao(seed, posicao // n_registros, n_registros)[posicao % n_registros])
        for posicao in range(inicio, inicio + pares_por_passo)
    ]


@lru_cache(maxsize=8)
def _permutacao(seed: int, ciclo: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, SEMENTE_ANCORAS, ciclo]).permutation(n)


def preparar_par(anchor: ImageRecord, registros: Dict[str, ImageRecord], index: Optional[NeighborIndex],
                 config: Config, rng: np.random.Generator,
                 carregar: Callable[[str], np.ndarray] = carregar_imagem) -> PreparedPair:
    """
    Monta o par de uma âncora: sorteia o vizinho, aumenta e mascara.

    Sem vizinhos a âncora é pareada consigo mesma. Com pairing 'single' a
    âncora é uma entrada isolada com retângulo constante e razão m1.
    """
    tamanho = (config.model.input_size, config.model.input_size)
    grade = (tamanho[0] // config.model.patch_size, tamanho[1] // config.model.patch_size)

    if config.data.pairing == 'single':
        sementes = rng.integers(0, 2 ** 63 - 1, size=2)
        aug = config.augmentation
        imagem = random_resized_crop(
            anchor, carregar(anchor.path), np.random.default_rng(int(sementes[0])),
            scale=(aug.crop_scale_lo, aug.crop_scale_hi), out_size=tamanho,
            aspect=(aug.aspect_lo, aug.aspect_hi), flip_enabled=aug.flip_enabled,
        )
        caixa = single_image_box()
        ratio = config.mask.mask_m1
        par = AugmentedPair(img_i=imagem, img_j=imagem, nb_i=caixa, nb_j=caixa, iou=1.0, mask_ratio=ratio)
        mascara = sample_mask(grade, ratio, np.random.default_rng(int(sementes[1])))
        return PreparedPair(par=par, masks=(mascara,))

    vizinho_id = sample_neighbor(index, anchor.id, rng) if index is not None else None
    vizinho = registros[vizinho_id] if vizinho_id is not None else anchor

    par = montar_par(anchor, vizinho, rng, config.augmentation, tamanho, carregar)
    mascara_i, mascara_j, ratio = mask_pair(par, config.mask, rng, grade)
    return PreparedPair(par=com_razao(par, ratio), masks=(mascara_i, mascara_j))


def preparar_batch(step: int, records: Sequence[ImageRecord], index: Optional[NeighborIndex], config: Config,
                   carregar: Callable[[str], np.ndarray] = carregar_imagem,
                   executor: Optional[ThreadPoolExecutor] = None) -> List[PreparedPair]:
    """Pares de um passo; o par k usa o gerador default_rng([seed, step, k])."""
    seed = config.train.seed
    pares = config.train.batch_images // 2
    por_id = {r.id: r for r in records}
    ancoras = ancoras_do_passo(step, len(records), pares, seed)

    def preparar(k: int) -> PreparedPair:
        rng = np.random.default_rng([seed, step, k])
        return preparar_par(records[ancoras[k]], por_id, index, config, rng, carregar)

    if executor is None:
        return [preparar(k) for k in range(pares)]
    return list(executor.map(preparar, range(pares)))


def train_step(state: TrainState, batch: Sequence[PreparedPair], config: Config,
               lr: float) -> Tuple[TrainState, RegistroMetricas]:
    """
    Um passo de otimização sobre a perda média dos pares do batch.

    Raises:
        ValidationError: Se o batch estiver vazio
        TrainingError: Se a perda de algum par não for finita
    """
    if not batch:
        raise ValidationError("Batch vazio")

    for grupo in state.optimizer.param_groups:
        grupo['lr'] = lr

    state.optimizer.zero_grad(set_to_none=True)
    perdas, razoes, cruzados = [], [], []
    for item in batch:
        resultado = forward_loss(
            state.model, item.par, item.masks, config.loss.policy,
            norm_pix=config.loss.norm_pix, weight_space=config.loss.weight_space,
        )
        valor = float(resultado.loss)
        if not math.isfinite(valor):
            raise TrainingError(
                f"Perda não finita ({valor}) no passo {state.step} para o par {item.ids}",
                pares=[item.ids], step=state.step,
            )
        (resultado.loss / len(batch)).backward()
        perdas.append(valor)
        razoes.append(item.par.mask_ratio)
        cruzados.extend(cross_fraction(v) for v in resultado.visibilidade)

    state.optimizer.step()
    state.step += 1
    state.images_seen += config.train.batch_images

    registro = RegistroMetricas(
        step=state.step,
        images_seen=state.images_seen,
        loss=float(np.mean(perdas)),
        lr=lr,
        mask_ratio=float(np.mean(razoes)),
        cross_fraction=float(np.mean(cruzados)),
        policy=config.loss.policy,
    )
    return state, registro


def estado_para_checkpoint(state: TrainState, config: Config) -> Checkpoint:
    """Converte parâmetros e momentos do AdamW em registros NMCK."""
    tensores = {}
    for nome, p in state.model.named_parameters():
        tensores[f'param/{nome}'] = p.detach().cpu().numpy().copy()
        estado = state.optimizer.state.get(p, {})
        if estado:
            tensores[f'adam/{nome}/exp_avg'] = estado['exp_avg'].detach().cpu().numpy().copy()
            tensores[f'adam/{nome}/exp_avg_sq'] = estado['exp_avg_sq'].detach().cpu().numpy().copy()
            tensores[f'adam/{nome}/step'] = np.array(float(estado['step']), dtype=np.float64)
    return Checkpoint(config=config.para_dict(), step=state.step, images_seen=state.images_seen,
                      seed=config.train.seed, tensores=tensores)


def restaurar_estado(state: TrainState, checkpoint: Checkpoint):
    """
    Carrega parâmetros e momentos do AdamW de um checkpoint no estado.

    Raises:
        ValidationError: Se faltar parâmetro ou a forma não bater
    """
    parametros = dict(state.model.named_parameters())
    salvos = checkpoint.parametros()
    faltando = set(parametros) - set(salvos)
    if faltando:
        raise ValidationError(f"Checkpoint sem os parâmetros: {', '.join(sorted(faltando))}")

    with torch.no_grad():
        for nome, p in parametros.items():
            valor = salvos[nome]
            if tuple(valor.shape) != tuple(p.shape):
                raise ValidationError(
                    f"Parâmetro '{nome}' com forma {tuple(valor.shape)} no checkpoint, esperado {tuple(p.shape)}"
                )
            p.copy_(torch.from_numpy(valor).to(p.dtype))

            chave = f'adam/{nome}'
            if f'{chave}/exp_avg' in checkpoint.tensores:
                state.optimizer.state[p] = {
                    'step': torch.tensor(float(checkpoint.tensores[f'{chave}/step']), dtype=torch.float32),
                    'exp_avg': torch.from_numpy(checkpoint.tensores[f'{chave}/exp_avg']).to(p.dtype).clone(),
                    'exp_avg_sq': torch.from_numpy(checkpoint.tensores[f'{chave}/exp_avg_sq']).to(p.dtype).clone(),
                }

    state.step = checkpoint.step
    state.images_seen = checkpoint.images_seen


def modelo_de_checkpoint(checkpoint: Checkpoint) -> Tuple[ToyMAE, Config]:
    """Reconstrói o modelo e a configuração salvos num checkpoint."""
    config = Config.de_dict(checkpoint.config)
    model = construir_modelo(config.model, config.train.seed, config.loss.coord_scale)
    state = TrainState(step=0, images_seen=0, model=model, optimizer=criar_otimizador(model, config.train))
    restaurar_estado(state, checkpoint)
    return model, config


def _carregador_com_cache(carregar: Callable[[str], np.ndarray]) -> Callable[[str], np.ndarray]:
    @lru_cache(maxsize=4096)
    def carregar_em_cache(caminho: str) -> np.ndarray:
        return carregar(caminho)
    return carregar_em_cache


def pretrain(records: Sequence[ImageRecord], index: Optional[NeighborIndex], config: Config, out_dir: str,
             resume: Optional[str] = None, carregar: Callable[[str], np.ndarray] = carregar_imagem,
             silent: bool = True, ao_registrar: Optional[Callable[[RegistroMetricas], None]] = None) -> ResultadoTreino:
    """
    Executa o pré-treinamento completo.

    Args:
        records: Registros do conjunto (ordem define os índices das âncoras)
        index: Índice de vizinhança (pode ser None com pairing 'single')
        config: Configuração validada
        out_dir: Diretório de saída (checkpoints/, logs/, metrics.jsonl)
        resume: Checkpoint NMCK a partir do qual continuar
        carregar: Leitor de imagens
        silent: Se True, não exibe mensagens informativas
        ao_registrar: Callback chamado a cada registro de métricas

    Raises:
        ValidationError: Configuração inválida ou conjunto menor que o batch
        TrainingError: Perda não finita (um arquivo de diagnóstico é salvo em logs/)
    """
    erros = config.validar()
    if erros:
        raise ValidationError('; '.join(erros))
    if config.data.pairing == 'neighbors' and index is None:
        raise ValidationError("pairing 'neighbors' exige um índice de vizinhança")
    if config.data.pairing == 'neighbors':
        index.validar_cobertura(records)

    cfg = config.train
    n_imagens = len(records)
    passos_epoca = steps_per_epoch(n_imagens, cfg.batch_images)
    passos = total_steps(cfg, n_imagens)

    FileManager.criar_diretorios(out_dir, silent=True)
    caminho_metricas = os.path.join(out_dir, 'metrics.jsonl')
    arquivo = ArquivoMetricas(caminho_metricas, truncar=resume is None)

    torch.set_num_threads(cfg.threads)
    model = construir_modelo(config.model, cfg.seed, config.loss.coord_scale)
    state = TrainState(step=0, images_seen=0, model=model, optimizer=criar_otimizador(model, cfg))

    if resume is not None:
        restaurar_estado(state, carregar_checkpoint(resume))
        arquivo.truncar_apos(state.step)
        if not silent:
            print(f"✓ Retomando do passo {state.step} ({state.images_seen} imagens)")

    carregar = _carregador_com_cache(carregar)
    timestamp = FileManager.gerar_timestamp()

    with ThreadPoolExecutor(max_workers=cfg.threads) as executor:
        while state.step < passos:
            batch = preparar_batch(state.step, records, index, config, carregar, executor)
            lr = lr_at(state.step, cfg, passos_epoca)
            try:
                state, registro = train_step(state, batch, config, lr)
            except TrainingError as e:
                diagnostico = os.path.join(out_dir, 'logs', f'falha_{timestamp}.json')
                FileManager.salvar_log({'erro': str(e), 'step': e.step, 'pares': [list(p) for p in e.pares]},
                                       diagnostico, silent=True)
                raise
            arquivo.anexar(registro)
            if ao_registrar is not None:
                ao_registrar(registro)

            if cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0 and state.step < passos:
                nome = FileManager.gerar_nome_arquivo('ckpt', step=state.step, extensao='nmck')
                salvar_checkpoint(estado_para_checkpoint(state, config), os.path.join(out_dir, 'checkpoints', nome))

    caminho_checkpoint = os.path.join(out_dir, 'checkpoints', 'final.nmck')
    salvar_checkpoint(estado_para_checkpoint(state, config), caminho_checkpoint)

    registros = arquivo.ler()
    log = criar_log_treino(config, timestamp, state.step, state.images_seen, registros, caminho_checkpoint)
    caminho_log = os.path.join(out_dir, 'logs', f'treino_{timestamp}.json')
    log.salvar(caminho_log)

    if not silent:
        print(f"✓ Checkpoint salvo: {caminho_checkpoint}")
        print(f"✓ Métricas: {caminho_metricas}")

    return ResultadoTreino(state=state, checkpoint=caminho_checkpoint, metricas=caminho_metricas,
                           log=caminho_log, registros=registros)
