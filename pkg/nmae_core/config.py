"""
Módulo de gerenciamento de configuração do nmae-cli.

Este módulo gerencia a leitura e escrita do arquivo de configuração JSON do
pré-treinamento, organizado em seções (model, train, mask, augmentation,
loss, data), os presets de escala e as sobreposições de ablação.
"""

import json
import os
from dataclasses import dataclass, field, asdict, fields, replace
from typing import Any, Dict, List, Optional

from .masking import MASK_PRESETS
from .validation import ValidationError, validar_faixa, validar_limites_mascara
from .visibility_loss import WEIGHT_POLICIES


@dataclass
class ModelConfig:
    """
    Dimensões do autoencoder.

    Attributes:
        input_size: Lado da imagem de entrada em pixels
        patch_size: Lado do patch em pixels
        enc_dim, dec_dim: Dimensões dos embeddings do encoder e do decoder
        enc_depth, dec_depth: Número de blocos
        heads: Cabeças de atenção
        channels: Canais da imagem
        mlp_ratio: Razão da camada oculta do MLP
        dtype: 'float64' ou 'float32'
    """
    input_size: int = 32
    patch_size: int = 8
    enc_dim: int = 64
    dec_dim: int = 32
    enc_depth: int = 2
    dec_depth: int = 1
    heads: int = 4
    channels: int = 3
    mlp_ratio: float = 4.0
    dtype: str = 'float64'

    def validar(self) -> List[str]:
        erros = []
        for nome in ('input_size', 'patch_size', 'enc_dim', 'dec_dim', 'heads', 'channels'):
            valor = getattr(self, nome)
            if not isinstance(valor, int) or isinstance(valor, bool) or valor < 1:
                erros.append(f"Campo 'model.{nome}' deve ser inteiro >= 1, recebido: {valor!r}")
        for nome in ('enc_depth', 'dec_depth'):
            valor = getattr(self, nome)
            if not isinstance(valor, int) or isinstance(valor, bool) or valor < 0:
                erros.append(f"Campo 'model.{nome}' deve ser inteiro >= 0, recebido: {valor!r}")
        if erros:
            return erros

        if self.input_size % self.patch_size != 0:
            erros.append(
                f"Campo 'model.input_size' ({self.input_size}) deve ser divisível por "
                f"'model.patch_size' ({self.patch_size})"
            )
        for nome in ('enc_dim', 'dec_dim'):
            valor = getattr(self, nome)
            if valor % 4 != 0:
                erros.append(f"Campo 'model.{nome}' ({valor}) deve ser divisível por 4")
            if valor % self.heads != 0:
                erros.append(f"Campo 'model.{nome}' ({valor}) deve ser divisível por 'model.heads' ({self.heads})")
        if self.dtype not in ('float64', 'float32'):
            erros.append(f"Campo 'model.dtype' deve ser 'float64' ou 'float32', recebido: {self.dtype!r}")
        return erros


@dataclass
class TrainConfig:
    """
    Hiperparâmetros do pré-treinamento.

    batch_images conta imagens (um par = 2 imagens); a taxa efetiva é
    base_lr · batch_images / 256.

    max_steps (0 = sem limite) apenas interrompe a execução: a agenda de
    aquecimento e cosseno continua definida por epochs, sem reescala, e a
    taxa no último passo executado pode ficar bem acima de 0.
    """
    base_lr: float = 1.5e-2
    batch_images: int = 32
    epochs: float = 25.0
    warmup_epochs: float = 2.0
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.95
    seed: int = 0
    max_steps: int = 0
    checkpoint_every: int = 0
    threads: int = 1

    @property
    def actual_lr(self) -> float:
        return self.base_lr * self.batch_images / 256.0

    def validar(self) -> List[str]:
        erros = []
        if not isinstance(self.batch_images, int) or self.batch_images < 2 or self.batch_images % 2:
            erros.append(f"Campo 'train.batch_images' deve ser par e >= 2, recebido: {self.batch_images!r}")
        if self.base_lr < 0:
            erros.append(f"Campo 'train.base_lr' não pode ser negativo, recebido: {self.base_lr}")
        if self.epochs < 0 or self.warmup_epochs < 0:
            erros.append("Campos 'train.epochs' e 'train.warmup_epochs' não podem ser negativos")
        elif self.warmup_epochs > self.epochs:
            erros.append(
                f"Campo 'train.warmup_epochs' ({self.warmup_epochs}) não pode exceder 'train.epochs' ({self.epochs})"
            )
        for nome in ('beta1', 'beta2'):
            valor = getattr(self, nome)
            if not 0.0 <= valor < 1.0:
                erros.append(f"Campo 'train.{nome}' deve estar em [0, 1), recebido: {valor}")
        if self.weight_decay < 0:
            erros.append(f"Campo 'train.weight_decay' não pode ser negativo, recebido: {self.weight_decay}")
        for nome in ('max_steps', 'checkpoint_every'):
            if getattr(self, nome) < 0:
                erros.append(f"Campo 'train.{nome}' não pode ser negativo")
        if self.threads < 1:
            erros.append(f"Campo 'train.threads' deve ser >= 1, recebido: {self.threads}")
        return erros


@dataclass
class MaskConfig:
    """Limites da razão de mascaramento dinâmica (IoU 0 -> m1, IoU 1 -> m2)."""
    mask_m1: float = 0.75
    mask_m2: float = 0.85

    def validar(self) -> List[str]:
        erros = validar_limites_mascara(self.mask_m1, self.mask_m2)
        if not erros and self.mask_m2 >= 1.0:
            erros.append(f"Campo 'mask_m2' deve ser menor que 1 (ao menos um patch visível), recebido: {self.mask_m2}")
        return erros


@dataclass
class AugmentationConfig:
    """Faixas do Random-Resized-Crop e inversão horizontal opcional."""
    crop_scale_lo: float = 0.2
    crop_scale_hi: float = 1.0
    aspect_lo: float = 3.0 / 4.0
    aspect_hi: float = 4.0 / 3.0
    flip_enabled: bool = False

    def validar(self) -> List[str]:
        erros = validar_faixa(self.crop_scale_lo, self.crop_scale_hi, 'crop_scale', 0.0, 1.0)
        erros.extend(validar_faixa(self.aspect_lo, self.aspect_hi, 'aspect', 0.0))
        return erros


@dataclass
class LossConfig:
    """
    Perda de reconstrução.

    - policy: política de pesos (ours, full_cross, no_cross, full_all)
    - norm_pix: alvo normalizado por patch
    - weight_space: 'loss' ou 'raw' para as MSEs do peso
    - coord_scale: escala das coordenadas antes da codificação senoidal
    """
    policy: str = 'ours'
    norm_pix: bool = True
    weight_space: str = 'loss'
    coord_scale: float = 100.0

    def validar(self) -> List[str]:
        erros = []
        if self.policy not in WEIGHT_POLICIES:
            erros.append(f"Campo 'loss.policy' inválido: {self.policy!r}. Deve ser um de: {', '.join(WEIGHT_POLICIES)}")
        if self.weight_space not in ('loss', 'raw'):
            erros.append(f"Campo 'loss.weight_space' deve ser 'loss' ou 'raw', recebido: {self.weight_space!r}")
        if not self.coord_scale > 0:
            erros.append(f"Campo 'loss.coord_scale' deve ser positivo, recebido: {self.coord_scale}")
        return erros


@dataclass
class DataConfig:
    """Amostragem de pares: limiar de IoU e modo ('neighbors' ou 'single')."""
    alpha: float = 0.1
    pairing: str = 'neighbors'

    def validar(self) -> List[str]:
        erros = []
        if not 0.0 <= self.alpha <= 1.0:
            erros.append(f"Campo 'data.alpha' deve estar entre 0 e 1, recebido: {self.alpha}")
        if self.pairing not in ('neighbors', 'single'):
            erros.append(f"Campo 'data.pairing' deve ser 'neighbors' ou 'single', recebido: {self.pairing!r}")
        return erros


SECOES = {
    'model': ModelConfig,
    'train': TrainConfig,
    'mask': MaskConfig,
    'augmentation': AugmentationConfig,
    'loss': LossConfig,
    'data': DataConfig,
}


@dataclass
class Config:
    """
    Configuração completa de um pré-treinamento.

    Attributes:
        model: Dimensões do modelo
        train: Otimizador, agenda e contabilidade de épocas
        mask: Limites da razão de mascaramento
        augmentation: Parâmetros da aumentação
        loss: Política e espaço da perda
        data: Amostragem de pares
    """
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    mask: MaskConfig = field(default_factory=MaskConfig)
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def validar(self) -> List[str]:
        """
        Valida todas as seções.

        Returns:
            Lista de erros encontrados (vazia se válido)
        """
        erros = []
        for nome in SECOES:
            erros.extend(getattr(self, nome).validar())
        return erros

    def para_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def de_dict(cls, dados: Dict[str, Any], base: Optional['Config'] = None) -> 'Config':
        """
        Cria configuração a partir de um dicionário parcial.

        Seções e campos ausentes mantêm os valores de `base` (ou os padrões).
        Chaves que começam com '_comentario' são ignoradas.

        Raises:
            ValueError: Se houver seção ou campo desconhecido
        """
        from .models import _filtrar_comentarios

        config = base if base is not None else cls()
        dados = _filtrar_comentarios(dados)

        desconhecidas = set(dados) - set(SECOES)
        if desconhecidas:
            raise ValueError(f"Seções desconhecidas na configuração: {', '.join(sorted(desconhecidas))}")

        novas = {}
        for nome, tipo in SECOES.items():
            secao = _filtrar_comentarios(dados.get(nome, {}))
            validos = {f.name for f in fields(tipo)}
            invalidos = set(secao) - validos
            if invalidos:
                raise ValueError(f"Campos desconhecidos em '{nome}': {', '.join(sorted(invalidos))}")
            novas[nome] = replace(getattr(config, nome), **secao)
        return cls(**novas)

    @classmethod
    def carregar(cls, caminho: str, base: Optional['Config'] = None) -> 'Config':
        """
        Carrega configuração do arquivo JSON.

        Se o arquivo não existir, retorna `base` ou uma instância com valores padrão.

        Args:
            caminho: Caminho para o arquivo de configuração
            base: Configuração sobre a qual o arquivo é aplicado (ex.: um preset)

        Raises:
            ValueError: JSON malformado ou chaves desconhecidas (a mensagem cita o arquivo)

        Example:
            >>> config = Config.carregar('configs/desk.json')
        """
        if not os.path.exists(caminho):
            return base if base is not None else cls()

        try:
            with open(caminho, 'r', encoding='utf-8') as f:
                dados = json.load(f)
        except json.JSONDecodeError as e:
            raise ValueError(f"Erro ao ler arquivo de configuração {caminho}: {e}")

        if not isinstance(dados, dict):
            raise ValueError(f"Arquivo de configuração {caminho} deve conter um objeto JSON")

        try:
            return cls.de_dict(dados, base)
        except (ValueError, TypeError) as e:
            raise ValueError(f"Erro no arquivo de configuração {caminho}: {e}")

    def salvar(self, caminho: str):
        """
        Salva configuração no arquivo JSON formatado (indentação de 2 espaços).

        Raises:
            IOError: Se houver erro ao salvar o arquivo
        """
        try:
            diretorio = os.path.dirname(caminho)
            if diretorio:
                os.makedirs(diretorio, exist_ok=True)
            with open(caminho, 'w', encoding='utf-8') as f:
                json.dump(self.para_dict(), f, indent=2, ensure_ascii=False)
        except OSError as e:
            raise IOError(f"Erro ao salvar configuração em {caminho}: {e}")


def preset(nome: str) -> Config:
    """
    Configuração pré-definida.

    - desk: escala de mesa (padrão)
    - fmow: ViT-Large, alpha 0.1, 800 épocas, batch 2048
    - satellogic: ViT-Large, alpha 0.0, 50 épocas com 2.5 de aquecimento

    Raises:
        ValueError: Se o preset não existir
    """
    if nome == 'desk':
        return Config()

    vit_large = ModelConfig(input_size=224, patch_size=16, enc_dim=1024, dec_dim=512,
                            enc_depth=24, dec_depth=8, heads=16, dtype='float32')
    if nome == 'fmow':
        return Config(
            model=vit_large,
            train=TrainConfig(base_lr=1.5e-4, batch_images=2048, epochs=800.0, warmup_epochs=40.0),
            data=DataConfig(alpha=0.1),
        )
    if nome == 'satellogic':
        return Config(
            model=vit_large,
            train=TrainConfig(base_lr=1.5e-4, batch_images=2048, epochs=50.0, warmup_epochs=2.5),
            data=DataConfig(alpha=0.0),
        )
    raise ValueError(f"Preset '{nome}' inválido. Deve ser um de: desk, fmow, satellogic")


def aplicar_ablacao(config: Config, ablacao: str) -> Config:
    """
    Aplica uma sobreposição de ablação.

    Formatos aceitos:
        mask=<m1>,<m2>       limites explícitos
        mask=<preset>        uma linha de MASK_PRESETS (ex.: 'const-0.75')
        weights=<política>   uma de WEIGHT_POLICIES

    Raises:
        ValidationError: Se a ablação for malformada ou inválida
    """
    chave, sep, valor = ablacao.partition('=')
    chave, valor = chave.strip(), valor.strip()
    if not sep or not valor:
        raise ValidationError(f"Ablação '{ablacao}' malformada. Use mask=<m1>,<m2> ou weights=<política>")

    if chave == 'mask':
        if valor in MASK_PRESETS:
            m1, m2 = MASK_PRESETS[valor]
        else:
            partes = valor.split(',')
            if len(partes) != 2:
                raise ValidationError(f"Ablação de máscara deve ter dois valores, recebido: '{valor}'")
            try:
                m1, m2 = float(partes[0]), float(partes[1])
            except ValueError:
                raise ValidationError(f"Ablação de máscara com valores não numéricos: '{valor}'")
        mascara = MaskConfig(mask_m1=m1, mask_m2=m2)
        erros = mascara.validar()
        if erros:
            raise ValidationError('; '.join(erros))
        return replace(config, mask=mascara)

    if chave == 'weights':
        if valor not in WEIGHT_POLICIES:
            raise ValidationError(
                f"Política '{valor}' inválida. Deve ser uma de: {', '.join(WEIGHT_POLICIES)}"
            )
        return replace(config, loss=replace(config.loss, policy=valor))

    raise ValidationError(f"Ablação '{chave}' desconhecida. Use 'mask' ou 'weights'")
