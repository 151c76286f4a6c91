"""
Módulo CLI para nmae-cli

Este módulo gerencia a interface de linha de comando, incluindo parsing de argumentos
e orquestração dos comandos disponíveis.
"""

import argparse
import os
import sys
from typing import List, Optional


# Variáveis globais para controle de output
VERBOSE = False
SILENT = False

ENV_THREADS = 'NMAE_THREADS'


class ArgumentParserPtBr(argparse.ArgumentParser):
    """
    ArgumentParser customizado com mensagens em português.
    """

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._positionals.title = 'argumentos posicionais'
        self._optionals.title = 'opções'

    def error(self, message):
        """Traduz a mensagem, imprime o uso e sai com código 2."""
        traducoes = {
            'the following arguments are required': 'os seguintes argumentos são obrigatórios',
            'invalid choice': 'escolha inválida',
            'invalid int value': 'valor inteiro inválido',
            'invalid float value': 'valor real inválido',
            'expected one argument': 'esperado um argumento',
            'unrecognized arguments': 'argumentos não reconhecidos',
            'ambiguous option': 'opção ambígua',
            'error': 'erro',
        }

        mensagem_traduzida = message
        for en, pt in traducoes.items():
            mensagem_traduzida = mensagem_traduzida.replace(en, pt)

        self.print_usage(sys.stderr)
        self.exit(2, f'{self.prog}: erro: {mensagem_traduzida}\n')

    def format_usage(self):
        return super().format_usage().replace('usage:', 'uso:')

    def format_help(self):
        help_text = super().format_help()
        traducoes = {
            'usage:': 'uso:',
            'positional arguments': 'argumentos posicionais',
            'optional arguments': 'argumentos opcionais',
            'options': 'opções',
            'show this help message and exit': 'exibe esta mensagem de ajuda e sai'
        }
        for en, pt in traducoes.items():
            help_text = help_text.replace(en, pt)
        return help_text


def inteiro_positivo(valor: str) -> int:
    """Tipo argparse para inteiros >= 1."""
    try:
        numero = int(valor)
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"Valor inválido: '{valor}'. Esperado inteiro >= 1") from e
    if numero < 1:
        raise argparse.ArgumentTypeError(f"Valor inválido: '{valor}'. Esperado inteiro >= 1")
    return numero


def converter_par(valor: str) -> List[str]:
    """
    Converte '<id>,<id>' em lista de dois ids.

    Raises:
        argparse.ArgumentTypeError: Se não houver exatamente dois ids não vazios
    """
    partes = [p.strip() for p in valor.split(',')]
    if len(partes) != 2 or not all(partes):
        raise argparse.ArgumentTypeError(f"Par inválido: '{valor}'. Use o formato <id>,<id>")
    return partes


def _criar_parser_global(suprimir: bool) -> ArgumentParserPtBr:
    """Parser com os argumentos globais; com `suprimir`, opções ausentes não entram no Namespace."""
    parser_global = ArgumentParserPtBr(add_help=False)
    padrao = {'default': argparse.SUPPRESS} if suprimir else {}

    parser_global.add_argument(
        '--verbose', '-v',
        action='store_true',
        help='Exibe informações detalhadas de debug (tem precedência sobre --silent)',
        **padrao
    )
    parser_global.add_argument(
        '--silent', '-s',
        action='store_true',
        help='Suprime mensagens informativas, exibindo apenas erros',
        **padrao
    )
    parser_global.add_argument(
        '--seed',
        type=int,
        metavar='N',
        help='Semente dos geradores aleatórios (sobrescreve a configuração)',
        **padrao
    )
    parser_global.add_argument(
        '--threads',
        type=inteiro_positivo,
        metavar='N',
        help=f'Threads de trabalho (torch e aumentação). A variável {ENV_THREADS} define o máximo',
        **padrao
    )
    return parser_global


def criar_parser() -> ArgumentParserPtBr:
    """
    Cria e configura o parser de argumentos da CLI.

    Argumentos globais:
        --verbose, -v: Exibe informações detalhadas de debug
        --silent, -s: Suprime mensagens informativas (apenas erros)
        --seed: Semente (sobrescreve a da configuração)
        --threads: Threads de trabalho (limitadas por NMAE_THREADS)

    Comandos disponíveis:
        index, pretrain, visualize, selftest, world, verify

    Returns:
        ArgumentParserPtBr configurado
    """
    parser_global = _criar_parser_global(suprimir=False)
    # Cópia para os subcomandos: aceita as opções depois do comando sem apagar as dadas antes
    parser_comum = _criar_parser_global(suprimir=True)

    parser = ArgumentParserPtBr(
        prog='nmae',
        description='Pré-treinamento de autoencoders mascarados com imagens vizinhas georreferenciadas',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        parents=[parser_global],
        epilog="""
Exemplos de uso:
  nmae world --out-dir dados/                                  # Gerar mundo sintético
  nmae index --meta dados/metadata.jsonl --alpha 0.1 --out dados/vizinhos.nmix
  nmae pretrain --meta dados/metadata.jsonl --index dados/vizinhos.nmix --out-dir runs/base
  nmae pretrain ... --ablation weights=full_all --ablation mask=0.75,0.90
  nmae visualize --checkpoint runs/base/checkpoints/final.nmck --meta dados/metadata.jsonl --pair t0000,t0001
  nmae selftest                                                # Verificar propriedades

Para mais informações sobre cada comando, use:
  nmae <comando> --help
        """
    )

    subparsers = parser.add_subparsers(
        dest='command',
        title='Comandos disponíveis',
        description='Use "nmae <comando> --help" para mais informações sobre cada comando',
        metavar='<comando>'
    )

    _configurar_subparser_index(subparsers, parser_comum)
    _configurar_subparser_pretrain(subparsers, parser_comum)
    _configurar_subparser_visualize(subparsers, parser_comum)
    _configurar_subparser_selftest(subparsers, parser_comum)
    _configurar_subparser_world(subparsers, parser_comum)
    _configurar_subparser_verify(subparsers, parser_comum)

    return parser


def _configurar_subparser_index(subparsers, parser_comum):
    """
    Configura o subparser para o comando 'index'.

    Parâmetros obrigatórios:
        --meta: Arquivo de metadados (JSON Lines)
        --out: Arquivo de saída do índice
    """
    parser_index = subparsers.add_parser(
        'index',
        parents=[parser_comum],
        help='Constrói a tabela de vizinhos por IoU',
        description="""
Constrói a tabela de vizinhos: duas imagens são vizinhas quando a IoU dos
retângulos georreferenciados é estritamente maior que alpha.

A busca usa uma R-tree para os candidatos e a IoU exata para a decisão,
com resultado idêntico à comparação de todos os pares.

Ao final é exibido o histograma do número de vizinhos por imagem.
        """,
        formatter_class=argparse.RawDescriptionHelpFormatter
    )
    parser_index.add_argument('--meta', required=True, help='Arquivo de metadados (.jsonl)')
    parser_index.add_argument('--alpha', type=float, default=0.1, help='Limiar de IoU em [0, 1] (padrão: 0.1)')
    parser_index.add_argument('--out', required=True, help='Arquivo de saída do índice')
    parser_index.add_argument(
        '--format',
        dest='formato',
        choices=['nmix', 'json'],
        default='nmix',
        help='nmix (binário, padrão) ou json (exportação para depuração)'
    )


def _configurar_subparser_pretrain(subparsers, parser_comum):
    """
    Configura o subparser para o comando 'pretrain'.

    Parâmetros obrigatórios:
        --meta: Arquivo de metadados
        --out-dir: Diretório de saída
    """
    parser_pretrain = subparsers.add_parser(
        'pretrain',
        parents=[parser_comum],
        help='Executa o pré-treinamento',
        description="""
Executa o pré-treinamento do autoencoder mascarado com pares de imagens vizinhas.

A configuração parte do preset (--preset, padrão desk), recebe o arquivo
--config por cima e por fim as ablações e opções da linha de comando.

Saídas em --out-dir:
  metrics.jsonl              Métricas por passo (uma linha JSON por passo)
  checkpoints/final.nmck     Checkpoint final
  logs/treino_<ts>.json      Log do pré-treinamento

Ablações (repetíveis):
  --ablation mask=0.75,0.85      Limites da razão de mascaramento
  --ablation mask=const-0.75     Uma linha pré-definida
  --ablation weights=full_all    Política de pesos (ours, full_cross, no_cross, full_all)
        """,
        formatter_class=argparse.RawDescriptionHelpFormatter
    )
    parser_pretrain.add_argument('--meta', required=True, help='Arquivo de metadados (.jsonl)')
    parser_pretrain.add_argument(
        '--index',
        help='Índice de vizinhos (NMIX ou JSON). Se omitido, é construído com data.alpha'
    )
    parser_pretrain.add_argument('--config', help='Arquivo de configuração JSON')
    parser_pretrain.add_argument('--preset', choices=['desk', 'fmow', 'satellogic'], default='desk',
                                 help='Configuração base (padrão: desk)')
    parser_pretrain.add_argument('--out-dir', dest='out_dir', required=True, help='Diretório de saída')
    parser_pretrain.add_argument(
        '--ablation',
        action='append',
        default=[],
        metavar='CHAVE=VALOR',
        help='Sobreposição de ablação: mask=<m1>,<m2>, mask=<preset> ou weights=<política>'
    )
    parser_pretrain.add_argument('--epochs', type=float, help='Número de épocas (contadas em imagens)')
    parser_pretrain.add_argument('--max-steps', dest='max_steps', type=int, help='Limite de passos (0 = sem limite); trunca a agenda de --epochs sem reescalá-la')
    parser_pretrain.add_argument('--resume', help='Checkpoint NMCK a partir do qual continuar')


def _configurar_subparser_visualize(subparsers, parser_comum):
    """
    Configura o subparser para o comando 'visualize'.

    Parâmetros obrigatórios:
        --checkpoint, --meta, --pair
    """
    parser_visualize = subparsers.add_parser(
        'visualize',
        parents=[parser_comum],
        help='Gera o painel de reconstrução de um par',
        description="""
Gera um PNG com uma linha de 5 painéis por imagem do par:
  imagem, imagem mascarada, predição, pixels CROSS e peso da perda.
        """,
        formatter_class=argparse.RawDescriptionHelpFormatter
    )
    parser_visualize.add_argument('--checkpoint', required=True, help='Checkpoint NMCK')
    parser_visualize.add_argument('--meta', required=True, help='Arquivo de metadados (.jsonl)')
    parser_visualize.add_argument('--pair', type=converter_par, required=True, metavar='ID,ID',
                                  help='Ids das duas imagens')
    parser_visualize.add_argument('--out', help='PNG de saída (padrão: panels/painel_<timestamp>.png)')
    parser_visualize.add_argument('--policy', help='Política de pesos (padrão: a do checkpoint)')
    parser_visualize.add_argument('--escala', type=inteiro_positivo, default=4, help='Ampliação dos painéis')


def _configurar_subparser_selftest(subparsers, parser_comum):
    """Configura o subparser para o comando 'selftest'."""
    parser_selftest = subparsers.add_parser(
        'selftest',
        parents=[parser_comum],
        help='Executa as verificações de propriedades',
        description="""
Executa as verificações nomeadas: geometry-roundtrip, index-equivalence,
mask-ratio-law, visibility-partition, weight-contract, weight-detachment e
gradient-fidelity. Sai com código 0 se todas passarem e 1 caso contrário.

gradient-fidelity confere, em cada tensor de parâmetros do modelo mínimo, 6
entradas sorteadas (ou todas, se o tensor for menor) por diferenças finitas.
        """,
        formatter_class=argparse.RawDescriptionHelpFormatter
    )
    parser_selftest.add_argument(
        '--only',
        action='append',
        default=[],
        metavar='NOME',
        help='Executa apenas a verificação indicada (repetível)'
    )


def _configurar_subparser_world(subparsers, parser_comum):
    """Configura o subparser para o comando 'world'."""
    from .synthetic_world import MODOS

    parser_world = subparsers.add_parser(
        'world',
        parents=[parser_comum],
        help='Gera um conjunto de dados sintético',
        description="""
Renderiza um raster de ruído fractal e recorta tiles georreferenciados.

Saídas em --out-dir:
  images/<id>.png     Tiles
  metadata.jsonl      Metadados (caminhos relativos)
  world.json          Parâmetros do mundo
        """,
        formatter_class=argparse.RawDescriptionHelpFormatter
    )
    parser_world.add_argument('--out-dir', dest='out_dir', required=True, help='Diretório de saída')
    parser_world.add_argument('--tiles', type=inteiro_positivo, default=400, help='Número de tiles (padrão: 400)')
    parser_world.add_argument('--tile-px', dest='tile_px', type=inteiro_positivo, default=64,
                              help='Lado de cada tile (padrão: 64)')
    parser_world.add_argument('--world-px', dest='world_px', type=inteiro_positivo, default=1024,
                              help='Lado do raster (padrão: 1024)')
    parser_world.add_argument('--mode', choices=list(MODOS), default='grid_adjacent',
                              help='Disposição dos tiles (padrão: grid_adjacent)')
    parser_world.add_argument('--revisit-noise', dest='revisit_noise', type=float, default=0.0,
                              help='Desvio padrão da perturbação de cor das revisitas')
    parser_world.add_argument('--octaves', type=inteiro_positivo, default=5, help='Oitavas do ruído (padrão: 5)')


def _configurar_subparser_verify(subparsers, parser_comum):
    """Configura o subparser para o comando 'verify'."""
    parser_verify = subparsers.add_parser(
        'verify',
        parents=[parser_comum],
        help='Confere a consistência geométrica de um conjunto',
        description="""
Para pares de tiles sobrepostos, confere que os pixels correspondentes pela
geometria mostram o mesmo conteúdo (erro absoluto médio dentro da tolerância).
Se houver world.json ao lado dos metadados, o revisit_noise é lido dele.
        """,
        formatter_class=argparse.RawDescriptionHelpFormatter
    )
    parser_verify.add_argument('--meta', required=True, help='Arquivo de metadados (.jsonl)')
    parser_verify.add_argument('--pairs', type=inteiro_positivo, default=50, help='Pares sorteados (padrão: 50)')
    parser_verify.add_argument('--revisit-noise', dest='revisit_noise', type=float,
                               help='Sobrescreve o revisit_noise do world.json')


def configurar_output(args):
    """
    Configura o modo de output (verbose/silent) baseado nos argumentos.

    Verbose tem precedência sobre silent.
    """
    global VERBOSE, SILENT

    if args.verbose:
        VERBOSE = True
        SILENT = False
    elif args.silent:
        VERBOSE = False
        SILENT = True
    else:
        VERBOSE = False
        SILENT = False


def resolver_threads(args, padrao: int = 1) -> int:
    """
    Número de threads: --threads (ou `padrao`), limitado por NMAE_THREADS.

    Raises:
        ValueError: Se NMAE_THREADS não for um inteiro >= 1
    """
    threads = args.threads if getattr(args, 'threads', None) else padrao
    limite = os.environ.get(ENV_THREADS)
    if limite:
        try:
            maximo = int(limite)
        except ValueError:
            raise ValueError(f"{ENV_THREADS} deve ser um inteiro >= 1, recebido: '{limite}'")
        if maximo < 1:
            raise ValueError(f"{ENV_THREADS} deve ser um inteiro >= 1, recebido: '{limite}'")
        threads = min(threads, maximo)
    if VERBOSE:
        print(f"🔧 Threads: {threads}")
    return threads


def _imprimir_excecao(prefixo: str, e: Exception):
    print(f"❌ {prefixo}: {e}")
    if VERBOSE:
        import traceback
        traceback.print_exc()


def main(argv: Optional[list] = None):
    """
    Entry point principal da aplicação CLI.

    Códigos de saída:
        0: Sucesso
        1: Falha de propriedade/verificação ou erro inesperado
        2: Erro de uso, de arquivo ou de configuração
        130: Interrompido pelo usuário

    Args:
        argv: Lista de argumentos (para testes). Se None, usa sys.argv[1:]

    Returns:
        Código de saída (int)
    """
    parser = criar_parser()

    if argv is None:
        argv = sys.argv[1:]

    if len(argv) == 0:
        parser.print_help()
        return 0

    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if e.code is not None else 1

    configurar_output(args)

    if not args.command:
        parser.print_help()
        return 0

    comandos = {
        'index': executar_index,
        'pretrain': executar_pretrain,
        'visualize': executar_visualize,
        'selftest': executar_selftest,
        'world': executar_world,
        'verify': executar_verify,
    }

    try:
        return comandos[args.command](args)

    except KeyboardInterrupt:
        print("\n\n⚠️  Operação cancelada pelo usuário")
        return 130

    except Exception as e:
        if VERBOSE:
            import traceback
            print(f"\n❌ Erro inesperado:")
            traceback.print_exc()
        else:
            print(f"\n❌ Erro inesperado: {str(e)}")
            print("   Use --verbose para mais detalhes")
        return 1


def _carregar_registros(caminho: str):
    """Carrega metadados; devolve (registros, código) com código 2 em erro."""
    from .models import carregar_metadados
    from .validation import ValidationError

    try:
        registros = carregar_metadados(caminho)
    except (FileNotFoundError, ValidationError, OSError) as e:
        _imprimir_excecao("Erro ao carregar metadados", e)
        return None, 2

    if not SILENT:
        print(f"✓ {len(registros)} registros carregados de {caminho}")
    return registros, 0


def executar_index(args):
    """
    Executa o comando 'index'.

    Returns:
        Código de saída (0 = sucesso, 2 = erro de entrada)
    """
    from .geo_index import build_index
    from .validation import ValidationError

    if not SILENT:
        print("📋 Carregando metadados...")
    registros, codigo = _carregar_registros(args.meta)
    if registros is None:
        return codigo

    try:
        indice = build_index(registros, args.alpha)
    except ValidationError as e:
        _imprimir_excecao("Erro de Validação", e)
        return 2

    try:
        indice.salvar(args.out, args.formato)
    except (OSError, ValueError) as e:
        _imprimir_excecao("Erro ao salvar índice", e)
        return 2

    if not SILENT:
        print(f"✓ Índice salvo: {args.out} (alpha={args.alpha}, formato {args.formato})")
        print("📊 Vizinhos por imagem:")
        for quantidade, imagens in indice.estatisticas().items():
            print(f"   {quantidade:4d} vizinhos: {imagens} imagens")
    return 0


def montar_configuracao(args):
    """
    Monta a configuração do pré-treinamento: preset, arquivo, ablações e flags.

    Raises:
        ValueError: Arquivo de configuração inválido
        ValidationError: Ablação inválida ou configuração final inválida
    """
    from dataclasses import replace
    from .config import Config, aplicar_ablacao, preset
    from .validation import ValidationError

    config = preset(args.preset)
    if args.config:
        if not os.path.exists(args.config):
            raise FileNotFoundError(f"Arquivo não encontrado: {args.config}")
        config = Config.carregar(args.config, base=config)
        if VERBOSE:
            print(f"🔧 Configuração carregada de {args.config}")

    for ablacao in args.ablation:
        config = aplicar_ablacao(config, ablacao)
        if VERBOSE:
            print(f"🔧 Ablação aplicada: {ablacao}")

    treino = config.train
    if args.epochs is not None:
        treino = replace(treino, epochs=args.epochs, warmup_epochs=min(treino.warmup_epochs, args.epochs))
    if args.max_steps is not None:
        treino = replace(treino, max_steps=args.max_steps)
    if args.seed is not None:
        treino = replace(treino, seed=args.seed)
    treino = replace(treino, threads=resolver_threads(args, treino.threads))
    config = replace(config, train=treino)

    erros = config.validar()
    if erros:
        raise ValidationError('; '.join(erros))
    return config


def executar_pretrain(args):
    """
    Executa o comando 'pretrain'.

    Fluxo:
    1. Montar configuração (preset + arquivo + ablações + flags)
    2. Carregar metadados e índice (ou construí-lo)
    3. Pré-treinar, exibindo o progresso
    4. Resumir métricas finais

    Returns:
        Código de saída (0 = sucesso, 1 = falha no treinamento, 2 = erro de entrada)
    """
    from .checkpoint import CheckpointError
    from .geo_index import IndexFormatError, NeighborIndex, build_index
    from .trainer import TrainingError, pretrain, total_steps
    from .validation import ValidationError

    # === 1. Configuração ===
    if not SILENT:
        print("📋 Carregando configuração...")
    try:
        config = montar_configuracao(args)
    except (ValueError, ValidationError, FileNotFoundError) as e:
        _imprimir_excecao("Erro de configuração", e)
        return 2

    if not SILENT:
        print(f"✓ Política: {config.loss.policy}, máscara [{config.mask.mask_m1}, {config.mask.mask_m2}], "
              f"pareamento: {config.data.pairing}, semente: {config.train.seed}")

    # === 2. Dados ===
    registros, codigo = _carregar_registros(args.meta)
    if registros is None:
        return codigo

    indice = None
    if config.data.pairing == 'neighbors':
        try:
            if args.index:
                indice = NeighborIndex.carregar(args.index)
                if VERBOSE:
                    print(f"🔧 Índice carregado de {args.index} (alpha={indice.alpha})")
            else:
                if not SILENT:
                    print(f"⚠️  --index não informado: construindo índice com alpha={config.data.alpha}")
                indice = build_index(registros, config.data.alpha)
        except (FileNotFoundError, IndexFormatError, ValidationError, OSError) as e:
            _imprimir_excecao("Erro ao carregar índice", e)
            return 2

        try:
            indice.validar_cobertura(registros)
        except ValidationError as e:
            print(f"❌ Erro de Validação: {e}")
            return 2

    # === 3. Pré-treinamento ===
    passos = total_steps(config.train, len(registros))
    intervalo = 1 if VERBOSE else max(passos // 10, 1)

    def ao_registrar(registro):
        if SILENT or registro.step % intervalo:
            return
        print(f"   passo {registro.step:6d}/{passos}  loss={registro.loss:.5f}  lr={registro.lr:.3e}  "
              f"máscara={registro.mask_ratio:.3f}  cross={registro.cross_fraction:.3f}")

    if not SILENT:
        print(f"🔧 Pré-treinando: {passos} passos de {config.train.batch_images} imagens")

    try:
        resultado = pretrain(registros, indice, config, args.out_dir, resume=args.resume,
                             silent=SILENT, ao_registrar=ao_registrar)
    except (ValidationError, FileNotFoundError, CheckpointError) as e:
        _imprimir_excecao("Erro de Validação", e)
        return 2
    except TrainingError as e:
        _imprimir_excecao(f"Falha no treinamento (passo {e.step})", e)
        return 1
    except OSError as e:
        _imprimir_excecao("Erro de arquivo", e)
        return 2

    # === 4. Resumo ===
    if not SILENT:
        registros_metricas = resultado.registros
        if registros_metricas:
            primeiros = [r.loss for r in registros_metricas[:10]]
            ultimos = [r.loss for r in registros_metricas[-10:]]
            print(f"📊 Perda média: primeiros passos {sum(primeiros) / len(primeiros):.5f}, "
                  f"últimos passos {sum(ultimos) / len(ultimos):.5f}")
        print(f"✅ Pré-treinamento concluído: {resultado.state.step} passos, "
              f"{resultado.state.images_seen} imagens")
    return 0


def executar_visualize(args):
    """
    Executa o comando 'visualize'.

    Returns:
        Código de saída (0 = sucesso, 2 = checkpoint, metadados ou ids inválidos)
    """
    import numpy as np
    import torch
    from dataclasses import replace
    from .augmentation import com_razao, montar_par
    from .checkpoint import CheckpointError, carregar_checkpoint
    from .file_manager import FileManager
    from .masking import mask_pair
    from .trainer import modelo_de_checkpoint
    from .validation import GeometryError, ValidationError
    from .visibility_loss import WEIGHT_POLICIES, cross_fraction
    from .visualization import render_painel, salvar_painel

    torch.set_num_threads(resolver_threads(args))

    try:
        checkpoint = carregar_checkpoint(args.checkpoint)
        model, config = modelo_de_checkpoint(checkpoint)
    except (FileNotFoundError, CheckpointError, ValueError) as e:
        _imprimir_excecao("Erro ao carregar checkpoint", e)
        return 2
    if not SILENT:
        print(f"✓ Checkpoint carregado: passo {checkpoint.step}")

    politica = args.policy or config.loss.policy
    if politica not in WEIGHT_POLICIES:
        print(f"❌ Política '{politica}' inválida. Deve ser uma de: {', '.join(WEIGHT_POLICIES)}")
        return 2

    registros, codigo = _carregar_registros(args.meta)
    if registros is None:
        return codigo
    por_id = {r.id: r for r in registros}
    desconhecidos = [id_ for id_ in args.pair if id_ not in por_id]
    if desconhecidos:
        print(f"❌ Ids desconhecidos: {', '.join(desconhecidos)}")
        return 2

    seed = args.seed if args.seed is not None else config.train.seed
    rng = np.random.default_rng(seed)
    tamanho = (config.model.input_size, config.model.input_size)
    grade = (tamanho[0] // config.model.patch_size, tamanho[1] // config.model.patch_size)

    try:
        par = montar_par(por_id[args.pair[0]], por_id[args.pair[1]], rng, config.augmentation, tamanho)
        mascara_i, mascara_j, ratio = mask_pair(par, config.mask, rng, grade)
    except (OSError, GeometryError, ValidationError) as e:
        _imprimir_excecao("Erro ao montar o par", e)
        return 2
    par = com_razao(par, ratio)

    painel = render_painel(model, par, (mascara_i, mascara_j), politica, config.loss.norm_pix,
                           config.loss.weight_space, args.escala)

    caminho = args.out
    if not caminho:
        nome = FileManager.gerar_nome_arquivo('painel', timestamp=FileManager.gerar_timestamp(), extensao='png')
        caminho = os.path.join('panels', nome)
    diretorio = os.path.dirname(caminho)
    if diretorio:
        os.makedirs(diretorio, exist_ok=True)

    try:
        salvar_painel(painel, caminho)
    except OSError as e:
        _imprimir_excecao("Erro ao salvar painel", e)
        return 2

    if not SILENT:
        print(f"✓ IoU do par: {par.iou:.3f}, razão de mascaramento: {ratio:.3f}")
        fracoes = [cross_fraction(v) for v in painel.resultado.visibilidade]
        print(f"✓ Fração CROSS: i={fracoes[0]:.3f}, j={fracoes[1]:.3f}")
        print(f"✓ Painel salvo: {caminho}")
    return 0


def executar_selftest(args):
    """
    Executa o comando 'selftest'.

    Returns:
        Código de saída (0 = todas passaram, 1 = alguma falhou, 2 = nome desconhecido)
    """
    import torch
    from .selftest import VERIFICACOES, executar_selftest as rodar

    nomes = [nome for nome, _ in VERIFICACOES]
    desconhecidas = [n for n in args.only if n not in nomes]
    if desconhecidas:
        print(f"❌ Verificações desconhecidas: {', '.join(desconhecidas)}. Disponíveis: {', '.join(nomes)}")
        return 2

    torch.set_num_threads(resolver_threads(args))

    def ao_concluir(resultado):
        if resultado.passou:
            if not SILENT:
                print(f"✓ {resultado.nome}: {resultado.detalhe} ({resultado.segundos:.1f}s)")
        else:
            print(f"❌ {resultado.nome}: {resultado.detalhe}")

    resultados = rodar(seed=args.seed or 0, apenas=args.only or None, ao_concluir=ao_concluir)
    falhas = [r.nome for r in resultados if not r.passou]

    if falhas:
        print(f"\n❌ Falharam: {', '.join(falhas)}")
        return 1
    if not SILENT:
        print(f"\n✅ {len(resultados)} verificações passaram")
    return 0


def executar_world(args):
    """
    Executa o comando 'world'.

    Returns:
        Código de saída (0 = sucesso, 2 = parâmetros inválidos ou erro de arquivo)
    """
    from .synthetic_world import WorldSpec, generate
    from .validation import ValidationError

    spec = WorldSpec(
        world_px=args.world_px,
        noise_octaves=args.octaves,
        seed=args.seed if args.seed is not None else 0,
        tile_px=args.tile_px,
        n_tiles=args.tiles,
        overlap_mode=args.mode,
        revisit_noise=args.revisit_noise,
    )
    erros = spec.validar()
    if erros:
        print("❌ Erro de Validação:")
        for erro in erros:
            print(f"   - {erro}")
        return 2

    if not SILENT:
        print(f"🔧 Gerando mundo {spec.world_px}×{spec.world_px} com {spec.n_tiles} tiles ({spec.overlap_mode})...")

    try:
        resultado = generate(spec, args.out_dir, silent=SILENT)
    except ValidationError as e:
        _imprimir_excecao("Erro de Validação", e)
        return 2
    except OSError as e:
        _imprimir_excecao("Erro de arquivo", e)
        return 2

    if not SILENT:
        print(f"✅ {len(resultado.records)} tiles gerados em {args.out_dir}")
    return 0


def executar_verify(args):
    """
    Executa o comando 'verify'.

    Returns:
        Código de saída (0 = consistente, 1 = pares inconsistentes, 2 = erro de entrada)
    """
    from .synthetic_world import WorldSpec, verify_consistency

    registros, codigo = _carregar_registros(args.meta)
    if registros is None:
        return codigo

    ruido = args.revisit_noise
    if ruido is None:
        caminho_mundo = os.path.join(os.path.dirname(os.path.abspath(args.meta)), 'world.json')
        ruido = 0.0
        if os.path.exists(caminho_mundo):
            try:
                ruido = WorldSpec.carregar(caminho_mundo).revisit_noise
            except (ValueError, TypeError) as e:
                _imprimir_excecao(f"Erro ao ler {caminho_mundo}", e)
                return 2
            if VERBOSE:
                print(f"🔧 revisit_noise={ruido} lido de {caminho_mundo}")

    try:
        relatorio = verify_consistency(registros, revisit_noise=ruido, pares=args.pairs,
                                       seed=args.seed if args.seed is not None else 0)
    except OSError as e:
        _imprimir_excecao("Erro ao ler imagens", e)
        return 2

    if VERBOSE:
        for par in relatorio.pares:
            print(f"   {par.ids[0]} × {par.ids[1]}: {par.n_pixels} pixels, erro médio {par.erro_medio:.4f}, "
                  f"correlação {par.correlacao:.4f}")

    if not relatorio.passou:
        for par in relatorio.falhas:
            print(f"❌ {par.ids[0]} × {par.ids[1]}: erro médio {par.erro_medio:.4f} > {relatorio.tolerancia:.4f}")
        return 1

    if not SILENT:
        print(f"✅ {len(relatorio.pares)} pares consistentes (tolerância {relatorio.tolerancia:.4f})")
    return 0
