#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
AtlasTorax - Aplicação principal
Registro multiestágio de TC de tórax e construção de atlas de coorte
"""

import argparse
import logging
import os
import sys
from pathlib import Path

from volume import (
    ErroAtlas,
    ErroConfiguracao,
    ler_nifti,
    salvar_campo,
    salvar_mascara,
    salvar_nifti,
)
from registro import (
    carregar_estagios,
    estagio_unico,
    estagios_otimizados,
    preparar_exame,
    preprocessar,
    registrar_exame,
    salvar_estagios,
)
from atlas import (
    busca_em_grade,
    carregar_atlas,
    carregar_grade,
    construir_atlas_coorte,
    diferenca_atlas,
    estagio_vencedor,
    exportar_diferenca,
    exportar_figuras,
    avaliar_registro,
    regiao_com_dados,
    relatorio_coorte,
    roi_padrao,
    salvar_atlas,
    salvar_csv_qa,
    salvar_ranking_csv,
    salvar_resumo_csv,
)
from data import carregar_configuracao, carregar_manifesto, selecionar
from data.configuracao import par_float
from fantasma import carregar_espec, gerar_coorte

# --- Constantes --- #
LOG_NOME = "atlastorax.log"
SEPARATOR = "=" * 60  # Separador visual
PRESETS = {'otimizado': estagios_otimizados, 'estagio_unico': estagio_unico}

logger = logging.getLogger(__name__)


# --- Configuração de Logging --- #
def configurar_logging(diretorio_log, verbose=False):
    """Arquivo em `diretorio_log` mais terminal; bibliotecas de terceiros só em WARNING."""
    if not os.path.exists(diretorio_log):
        os.makedirs(diretorio_log)

    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(os.path.join(diretorio_log, LOG_NOME)),
            logging.StreamHandler()
        ],
        force=True,
    )
    for nome in ('nibabel', 'joblib', 'matplotlib', 'PIL'):
        logging.getLogger(nome).setLevel(logging.WARNING)


# --- Funções de Interface Auxiliares --- #
def print_header(title):
    """Imprime um cabeçalho formatado."""
    print(f"\n{SEPARATOR}")
    print(f"# {title.upper()} #")
    print(SEPARATOR)


def print_error(message):
    """Imprime uma mensagem de erro formatada."""
    print(f"\n[ERRO] {message}", file=sys.stderr)


def print_success(message):
    """Imprime uma mensagem de sucesso formatada."""
    print(f"\n[SUCESSO] {message}")


def print_info(message):
    """Imprime uma mensagem informativa formatada."""
    print(f"\n[INFO] {message}")


def _radical(caminho):
    nome = Path(caminho).name
    for sufixo in ('.nii.gz', '.nii'):
        if nome.endswith(sufixo):
            return nome[:-len(sufixo)]
    return Path(caminho).stem


def _janela(texto):
    try:
        return par_float(texto, '--window')
    except ErroConfiguracao as e:
        raise argparse.ArgumentTypeError(e.mensagem)


def _estagios(args):
    if getattr(args, 'stages', None):
        return carregar_estagios(args.stages)
    return PRESETS[args.preset]()


def _referencia(caminho, config):
    return preparar_exame(_radical(caminho), ler_nifti(caminho), config['preprocessamento'])


# --- Comandos --- #
def cmd_preprocess(args, config):
    """HU sem ambiente, corpo e pulmão do exame de entrada."""
    print_header("Preprocessamento")
    vol = ler_nifti(args.entrada)
    vol_pre, segmentacao = preprocessar(vol, config['preprocessamento'])

    radical = _radical(args.entrada)
    salvar_nifti(vol_pre, os.path.join(args.saida, f"{radical}_hu.nii.gz"))
    salvar_mascara(segmentacao.corpo, os.path.join(args.saida, f"{radical}_corpo.nii.gz"))
    salvar_mascara(segmentacao.pulmao, os.path.join(args.saida, f"{radical}_pulmao.nii.gz"))
    print_success(f"Corpo: {segmentacao.corpo.contagem()} voxels, pulmão: {segmentacao.pulmao.contagem()} voxels")


def cmd_register(args, config):
    """Afim + estágios não rígidos; grava campo, volume e máscaras deformados e a linha de QA."""
    print_header("Registro")
    estagios = _estagios(args)
    referencia = _referencia(args.referencia, config)
    exame = preparar_exame(_radical(args.movel), ler_nifti(args.movel), config['preprocessamento'])

    resultado = registrar_exame(exame, referencia, estagios, config['afim'])
    relatorio = avaliar_registro(
        exame.id_exame,
        resultado.pulmao,
        resultado.corpo,
        referencia.segmentacao.pulmao,
        referencia.segmentacao.corpo,
        resultado.campo_total,
        roi_padrao(referencia),
        config['qa']['limiar_pulmao'],
        config['qa']['limiar_corpo'],
        regiao_com_dados(exame.volume.mascara_valida(), resultado.campo_total,
                         referencia.volume.mascara_valida()),
    )
    mapa_logjac, _ = resultado.log_jacobiano()

    os.makedirs(args.saida, exist_ok=True)
    salvar_campo(resultado.campo_total, os.path.join(args.saida, 'campo.nii.gz'))
    salvar_nifti(resultado.deformado, os.path.join(args.saida, 'deformado.nii.gz'))
    salvar_mascara(resultado.pulmao, os.path.join(args.saida, 'pulmao_deformado.nii.gz'))
    salvar_mascara(resultado.corpo, os.path.join(args.saida, 'corpo_deformado.nii.gz'))
    salvar_nifti(mapa_logjac, os.path.join(args.saida, 'logjac.nii.gz'))
    resultado.transformacao.salvar_txt(os.path.join(args.saida, 'afim.txt'))
    salvar_csv_qa([relatorio], os.path.join(args.saida, 'qa.csv'))

    situacao = "sucesso" if relatorio.success else "falha"
    print_info(f"DSC pulmão {relatorio.lung_dsc:.4f}, corpo {relatorio.body_dsc:.4f} ({situacao})")
    if resultado.avisos:
        print_info(f"{len(resultado.avisos)} subestágio(s) sem correspondências consistentes")


def cmd_atlas(args, config):
    """Atlas de coorte (ou subgrupo) com QA e figuras."""
    print_header("Construção de atlas")
    estagios = _estagios(args)
    manifesto = carregar_manifesto(args.manifesto)
    referencia = _referencia(args.referencia, config)

    pacote = construir_atlas_coorte(
        manifesto, referencia, args.filter, estagios, args.saida, config, args.workers
    )
    salvar_atlas(pacote, args.saida)
    exportar_figuras(pacote, os.path.join(args.saida, 'figuras'), args.window or config['exportacao']['janela'])

    if pacote.relatorios:
        salvar_csv_qa(pacote.relatorios, os.path.join(args.saida, 'qa.csv'))
        resumo = relatorio_coorte(pacote.relatorios, manifesto)
        salvar_resumo_csv(resumo, os.path.join(args.saida, 'qa_resumo.csv'))
        print_info(f"Sucesso do registro: {resumo['geral']['percentual_sucesso']:.1f}%")
    print_success(f"Atlas com {pacote.metadados['cohort_size']} exames gravado em {args.saida}")


def cmd_diff(args, config):
    """Diferença das médias de HU e log-Jacobiano entre dois atlas."""
    print_header("Diferença de atlas")
    a = carregar_atlas(args.atlas_a)
    b = carregar_atlas(args.atlas_b)
    diferenca_hu = diferenca_atlas(a.media_hu, b.media_hu)
    diferenca_logjac = diferenca_atlas(a.media_logjac, b.media_logjac)

    os.makedirs(args.saida, exist_ok=True)
    salvar_nifti(diferenca_hu, os.path.join(args.saida, 'hu_mean_diff.nii.gz'))
    salvar_nifti(diferenca_logjac, os.path.join(args.saida, 'logjac_mean_diff.nii.gz'))

    janela = args.window or config['exportacao']['janela']
    figuras = os.path.join(args.saida, 'figuras')
    exportar_diferenca(diferenca_hu, diferenca_logjac, figuras)
    exportar_figuras(a, figuras, janela, prefixo='a_')
    exportar_figuras(b, figuras, janela, prefixo='b_')
    print_success(f"Mapas de diferença gravados em {args.saida}")


def cmd_tune(args, config):
    """Busca em grade do estágio alvo; grava o ranking e a lista de estágios vencedora."""
    print_header("Ajuste em grade")
    estagios = _estagios(args)
    grade = carregar_grade(args.grade)
    manifesto = selecionar(carregar_manifesto(args.manifesto), args.filter)
    referencia = _referencia(args.referencia, config)
    exames = [(linha.scan_id, ler_nifti(linha.path)) for linha in manifesto.itertuples(index=False)]

    ranking = busca_em_grade(exames, referencia, estagios, grade, config, trabalhadores=args.workers)
    salvar_ranking_csv(ranking, args.saida, total=grade.total)

    vencedores = list(estagios)
    vencedores[grade.estagio] = estagio_vencedor(ranking, estagios, grade.estagio)
    caminho_estagios = str(Path(args.saida).with_suffix('')) + '_estagios.json'
    salvar_estagios(vencedores, caminho_estagios)
    print_success(f"{len(ranking)} configurações avaliadas; melhor com {ranking[0]['falhas']} falha(s)")


def cmd_phantom(args, config):
    """Coorte de fantasmas sintéticos com manifesto."""
    print_header("Fantasmas")
    dados = carregar_espec(args.espec)
    if args.seed is not None:
        dados['seed'] = args.seed
    manifesto = gerar_coorte(dados, args.saida)
    print_success(f"{len(manifesto)} fantasma(s) gravado(s) em {args.saida}")


# --- Argumentos --- #
class _Parser(argparse.ArgumentParser):
    """Erros de uso saem com o código de configuração."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(ErroConfiguracao.codigo_saida, f"{self.prog}: erro: {message}\n")


def criar_parser():
    parser = _Parser(prog='atlastorax', description=__doc__.strip().splitlines()[0])
    parser.add_argument('--config', help='arquivo INI (padrão: configuracoes/atlas_config.ini)')
    parser.add_argument('--verbose', action='store_true', help='logging em DEBUG')
    parser.add_argument('--log-dir', dest='log_dir', help='diretório do arquivo de log')
    sub = parser.add_subparsers(dest='comando', required=True, parser_class=_Parser)

    def com_estagios(p):
        p.add_argument('--stages', help='lista de estágios em JSON')
        p.add_argument('--preset', choices=sorted(PRESETS), default='otimizado')

    def com_trabalhadores(p):
        p.add_argument('--workers', type=int, default=None, help='largura do pool de processos')
        p.add_argument('--filter', default='', help="ex.: 'bmi>=18.5 and bmi<=24.9'")

    p = sub.add_parser('preprocess', help='segmentação e remoção do ambiente')
    p.add_argument('entrada')
    p.add_argument('saida')
    p.set_defaults(funcao=cmd_preprocess)

    p = sub.add_parser('register', help='registro de um exame na referência')
    p.add_argument('movel')
    p.add_argument('referencia')
    p.add_argument('saida')
    com_estagios(p)
    p.set_defaults(funcao=cmd_register)

    p = sub.add_parser('atlas', help='atlas de coorte')
    p.add_argument('manifesto')
    p.add_argument('referencia')
    p.add_argument('saida')
    com_estagios(p)
    com_trabalhadores(p)
    p.add_argument('--window', type=_janela, help='janela de exibição BAIXO,ALTO')
    p.set_defaults(funcao=cmd_atlas)

    p = sub.add_parser('diff', help='diferença entre dois atlas')
    p.add_argument('atlas_a')
    p.add_argument('atlas_b')
    p.add_argument('saida')
    p.add_argument('--window', type=_janela, help='janela de exibição BAIXO,ALTO')
    p.set_defaults(funcao=cmd_diff)

    p = sub.add_parser('tune', help='busca em grade de um estágio')
    p.add_argument('manifesto')
    p.add_argument('referencia')
    p.add_argument('grade')
    p.add_argument('saida')
    com_estagios(p)
    com_trabalhadores(p)
    p.set_defaults(funcao=cmd_tune)

    p = sub.add_parser('phantom', help='coorte de fantasmas sintéticos')
    p.add_argument('espec')
    p.add_argument('saida')
    p.add_argument('--seed', type=int, default=None)
    p.set_defaults(funcao=cmd_phantom)
    return parser


def main(argv=None):
    """Função principal da aplicação; devolve o código de saída."""
    args = criar_parser().parse_args(argv)

    try:
        config = carregar_configuracao(args.config)
        configurar_logging(args.log_dir or config['execucao']['diretorio_log'], args.verbose)
        if getattr(args, 'workers', None) is None and hasattr(args, 'workers'):
            args.workers = config['execucao']['trabalhadores']
        if getattr(args, 'workers', 1) < 1:
            raise ErroConfiguracao(f"--workers deve ser >= 1: {args.workers}")

        logger.info(f"Iniciando AtlasTorax: {args.comando}")
        args.funcao(args, config)
        return 0

    except ErroAtlas as e:
        print_error(e.mensagem)
        logger.error(f"{args.comando} falhou ({e.tipo_erro}): {e.mensagem}")
        return e.codigo_saida
    except KeyboardInterrupt:
        print("\n\nOperação interrompida pelo usuário.")
        logger.warning("Aplicação interrompida por KeyboardInterrupt.")
        return 130
    except Exception as e:
        print(f"\n[ERRO FATAL] Ocorreu um erro inesperado: {e}", file=sys.stderr)
        logger.critical(f"Erro fatal não tratado na execução principal: {e}", exc_info=True)
        return 1


# --- Execução Principal --- #
if __name__ == "__main__":
    sys.exit(main())
