#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
Carregamento da configuração INI do AtlasTorax
"""

import configparser
import logging
import os

from registro import ConfigAfim, ConfigPreprocessamento
from volume import ErroConfiguracao

logger = logging.getLogger(__name__)

# Constantes
CONFIG_DIR = "configuracoes"
CONFIG_PATH = os.path.join(CONFIG_DIR, "atlas_config.ini")

LIMIAR_DSC_PULMAO = 0.92
LIMIAR_DSC_CORPO = 0.975
JANELA_EXIBICAO = (-900.0, -700.0)

CONFIG_PADRAO = {
    'qa': {'limiar_pulmao': LIMIAR_DSC_PULMAO, 'limiar_corpo': LIMIAR_DSC_CORPO},
    'exportacao': {'janela': JANELA_EXIBICAO},
    'execucao': {'trabalhadores': 1, 'diretorio_log': 'log', 'banco_cache': 'registros.db'},
}


def par_float(texto, nome):
    partes = [p.strip() for p in str(texto).split(',')]
    try:
        baixo, alto = (float(p) for p in partes)
    except ValueError:
        raise ErroConfiguracao(f"{nome} deve ser 'BAIXO,ALTO', recebido {texto!r}")
    if not baixo < alto:
        raise ErroConfiguracao(f"{nome} com BAIXO >= ALTO: {texto!r}")
    return baixo, alto


def _secao_preprocessamento(secao):
    padrao = ConfigPreprocessamento()
    janela = par_float(secao.get('janela_pulmao', f"{padrao.pulmao_min},{padrao.pulmao_max}"), 'janela_pulmao')
    return ConfigPreprocessamento(
        limiar_corpo=secao.getfloat('limiar_corpo', padrao.limiar_corpo),
        pulmao_min=janela[0],
        pulmao_max=janela[1],
        raio_fechamento_corpo=secao.getint('raio_fechamento_corpo', padrao.raio_fechamento_corpo),
        raio_fechamento_pulmao=secao.getint('raio_fechamento_pulmao', padrao.raio_fechamento_pulmao),
        razao_segundo_pulmao=secao.getfloat('razao_segundo_pulmao', padrao.razao_segundo_pulmao),
    )


def _secao_afim(secao):
    padrao = ConfigAfim()
    return ConfigAfim(
        janela=par_float(secao.get('janela', f"{padrao.janela[0]},{padrao.janela[1]}"), 'janela'),
        niveis_piramide=secao.getint('niveis_piramide', padrao.niveis_piramide),
        tamanho_bloco=secao.getint('tamanho_bloco', padrao.tamanho_bloco),
        fracao_blocos=secao.getfloat('fracao_blocos', padrao.fracao_blocos),
        raio_busca_blocos=secao.getint('raio_busca_blocos', padrao.raio_busca_blocos),
        fracao_corte=secao.getfloat('fracao_corte', padrao.fracao_corte),
        iteracoes_por_nivel=secao.getint('iteracoes_por_nivel', padrao.iteracoes_por_nivel),
    )


def carregar_configuracao(caminho=None):
    """
    Carrega as configurações do arquivo INI ou usa os valores padrão.

    Seções ausentes (ou o arquivo inteiro, quando não existe e não foi pedido
    explicitamente) caem nos padrões do código.

    Returns:
        Dicionário com as chaves 'preprocessamento', 'afim', 'qa',
        'exportacao' e 'execucao'

    Raises:
        ErroConfiguracao: arquivo pedido inexistente ou valor inválido
    """
    explicito = caminho is not None
    caminho = caminho or CONFIG_PATH
    config = configparser.ConfigParser()

    if os.path.exists(caminho):
        try:
            config.read(caminho, encoding='utf-8')
        except configparser.Error as e:
            raise ErroConfiguracao(f"Erro ao ler {caminho}: {e}")
        logger.info(f"Configuração carregada de {caminho}")
    elif explicito:
        raise ErroConfiguracao(f"Arquivo de configuração não encontrado: {caminho}")
    else:
        logger.info("Arquivo de configuração ausente; usando valores padrão")

    def secao(nome):
        return config[nome] if nome in config else config[configparser.DEFAULTSECT]

    try:
        qa = secao('QA')
        exportacao = secao('EXPORTACAO')
        execucao = secao('EXECUCAO')
        resultado = {
            'preprocessamento': _secao_preprocessamento(secao('PREPROCESSAMENTO')),
            'afim': _secao_afim(secao('AFIM')),
            'qa': {
                'limiar_pulmao': qa.getfloat('limiar_pulmao', LIMIAR_DSC_PULMAO),
                'limiar_corpo': qa.getfloat('limiar_corpo', LIMIAR_DSC_CORPO),
            },
            'exportacao': {
                'janela': par_float(exportacao.get('janela', '-900,-700'), 'janela'),
            },
            'execucao': {
                'trabalhadores': execucao.getint('trabalhadores', 1),
                'diretorio_log': execucao.get('diretorio_log', 'log'),
                'banco_cache': execucao.get('banco_cache', 'registros.db'),
            },
        }
    except ValueError as e:
        raise ErroConfiguracao(f"Valor inválido em {caminho}: {e}")

    if resultado['execucao']['trabalhadores'] < 1:
        raise ErroConfiguracao("trabalhadores deve ser >= 1")
    return resultado


def configuracao_padrao():
    """Configuração sem arquivo, para uso programático e testes."""
    return {
        'preprocessamento': ConfigPreprocessamento(),
        'afim': ConfigAfim(),
        'qa': dict(CONFIG_PADRAO['qa']),
        'exportacao': dict(CONFIG_PADRAO['exportacao']),
        'execucao': dict(CONFIG_PADRAO['execucao']),
    }
