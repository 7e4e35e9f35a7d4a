#!/usr/bin/env python
# -*- coding: utf-8 -*-

import os
import sys
from dataclasses import replace

import pytest

# Adicionar diretório raiz ao path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from fantasma import EspecFantasma, gerar_fantasma  # noqa: E402
from registro import ConfigEstagio, preparar_exame  # noqa: E402


@pytest.fixture(scope='session')
def espec_pequena():
    """Fantasma 48³ a 4 mm: mesma anatomia do padrão em grade reduzida."""
    return EspecFantasma(dims=(48, 48, 48), espacamento=(4.0, 4.0, 4.0))


@pytest.fixture(scope='session')
def fantasma_pequeno(espec_pequena):
    return gerar_fantasma(espec_pequena)


@pytest.fixture(scope='session')
def fantasma_sem_ruido(espec_pequena):
    return gerar_fantasma(replace(espec_pequena, ruido_hu=0.0))


@pytest.fixture(scope='session')
def referencia_pequena(fantasma_pequeno):
    volume, _ = fantasma_pequeno
    return preparar_exame('referencia', volume)


@pytest.fixture(scope='session')
def estagios_rapidos():
    """Um estágio barato para grades de 4 mm."""
    return [ConfigEstagio(resolucao=4.0, raio_busca=(3, 3), dispersao=(3, 3), raio_patch=(1, 1),
                          regularizacao=0.5)]
