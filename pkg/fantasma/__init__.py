# -*- coding: utf-8 -*-

"""Fantasmas torácicos sintéticos e deformações analíticas do AtlasTorax"""

from .gerador import (
    EspecFantasma,
    DeformacaoSintetica,
    gerar_fantasma,
    gerar_deformacao,
    gerar_coorte,
    espec_de_dict,
    carregar_espec,
    rotulos_em,
)

__all__ = [
    'EspecFantasma',
    'DeformacaoSintetica',
    'gerar_fantasma',
    'gerar_deformacao',
    'gerar_coorte',
    'espec_de_dict',
    'carregar_espec',
    'rotulos_em',
]
