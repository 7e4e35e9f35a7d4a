# -*- coding: utf-8 -*-

"""Pacote de dados do AtlasTorax: manifestos, configuração e cache de registros"""

from .database import (
    inicializar_banco_dados,
    obter_registro,
    salvar_registro,
    listar_registros,
)
from .manifesto import (
    COLUNAS,
    carregar_manifesto,
    analisar_filtro,
    filtrar_manifesto,
    selecionar,
)
from .configuracao import carregar_configuracao, configuracao_padrao

__all__ = [
    'inicializar_banco_dados',
    'obter_registro',
    'salvar_registro',
    'listar_registros',
    'COLUNAS',
    'carregar_manifesto',
    'analisar_filtro',
    'filtrar_manifesto',
    'selecionar',
    'carregar_configuracao',
    'configuracao_padrao',
]
