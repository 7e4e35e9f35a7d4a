# -*- coding: utf-8 -*-

"""Pacote de registro do AtlasTorax: preprocessamento, afim, estágios não rígidos e campos"""

from .preprocessamento import (
    ConfigPreprocessamento,
    ParSegmentacao,
    segmentar_corpo,
    segmentar_pulmao,
    remover_ambiente,
    preprocessar,
)
from .afim import ConfigAfim, recortar_janela, registrar_afim, aplicar_afim, aplicar_afim_mascara
from .campos import (
    amostrar_campo,
    deformar,
    deformar_mascara,
    compor,
    compor_com_afim,
    afim_para_campo,
    reamostrar_campo,
    log_jacobiano,
)
from .corrfield import (
    ConfigEstagio,
    ConjuntoPontosChave,
    TabelaCustos,
    amostrar_pontos_chave,
    descritor_ssc,
    custos_unarios,
    arvore_geradora,
    energia,
    regularizar_mst,
    filtrar_simetria,
    densificar,
    executar_estagio,
    executar_pipeline,
    estagios_otimizados,
    estagio_unico,
    carregar_estagios,
    salvar_estagios,
)
from .pipeline import ExamePreparado, ResultadoRegistro, preparar_exame, registrar_exame

__all__ = [
    'ConfigPreprocessamento',
    'ParSegmentacao',
    'segmentar_corpo',
    'segmentar_pulmao',
    'remover_ambiente',
    'preprocessar',
    'ConfigAfim',
    'recortar_janela',
    'registrar_afim',
    'aplicar_afim',
    'aplicar_afim_mascara',
    'amostrar_campo',
    'deformar',
    'deformar_mascara',
    'compor',
    'compor_com_afim',
    'afim_para_campo',
    'reamostrar_campo',
    'log_jacobiano',
    'ConfigEstagio',
    'ConjuntoPontosChave',
    'TabelaCustos',
    'amostrar_pontos_chave',
    'descritor_ssc',
    'custos_unarios',
    'arvore_geradora',
    'energia',
    'regularizar_mst',
    'filtrar_simetria',
    'densificar',
    'executar_estagio',
    'executar_pipeline',
    'estagios_otimizados',
    'estagio_unico',
    'carregar_estagios',
    'salvar_estagios',
    'ExamePreparado',
    'ResultadoRegistro',
    'preparar_exame',
    'registrar_exame',
]
