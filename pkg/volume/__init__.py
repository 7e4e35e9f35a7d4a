# -*- coding: utf-8 -*-

"""Pacote de volumes do AtlasTorax: geometria, amostragem e E/S NIfTI"""

from .erros import (
    ErroAtlas,
    ErroEntradaSaida,
    ErroConfiguracao,
    ErroSelecaoVazia,
    ErroGeometria,
    ErroEntradaDegenerada,
    ErroNifti,
    ErroSubdeterminado,
    ErroFalhaEstagio,
)
from .nucleo import (
    HU_AR,
    Geometria,
    Volume,
    Mascara,
    TransformacaoAfim,
    CampoDeslocamento,
    amostrar_trilinear,
    amostrar_pontos,
    amostrar_mascara,
    geometria_reamostrada,
    reamostrar_espacamento,
    reamostrar_para_geometria,
    verificar_geometria,
)
from .nifti import ler_nifti, salvar_nifti, ler_mascara, salvar_mascara, ler_campo, salvar_campo

__all__ = [
    'ErroAtlas',
    'ErroEntradaSaida',
    'ErroConfiguracao',
    'ErroSelecaoVazia',
    'ErroGeometria',
    'ErroEntradaDegenerada',
    'ErroNifti',
    'ErroSubdeterminado',
    'ErroFalhaEstagio',
    'HU_AR',
    'Geometria',
    'Volume',
    'Mascara',
    'TransformacaoAfim',
    'CampoDeslocamento',
    'amostrar_trilinear',
    'amostrar_pontos',
    'amostrar_mascara',
    'geometria_reamostrada',
    'reamostrar_espacamento',
    'reamostrar_para_geometria',
    'verificar_geometria',
    'ler_nifti',
    'salvar_nifti',
    'ler_mascara',
    'salvar_mascara',
    'ler_campo',
    'salvar_campo',
]
