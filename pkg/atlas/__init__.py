# -*- coding: utf-8 -*-

"""Pacote de atlas do AtlasTorax: acumulação, QA, ajuste em grade e exportação"""

from .construcao import (
    AcumuladorAtlas,
    PacoteAtlas,
    inteiros_exatos,
    roi_padrao,
    regiao_efetiva,
    diferenca_atlas,
    hash_configuracao,
    construir_atlas_coorte,
)
from .qualidade import (
    RelatorioQA,
    dice,
    aprovado,
    avaliar_registro,
    regiao_com_dados,
    relatorio_coorte,
    salvar_csv_qa,
    salvar_resumo_csv,
)
from .ajuste import GradeBusca, carregar_grade, grade_de_dict, busca_em_grade, salvar_ranking_csv, estagio_vencedor
from .exportacao import salvar_atlas, carregar_atlas, exportar_figuras, exportar_diferenca

__all__ = [
    'AcumuladorAtlas',
    'PacoteAtlas',
    'inteiros_exatos',
    'roi_padrao',
    'regiao_efetiva',
    'diferenca_atlas',
    'hash_configuracao',
    'construir_atlas_coorte',
    'RelatorioQA',
    'dice',
    'aprovado',
    'avaliar_registro',
    'regiao_com_dados',
    'relatorio_coorte',
    'salvar_csv_qa',
    'salvar_resumo_csv',
    'GradeBusca',
    'carregar_grade',
    'grade_de_dict',
    'busca_em_grade',
    'salvar_ranking_csv',
    'estagio_vencedor',
    'salvar_atlas',
    'carregar_atlas',
    'exportar_figuras',
    'exportar_diferenca',
]
