#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
Controle de qualidade do registro: Dice de pulmão e corpo com limiares inclusivos
"""

import logging
from dataclasses import asdict, dataclass
from decimal import ROUND_HALF_UP, Decimal

import numpy as np
import pandas as pd

from volume import ErroEntradaDegenerada, verificar_geometria
from registro.campos import deformar_mascara, log_jacobiano

logger = logging.getLogger(__name__)

# Constantes
LIMIAR_DSC_PULMAO = 0.92
LIMIAR_DSC_CORPO = 0.975
COLUNAS_QA = ['scan_id', 'lung_dsc', 'body_dsc', 'success', 'folding_fraction']


def dice(a, b):
    """2|a∩b| / (|a|+|b|); dois conjuntos vazios concordam (1.0)."""
    verificar_geometria(a, b, "Dice")
    total = a.contagem() + b.contagem()
    if total == 0:
        return 1.0
    return 2.0 * int(np.count_nonzero(a.bits & b.bits)) / total


@dataclass(frozen=True)
class RelatorioQA:
    scan_id: str
    lung_dsc: float
    body_dsc: float
    success: bool
    folding_fraction: float

    def como_dict(self):
        return asdict(self)


def aprovado(lung_dsc, body_dsc, limiar_pulmao=LIMIAR_DSC_PULMAO, limiar_corpo=LIMIAR_DSC_CORPO):
    return lung_dsc >= limiar_pulmao and body_dsc >= limiar_corpo


def regiao_com_dados(valido_movel, campo, valido_referencia):
    """FOV do exame deformado ∩ FOV da referência."""
    return deformar_mascara(valido_movel, campo).intersecao(valido_referencia)


def avaliar_registro(scan_id, pulmao_deformado, corpo_deformado, pulmao_ref, corpo_ref, campo, roi=None,
                     limiar_pulmao=LIMIAR_DSC_PULMAO, limiar_corpo=LIMIAR_DSC_CORPO, regiao_comparacao=None):
    """
    QA de um exame registrado.

    Args:
        roi: região onde a fração de dobras é medida (padrão: corpo da referência)
        regiao_comparacao: voxels onde os dois exames têm dados; os DSC só olham
            para ela, de modo que um FOV cortado não conta como erro de registro

    Returns:
        RelatorioQA
    """
    verificar_geometria(campo, corpo_ref, "QA")
    _, dobras = log_jacobiano(campo, roi if roi is not None else corpo_ref)
    if regiao_comparacao is not None:
        pulmao_deformado, corpo_deformado, pulmao_ref, corpo_ref = (
            m.intersecao(regiao_comparacao) for m in (pulmao_deformado, corpo_deformado, pulmao_ref, corpo_ref)
        )
    lung_dsc = dice(pulmao_deformado, pulmao_ref)
    body_dsc = dice(corpo_deformado, corpo_ref)

    relatorio = RelatorioQA(
        scan_id=scan_id,
        lung_dsc=lung_dsc,
        body_dsc=body_dsc,
        success=aprovado(lung_dsc, body_dsc, limiar_pulmao, limiar_corpo),
        folding_fraction=dobras['fracao_dobrada'],
    )
    nivel = logging.INFO if relatorio.success else logging.WARNING
    logger.log(nivel, f"QA {scan_id}: DSC pulmão {lung_dsc:.4f}, corpo {body_dsc:.4f}, "
                      f"{'sucesso' if relatorio.success else 'FALHA'}")
    return relatorio


def _percentual(parte, total):
    """Percentual com uma casa, arredondamento half-up (11/12 -> 91.7)."""
    valor = Decimal(parte) * 100 / Decimal(total)
    return float(valor.quantize(Decimal('0.1'), rounding=ROUND_HALF_UP))


def _resumo(relatorios):
    pulmao = np.array([r.lung_dsc for r in relatorios])
    corpo = np.array([r.body_dsc for r in relatorios])
    sucessos = sum(1 for r in relatorios if r.success)
    return {
        'n': len(relatorios),
        'sucessos': sucessos,
        'percentual_sucesso': _percentual(sucessos, len(relatorios)),
        'lung_dsc_media': float(np.mean(pulmao)),
        'lung_dsc_desvio': float(np.std(pulmao)),
        'body_dsc_media': float(np.mean(corpo)),
        'body_dsc_desvio': float(np.std(corpo)),
    }


def relatorio_coorte(relatorios, manifesto=None, campos_subgrupo=('sex', 'copd', 'cac')):
    """
    Sucesso geral e por subgrupo do manifesto.

    Returns:
        dict {'geral': resumo, 'subgrupos': {campo: {valor: resumo}}}

    Raises:
        ErroEntradaDegenerada: lista vazia
    """
    if not relatorios:
        raise ErroEntradaDegenerada("Relatório de coorte sem exames", 'coorte_vazia')

    resultado = {'geral': _resumo(relatorios), 'subgrupos': {}}
    if manifesto is not None:
        por_id = manifesto.set_index('scan_id')
        for campo in campos_subgrupo:
            grupos = {}
            for relatorio in relatorios:
                if relatorio.scan_id not in por_id.index:
                    continue
                valor = por_id.at[relatorio.scan_id, campo]
                chave = 'desconhecido' if pd.isna(valor) or str(valor).strip() == '' else str(valor).strip()
                grupos.setdefault(chave, []).append(relatorio)
            resultado['subgrupos'][campo] = {chave: _resumo(grupo) for chave, grupo in sorted(grupos.items())}

    geral = resultado['geral']
    logger.info(f"Coorte: {geral['sucessos']}/{geral['n']} sucessos ({geral['percentual_sucesso']}%)")
    return resultado


def salvar_csv_qa(relatorios, caminho):
    """CSV com scan_id,lung_dsc,body_dsc,success,folding_fraction; 4 casas, success 0/1."""
    tabela = pd.DataFrame([r.como_dict() for r in relatorios], columns=COLUNAS_QA)
    tabela['success'] = tabela['success'].astype(int)
    tabela.to_csv(caminho, index=False, float_format='%.4f')
    return tabela


def salvar_resumo_csv(resumo, caminho):
    """Tabela de comparação: uma linha por (campo, subgrupo) mais a linha geral."""
    linhas = [{'campo': 'geral', 'grupo': 'todos', **resumo['geral']}]
    for campo, grupos in resumo['subgrupos'].items():
        for grupo, valores in grupos.items():
            linhas.append({'campo': campo, 'grupo': grupo, **valores})
    tabela = pd.DataFrame(linhas)
    tabela['percentual_sucesso'] = tabela['percentual_sucesso'].map(lambda v: f"{v:.1f}")
    tabela.to_csv(caminho, index=False, float_format='%.4f')
    return tabela
