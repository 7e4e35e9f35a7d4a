#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
Ajuste de hiperparâmetros de um estágio por busca exaustiva em grade.

Cada configuração substitui o estágio alvo da lista base e é avaliada em todos
os exames de ajuste; o ranking ordena por número de falhas de QA, depois pela
média do DSC de pulmão (maior primeiro) e, por fim, pelos próprios parâmetros.
"""

import itertools
import json
import logging
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from volume import ErroAtlas, ErroConfiguracao, ErroEntradaDegenerada
from registro.pipeline import alinhar_afim, preparar_exame, registrar_exame
from data.configuracao import configuracao_padrao

from .construcao import roi_padrao
from .qualidade import RelatorioQA, avaliar_registro, regiao_com_dados

logger = logging.getLogger(__name__)

CHAVES_GRADE = {
    'search_radius': 'raio_busca',
    'dispersion': 'dispersao',
    'patch_radius': 'raio_patch',
    'regularization': 'regularizacao',
}


def _normalizar(valor):
    """Escalar ou par [plano, através] -> forma hasheável e ordenável."""
    if isinstance(valor, (list, tuple)):
        return tuple(float(v) for v in valor)
    return float(valor)


@dataclass(frozen=True)
class GradeBusca:
    estagio: int
    raio_busca: tuple
    dispersao: tuple
    raio_patch: tuple
    regularizacao: tuple

    def __post_init__(self):
        if not isinstance(self.estagio, int) or self.estagio < 0:
            raise ErroConfiguracao(f"Índice de estágio inválido: {self.estagio!r}")
        for nome in CHAVES_GRADE.values():
            valores = getattr(self, nome)
            if not isinstance(valores, (list, tuple)) or len(valores) == 0:
                raise ErroConfiguracao(f"Lista de candidatos vazia ou inválida para {nome}")
            object.__setattr__(self, nome, tuple(_normalizar(v) for v in valores))

    @property
    def total(self):
        return len(self.raio_busca) * len(self.dispersao) * len(self.raio_patch) * len(self.regularizacao)

    def configuracoes(self):
        """Produto cartesiano como dicionários de parâmetros de ConfigEstagio."""
        for raio, dispersao, patch, regularizacao in itertools.product(
                self.raio_busca, self.dispersao, self.raio_patch, self.regularizacao):
            yield {'raio_busca': raio, 'dispersao': dispersao, 'raio_patch': patch, 'regularizacao': regularizacao}


def grade_de_dict(dados):
    if not isinstance(dados, dict):
        raise ErroConfiguracao("Grade deve ser um objeto JSON")
    desconhecidas = set(dados) - set(CHAVES_GRADE) - {'stage'}
    if desconhecidas:
        raise ErroConfiguracao(f"Chaves desconhecidas na grade: {sorted(desconhecidas)}")
    ausentes = ({'stage'} | set(CHAVES_GRADE)) - set(dados)
    if ausentes:
        raise ErroConfiguracao(f"Chaves ausentes na grade: {sorted(ausentes)}")
    try:
        return GradeBusca(dados['stage'], **{CHAVES_GRADE[c]: dados[c] for c in CHAVES_GRADE})
    except (TypeError, ValueError) as e:
        raise ErroConfiguracao(f"Grade inválida: {e}")


def carregar_grade(caminho):
    try:
        with open(caminho, 'r', encoding='utf-8') as arquivo:
            dados = json.load(arquivo)
    except OSError as e:
        raise ErroConfiguracao(f"Não foi possível ler {caminho}: {e}")
    except json.JSONDecodeError as e:
        raise ErroConfiguracao(f"{caminho}: JSON inválido na linha {e.lineno}, coluna {e.colno}: {e.msg}")
    return grade_de_dict(dados)


def avaliar_com_pipeline(exame, referencia, estagios, config):
    """Avaliador padrão: pipeline completo seguido do QA."""
    resultado = registrar_exame(exame, referencia, estagios, config['afim'])
    return avaliar_registro(
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


def _relatorio_falho(id_exame):
    return RelatorioQA(id_exame, 0.0, 0.0, False, 0.0)


def _avaliar_configuracao(parametros, exames, referencia, estagios_base, estagio, config, avaliador):
    try:
        estagio_teste = replace(estagios_base[estagio], **parametros)
    except ErroConfiguracao as e:
        logger.warning(f"Configuração inválida {parametros}: {e.mensagem}")
        return parametros, [_relatorio_falho(exame.id_exame) for exame in exames], True

    estagios = list(estagios_base)
    estagios[estagio] = estagio_teste
    relatorios = []
    for exame in exames:
        try:
            relatorios.append(avaliador(exame, referencia, estagios, config))
        except ErroAtlas as e:
            logger.warning(f"{exame.id_exame} falhou com {parametros}: {e.mensagem}")
            relatorios.append(_relatorio_falho(exame.id_exame))
    return parametros, relatorios, False


def _chave_parametros(parametros):
    def ordenavel(valor):
        return valor if isinstance(valor, tuple) else (valor,)
    return tuple(ordenavel(parametros[nome]) for nome in CHAVES_GRADE.values())


def busca_em_grade(exames, referencia, estagios_base, grade, config=None, avaliador=None, trabalhadores=1):
    """
    Avalia todas as configurações da grade.

    Args:
        exames: lista de (scan_id, Volume) de ajuste
        referencia: ExamePreparado da referência
        estagios_base: lista de ConfigEstagio; o estágio `grade.estagio` é substituído
        grade: GradeBusca
        config: dicionário de `carregar_configuracao`
        avaliador: callable(exame, referencia, estagios, config) -> RelatorioQA
        trabalhadores: largura do pool sobre as configurações

    Returns:
        Lista de registros ordenados do melhor para o pior, um por configuração
    """
    if not exames:
        raise ErroEntradaDegenerada("Busca em grade sem exames de ajuste", 'coorte_vazia')
    if grade.estagio >= len(estagios_base):
        raise ErroConfiguracao(f"Estágio {grade.estagio} fora da lista de {len(estagios_base)} estágio(s)")
    config = config or configuracao_padrao()
    avaliador = avaliador or avaliar_com_pipeline

    preparados = []
    for id_exame, vol in exames:
        exame = preparar_exame(id_exame, vol, config['preprocessamento'])
        preparados.append(alinhar_afim(exame, referencia, config['afim']))
    logger.info(f"Busca em grade: {grade.total} configurações x {len(preparados)} exames no estágio {grade.estagio}")

    avaliacoes = Parallel(n_jobs=trabalhadores)(
        delayed(_avaliar_configuracao)(
            parametros, preparados, referencia, estagios_base, grade.estagio, config, avaliador
        )
        for parametros in grade.configuracoes()
    )

    ranking = []
    for parametros, relatorios, invalida in avaliacoes:
        ranking.append({
            **parametros,
            'falhas': sum(1 for r in relatorios if not r.success),
            'lung_dsc_media': float(np.mean([r.lung_dsc for r in relatorios])),
            'body_dsc_media': float(np.mean([r.body_dsc for r in relatorios])),
            'invalida': invalida,
            'relatorios': relatorios,
        })
    ranking.sort(key=lambda r: (r['falhas'], -r['lung_dsc_media'], _chave_parametros(r)))

    melhor = ranking[0]
    logger.info(f"Melhor configuração: {_chave_parametros(melhor)} com {melhor['falhas']} falha(s), "
                f"DSC pulmão médio {melhor['lung_dsc_media']:.4f}")
    return ranking


def _formatar(valor):
    if isinstance(valor, tuple):
        return '/'.join(f"{v:g}" for v in valor)
    return f"{valor:g}"


def salvar_ranking_csv(ranking, caminho, total=None):
    """CSV do ranking; a primeira linha é `# configuracoes=<produto da grade>`."""
    linhas = [{
        'rank': posicao + 1,
        'failures': r['falhas'],
        'lung_dsc_mean': r['lung_dsc_media'],
        'body_dsc_mean': r['body_dsc_media'],
        'search_radius': _formatar(r['raio_busca']),
        'dispersion': _formatar(r['dispersao']),
        'patch_radius': _formatar(r['raio_patch']),
        'regularization': _formatar(r['regularizacao']),
        'invalid': int(r['invalida']),
    } for posicao, r in enumerate(ranking)]
    with open(caminho, 'w', encoding='utf-8', newline='') as arquivo:
        arquivo.write(f"# configuracoes={total if total is not None else len(ranking)}\n")
        pd.DataFrame(linhas).to_csv(arquivo, index=False, float_format='%.4f')
    logger.info(f"Ranking com {len(linhas)} configurações gravado em {caminho}")


def estagio_vencedor(ranking, estagios_base, estagio):
    """ConfigEstagio da melhor configuração válida."""
    for registro in ranking:
        if not registro['invalida']:
            parametros = {nome: registro[nome] for nome in CHAVES_GRADE.values()}
            return replace(estagios_base[estagio], **parametros)
    raise ErroEntradaDegenerada("Nenhuma configuração válida na grade", 'grade_invalida')
