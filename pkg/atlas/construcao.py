#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
Construção de atlas de coorte com dados faltantes.

Cada exame registrado contribui com o mapa residual de HU e o mapa de
log-Jacobiano apenas dentro da sua região efetiva (FOV deformado ∩ ROI
padrão). Média e variância por voxel usam só os exames que cobrem o voxel.

As somas são inteiros exatos (int do Python) em unidades de 2^-expoente:
todo float64 finito é um múltiplo inteiro de uma potência de dois, então
nenhuma contribuição é arredondada e a combinação de acumuladores parciais
é bit a bit independente da ordem.
"""

import logging
import os
from dataclasses import asdict, dataclass, field

import joblib
import numpy as np
from joblib import Parallel, delayed

from volume import (
    CampoDeslocamento,
    ErroAtlas,
    ErroEntradaDegenerada,
    TransformacaoAfim,
    Volume,
    ler_campo,
    ler_nifti,
    salvar_campo,
    verificar_geometria,
)
from registro.campos import deformar_mascara, log_jacobiano
from registro.pipeline import preparar_exame, registrar_exame, resultado_de_campo
from data import database
from data.configuracao import configuracao_padrao
from data.manifesto import selecionar

from .qualidade import RelatorioQA, avaliar_registro, regiao_com_dados

logger = logging.getLogger(__name__)

# Constantes
BITS_MANTISSA = 53
SUBDIRETORIO_EXAMES = 'exames'


def _como_int_python(array):
    """Array 1-D object com int do Python (sem escalares numpy que transbordam)."""
    return np.array(array.tolist(), dtype=object).reshape(array.shape)


def inteiros_exatos(valores):
    """
    Decompõe float64 finitos em (inteiros, expoente) com
    valores == inteiros / 2**expoente sem arredondamento.

    Returns:
        Tuple (array object de int do Python, expoente >= 0)
    """
    mantissa, expoente_binario = np.frexp(np.asarray(valores, dtype=np.float64))
    # |mantissa| < 1: mantissa * 2^53 é inteiro e cabe em int64
    inteiros = (mantissa * 2.0 ** BITS_MANTISSA).astype(np.int64)
    escala = np.where(inteiros != 0, BITS_MANTISSA - expoente_binario.astype(np.int64), 0)
    expoente = max(0, int(escala.max())) if escala.size else 0

    resultado = _como_int_python(inteiros)
    deslocamentos = expoente - escala
    for deslocamento in np.unique(deslocamentos):
        if deslocamento:
            resultado[deslocamentos == deslocamento] *= 1 << int(deslocamento)
    return resultado, expoente


@dataclass(eq=False)
class AcumuladorAtlas:
    """Somas exatas por voxel (em unidades de 2^-expoente) e contagem |N_p|."""

    geometria: object
    soma: np.ndarray
    soma_quadrados: np.ndarray
    contagem: np.ndarray
    expoente: int = 0

    @classmethod
    def vazio(cls, geometria):
        forma = geometria.dims
        return cls(geometria, np.zeros(forma, dtype=object), np.zeros(forma, dtype=object),
                   np.zeros(forma, np.int64))

    def _somas_em(self, expoente):
        """(soma, soma_quadrados) reescritas em unidades de 2^-expoente, expoente >= o atual."""
        passo = expoente - self.expoente
        if passo == 0:
            return self.soma, self.soma_quadrados
        return self.soma * (1 << passo), self.soma_quadrados * (1 << 2 * passo)

    def acumular(self, mapa, regiao):
        """
        Soma `mapa` nos voxels da região (e válidos e finitos no mapa); fora dela nada muda.

        Returns:
            o próprio acumulador
        """
        verificar_geometria(self.geometria, mapa, "acumulação")
        verificar_geometria(self.geometria, regiao, "acumulação")
        selecao = regiao.bits & mapa.valido & np.isfinite(mapa.dados)
        inteiros, expoente = inteiros_exatos(mapa.dados[selecao])

        if expoente > self.expoente:
            self.soma, self.soma_quadrados = self._somas_em(expoente)
            self.expoente = expoente
        elif expoente < self.expoente:
            inteiros = inteiros * (1 << (self.expoente - expoente))

        self.soma[selecao] += inteiros
        self.soma_quadrados[selecao] += inteiros * inteiros
        self.contagem[selecao] += 1
        return self

    def mesclar(self, outro):
        """Soma componente a componente de dois acumuladores parciais."""
        verificar_geometria(self.geometria, outro.geometria, "combinação de acumuladores")
        expoente = max(self.expoente, outro.expoente)
        soma_a, quadrados_a = self._somas_em(expoente)
        soma_b, quadrados_b = outro._somas_em(expoente)
        return AcumuladorAtlas(
            self.geometria,
            soma_a + soma_b,
            quadrados_a + quadrados_b,
            self.contagem + outro.contagem,
            expoente,
        )

    def finalizar(self):
        """
        Média, variância amostral e contagem.

        Média inválida onde contagem = 0; variância inválida onde contagem < 2.
        As razões de inteiros são arredondadas uma única vez para float64.

        Returns:
            Tuple (media, variancia, contagem) de Volumes
        """
        n = self.contagem
        tem_media = n >= 1
        tem_variancia = n >= 2
        unidade = 1 << self.expoente

        media = np.zeros(self.geometria.dims)
        if np.any(tem_media):
            nm = _como_int_python(n[tem_media])
            media[tem_media] = (self.soma[tem_media] / (nm * unidade)).astype(np.float64)

        variancia = np.zeros(self.geometria.dims)
        if np.any(tem_variancia):
            nv = _como_int_python(n[tem_variancia])
            sv = self.soma[tem_variancia]
            qv = self.soma_quadrados[tem_variancia]
            # n·S2 - S² >= 0 exatamente
            numerador = nv * qv - sv * sv
            variancia[tem_variancia] = (numerador / (nv * (nv - 1) * unidade * unidade)).astype(np.float64)

        return (
            Volume(self.geometria, media, tem_media),
            Volume(self.geometria, variancia, tem_variancia),
            Volume(self.geometria, n.astype(np.float64)),
        )


def roi_padrao(referencia):
    """Região válida da referência ∩ corpo da referência."""
    return referencia.volume.mascara_valida().intersecao(referencia.segmentacao.corpo)


def regiao_efetiva(valido_movel, campo, roi):
    """FOV do exame deformado (vizinho mais próximo) ∩ ROI padrão."""
    verificar_geometria(campo, roi, "região efetiva")
    return deformar_mascara(valido_movel, campo).intersecao(roi)


def diferenca_atlas(a, b):
    """a - b onde ambos são válidos."""
    verificar_geometria(a, b, "diferença de atlas")
    valido = a.valido & b.valido
    return Volume(a.geometria, np.where(valido, a.dados - b.dados, 0.0), valido)


@dataclass(eq=False)
class PacoteAtlas:
    """Os seis mapas do atlas e os metadados da coorte."""

    media_hu: Volume
    variancia_hu: Volume
    contagem_hu: Volume
    media_logjac: Volume
    variancia_logjac: Volume
    contagem_logjac: Volume
    metadados: dict = field(default_factory=dict)
    relatorios: list = field(default_factory=list)


def hash_configuracao(estagios, config, referencia):
    """Hash estável de tudo que determina o registro de um exame."""
    return joblib.hash({
        'estagios': [e.como_dict() for e in estagios],
        'preprocessamento': asdict(config['preprocessamento']),
        'afim': asdict(config['afim']),
        'referencia': (referencia.volume.dados, referencia.volume.valido, referencia.volume.geometria.como_dict()),
    })


def _contribuicoes(resultado, exame, roi, config):
    """Acumuladores parciais (HU, logJac) de um exame aprovado."""
    geometria = roi.geometria
    regiao = regiao_efetiva(exame.volume.mascara_valida(), resultado.campo_total, roi)
    mapa_logjac, _ = log_jacobiano(resultado.campo_total)

    acumulador_hu = AcumuladorAtlas.vazio(geometria)
    acumulador_hu.acumular(resultado.deformado, regiao)
    acumulador_logjac = AcumuladorAtlas.vazio(geometria)
    acumulador_logjac.acumular(mapa_logjac, regiao)
    return acumulador_hu, acumulador_logjac


def processar_exame(id_exame, caminho, referencia, estagios, config, diretorio_exames, hash_config, em_cache=None):
    """
    Registro (ou reuso do campo em cache), QA e contribuições de um exame.

    Executa nos trabalhadores; só grava o arquivo do próprio exame.

    Returns:
        dict com 'scan_id', 'erro', e em caso de sucesso 'qa', 'transformacao',
        'caminho_campo', 'avisos', 'novo' e 'acumuladores' (None se o QA falhou)
    """
    try:
        exame = preparar_exame(id_exame, ler_nifti(caminho), config['preprocessamento'])

        if em_cache is not None:
            exame.transformacao = TransformacaoAfim(np.asarray(em_cache['transformacao']))
            campo = ler_campo(em_cache['caminho_campo'])
            verificar_geometria(campo, referencia.volume, f"campo em cache de {id_exame}")
            resultado = resultado_de_campo(exame, campo, avisos=em_cache['avisos'])
            caminho_campo = em_cache['caminho_campo']
            logger.info(f"{id_exame}: registro reaproveitado do cache")
        else:
            resultado = registrar_exame(exame, referencia, estagios, config['afim'])
            caminho_campo = os.path.join(diretorio_exames, f"{id_exame}_{hash_config[:12]}_campo.nii.gz")
            salvar_campo(resultado.campo_total, caminho_campo)
            # mesma precisão do campo gravado, para que o cache reproduza o resultado
            campo = CampoDeslocamento(resultado.campo_total.geometria,
                                      resultado.campo_total.vetores.astype(np.float32))
            resultado = resultado_de_campo(exame, campo, avisos=resultado.avisos)

        roi = roi_padrao(referencia)
        relatorio = avaliar_registro(
            id_exame,
            resultado.pulmao,
            resultado.corpo,
            referencia.segmentacao.pulmao,
            referencia.segmentacao.corpo,
            resultado.campo_total,
            roi,
            config['qa']['limiar_pulmao'],
            config['qa']['limiar_corpo'],
            regiao_com_dados(exame.volume.mascara_valida(), resultado.campo_total,
                             referencia.volume.mascara_valida()),
        )
        acumuladores = _contribuicoes(resultado, exame, roi, config) if relatorio.success else None

        return {
            'scan_id': id_exame,
            'erro': False,
            'novo': em_cache is None,
            'qa': relatorio.como_dict(),
            'transformacao': resultado.transformacao.matriz.tolist(),
            'caminho_campo': caminho_campo,
            'avisos': resultado.avisos,
            'acumuladores': acumuladores,
        }

    except ErroAtlas as e:
        logger.warning(f"{id_exame}: exame ignorado ({e.tipo_erro}): {e.mensagem}")
        return {'scan_id': id_exame, **e.como_dict()}
    except Exception as e:
        logger.error(f"{id_exame}: erro inesperado: {e}", exc_info=True)
        return {'scan_id': id_exame, 'erro': True, 'mensagem': str(e), 'tipo_erro': 'inesperado'}


def construir_atlas_coorte(manifesto, referencia, filtro, estagios, diretorio_saida, config=None, trabalhadores=1):
    """
    Registra os exames selecionados pelo filtro e acumula os atlas de HU e log-Jacobiano.

    Exames com erro de leitura/registro ou reprovados no QA ficam de fora e são
    listados em `metadados['falhas']`.

    Args:
        manifesto: DataFrame do manifesto
        referencia: ExamePreparado da referência
        filtro: expressão da mini-linguagem de filtros (vazia = todos)
        estagios: lista de ConfigEstagio
        diretorio_saida: diretório do cache por exame
        config: dicionário de `carregar_configuracao`
        trabalhadores: largura do pool de processos

    Returns:
        PacoteAtlas

    Raises:
        ErroSelecaoVazia: nenhum exame satisfaz o filtro
        ErroEntradaDegenerada: nenhum exame aprovado
    """
    config = config or configuracao_padrao()
    selecao = selecionar(manifesto, filtro)
    hash_config = hash_configuracao(estagios, config, referencia)

    diretorio_exames = os.path.join(diretorio_saida, SUBDIRETORIO_EXAMES)
    os.makedirs(diretorio_exames, exist_ok=True)
    banco = os.path.join(diretorio_saida, config['execucao']['banco_cache'])
    database.inicializar_banco_dados(banco)

    tarefas = [
        (linha.scan_id, linha.path, database.obter_registro(banco, linha.scan_id, hash_config))
        for linha in selecao.itertuples(index=False)
    ]
    logger.info(f"Atlas: {len(tarefas)} exames, {sum(t[2] is not None for t in tarefas)} em cache, "
                f"{trabalhadores} trabalhador(es)")

    geometria = referencia.volume.geometria
    acumulador_hu = AcumuladorAtlas.vazio(geometria)
    acumulador_logjac = AcumuladorAtlas.vazio(geometria)
    relatorios = []
    falhas = []
    incluidos = []

    resultados = Parallel(n_jobs=trabalhadores, return_as='generator')(
        delayed(processar_exame)(
            id_exame, caminho, referencia, estagios, config, diretorio_exames, hash_config, em_cache
        )
        for id_exame, caminho, em_cache in tarefas
    )
    for registro in resultados:
        if registro['erro']:
            falhas.append({'scan_id': registro['scan_id'], 'motivo': registro['tipo_erro'],
                           'mensagem': registro['mensagem']})
            continue

        if registro['novo']:
            database.salvar_registro(banco, registro['scan_id'], hash_config, registro['caminho_campo'],
                                     registro['transformacao'], registro['qa'], registro['avisos'])
        relatorios.append(RelatorioQA(**registro['qa']))

        if registro['acumuladores'] is None:
            falhas.append({'scan_id': registro['scan_id'], 'motivo': 'qa',
                           'mensagem': 'DSC abaixo dos limiares de QA'})
            continue
        parcial_hu, parcial_logjac = registro['acumuladores']
        acumulador_hu = acumulador_hu.mesclar(parcial_hu)
        acumulador_logjac = acumulador_logjac.mesclar(parcial_logjac)
        incluidos.append(registro['scan_id'])

    if not incluidos:
        raise ErroEntradaDegenerada(f"Nenhum exame aprovado entre {len(tarefas)} selecionados", 'coorte_vazia')

    media_hu, variancia_hu, contagem_hu = acumulador_hu.finalizar()
    media_logjac, variancia_logjac, contagem_logjac = acumulador_logjac.finalizar()
    logger.info(f"Atlas concluído: {len(incluidos)} incluídos, {len(falhas)} falhas, "
                f"cobertura máxima {int(contagem_hu.dados.max())}")

    return PacoteAtlas(
        media_hu, variancia_hu, contagem_hu,
        media_logjac, variancia_logjac, contagem_logjac,
        metadados={
            'cohort_size': len(incluidos),
            'scans': incluidos,
            'filter': filtro or '',
            'failures': falhas,
            'config_hash': hash_config,
        },
        relatorios=relatorios,
    )
