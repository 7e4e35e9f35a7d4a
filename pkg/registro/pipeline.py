"""
Registro completo de um exame na referência: afim seguido do pipeline não rígido
"""

import logging
from dataclasses import dataclass, field

from .afim import ConfigAfim, aplicar_afim, registrar_afim
from .campos import compor_com_afim, deformar, deformar_mascara, log_jacobiano
from .corrfield import executar_pipeline
from .preprocessamento import ConfigPreprocessamento, preprocessar

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class ExamePreparado:
    """Exame preprocessado (e, opcionalmente, já alinhado pela afim)."""

    id_exame: str
    volume: object
    segmentacao: object
    transformacao: object = None


@dataclass(eq=False)
class ResultadoRegistro:
    id_exame: str
    transformacao: object
    campo_total: object
    deformado: object
    pulmao: object
    corpo: object
    avisos: list = field(default_factory=list)

    def log_jacobiano(self, regiao=None):
        return log_jacobiano(self.campo_total, regiao)


def preparar_exame(id_exame, vol, cfg_pre=None):
    vol_pre, segmentacao = preprocessar(vol, cfg_pre or ConfigPreprocessamento())
    return ExamePreparado(id_exame, vol_pre, segmentacao)


def alinhar_afim(exame, referencia, cfg_afim=None):
    """Registra a afim do exame uma única vez e a guarda no próprio exame."""
    if exame.transformacao is None:
        exame.transformacao = registrar_afim(
            exame.volume, referencia.volume, cfg_afim or ConfigAfim(), referencia.segmentacao.corpo
        )
    return exame


def resultado_de_campo(exame, campo_total, transformacao=None, avisos=None):
    """Deforma volume e máscaras do exame pelo campo total (sem novo registro)."""
    return ResultadoRegistro(
        id_exame=exame.id_exame,
        transformacao=transformacao if transformacao is not None else exame.transformacao,
        campo_total=campo_total,
        deformado=deformar(exame.volume, campo_total),
        pulmao=deformar_mascara(exame.segmentacao.pulmao, campo_total, exame.volume.valido),
        corpo=deformar_mascara(exame.segmentacao.corpo, campo_total, exame.volume.valido),
        avisos=list(avisos or []),
    )


def registrar_exame(exame, referencia, estagios, cfg_afim=None):
    """
    Afim + pipeline de estágios; o campo total amostra o exame nativo.

    Args:
        exame: ExamePreparado móvel
        referencia: ExamePreparado de referência
        estagios: lista de ConfigEstagio (vazia = só afim)
        cfg_afim: ConfigAfim

    Returns:
        ResultadoRegistro
    """
    alinhar_afim(exame, referencia, cfg_afim)
    geometria = referencia.volume.geometria

    movel_afim = aplicar_afim(exame.volume, exame.transformacao, geometria)
    avisos = []
    nao_rigido = executar_pipeline(movel_afim, referencia.volume, estagios, avisos=avisos)
    campo_total = compor_com_afim(nao_rigido, exame.transformacao)

    if avisos:
        logger.warning(f"{exame.id_exame}: {len(avisos)} subestágio(s) com incremento nulo")
    return resultado_de_campo(exame, campo_total, avisos=avisos)
