"""
Módulo de preprocessamento: segmentação de corpo e pulmão e remoção do ambiente
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from volume import HU_AR, ErroConfiguracao, ErroEntradaDegenerada, Mascara, verificar_geometria

logger = logging.getLogger(__name__)

# Constantes
LIMIAR_CORPO = -500.0  # HU acima do qual o voxel é tecido
JANELA_PULMAO = (-950.0, -400.0)  # Intervalo inclusivo de parênquima
RAIO_FECHAMENTO_CORPO = 2
RAIO_FECHAMENTO_PULMAO = 1
RAZAO_SEGUNDO_PULMAO = 0.1

# Vizinhança 6-conexa
CONECTIVIDADE_6 = ndimage.generate_binary_structure(3, 1)
# Cruz 4-conexa no plano axial, sem vizinhos em z
CRUZ_AXIAL = ndimage.generate_binary_structure(2, 1)[:, :, np.newaxis]


@dataclass(frozen=True)
class ConfigPreprocessamento:
    limiar_corpo: float = LIMIAR_CORPO
    pulmao_min: float = JANELA_PULMAO[0]
    pulmao_max: float = JANELA_PULMAO[1]
    raio_fechamento_corpo: int = RAIO_FECHAMENTO_CORPO
    raio_fechamento_pulmao: int = RAIO_FECHAMENTO_PULMAO
    razao_segundo_pulmao: float = RAZAO_SEGUNDO_PULMAO

    def __post_init__(self):
        if not self.pulmao_min < self.pulmao_max:
            raise ErroConfiguracao(f"Janela de pulmão inválida: ({self.pulmao_min}, {self.pulmao_max})")
        if self.raio_fechamento_corpo < 0 or self.raio_fechamento_pulmao < 0:
            raise ErroConfiguracao("Raios de fechamento devem ser >= 0")
        if not 0 <= self.razao_segundo_pulmao <= 1:
            raise ErroConfiguracao(f"razao_segundo_pulmao fora de [0, 1]: {self.razao_segundo_pulmao}")


@dataclass(frozen=True, eq=False)
class ParSegmentacao:
    """Máscaras de corpo e pulmão na geometria do volume de origem (pulmão ⊆ corpo)."""

    corpo: Mascara
    pulmao: Mascara

    def __post_init__(self):
        verificar_geometria(self.corpo, self.pulmao, "par de segmentação")
        if np.any(self.pulmao.bits & ~self.corpo.bits):
            raise ErroConfiguracao("Máscara de pulmão deve estar contida na máscara de corpo")


def _bola(raio):
    eixo = np.arange(-raio, raio + 1)
    x, y, z = np.meshgrid(eixo, eixo, eixo, indexing='ij')
    return x ** 2 + y ** 2 + z ** 2 <= raio ** 2


def _fechamento(bits, raio):
    """Fechamento com bola; a borda é acolchoada para não erodir o que toca a grade."""
    if raio <= 0:
        return bits
    acolchoado = np.pad(bits, raio, mode='constant', constant_values=False)
    fechado = ndimage.binary_closing(acolchoado, structure=_bola(raio))
    return fechado[raio:-raio, raio:-raio, raio:-raio]


def _maior_componente(bits):
    rotulos, n = ndimage.label(bits, structure=CONECTIVIDADE_6)
    if n <= 1:
        return rotulos > 0
    tamanhos = np.bincount(rotulos.ravel())
    tamanhos[0] = 0
    return rotulos == int(np.argmax(tamanhos))


def _preencher_fatias(bits):
    preenchido = np.empty_like(bits)
    for k in range(bits.shape[2]):
        preenchido[:, :, k] = ndimage.binary_fill_holes(bits[:, :, k])
    return preenchido


def segmentar_corpo(vol, cfg=None):
    """
    Segmenta o corpo por limiar e morfologia.

    Args:
        vol: Volume em HU
        cfg: ConfigPreprocessamento (padrões se None)

    Returns:
        Mascara com um único componente conexo

    Raises:
        ErroEntradaDegenerada: nenhum voxel acima do limiar
    """
    cfg = cfg or ConfigPreprocessamento()
    candidatos = vol.valido & (vol.dados > cfg.limiar_corpo)
    if not candidatos.any():
        raise ErroEntradaDegenerada(f"Nenhum voxel acima de {cfg.limiar_corpo} HU", 'corpo_vazio')

    corpo = _maior_componente(candidatos)
    corpo = _fechamento(corpo, cfg.raio_fechamento_corpo)
    corpo = _preencher_fatias(corpo)
    # o fechamento pode reconectar fragmentos; fica só o maior
    corpo = _maior_componente(corpo)

    logger.info(f"Corpo segmentado: {int(corpo.sum())} voxels")
    return Mascara(vol.geometria, corpo)


def _remover_tocantes_borda(candidatos, corpo):
    """Remove componentes que tocam a borda do corpo no plano axial."""
    borda = corpo & ~ndimage.binary_erosion(corpo, structure=CRUZ_AXIAL, border_value=0)
    rotulos, n = ndimage.label(candidatos, structure=CONECTIVIDADE_6)
    if n == 0:
        return rotulos, np.zeros(1, dtype=np.int64)

    tocantes = np.unique(rotulos[borda & candidatos])
    tamanhos = np.bincount(rotulos.ravel(), minlength=n + 1)
    tamanhos[0] = 0
    tamanhos[tocantes] = 0
    return rotulos, tamanhos


def segmentar_pulmao(vol, corpo, cfg=None):
    """Segmenta os pulmões dentro do corpo (dois maiores componentes interiores)."""
    cfg = cfg or ConfigPreprocessamento()
    verificar_geometria(vol, corpo, "segmentação de pulmão")

    candidatos = (
        vol.valido & corpo.bits
        & (vol.dados >= cfg.pulmao_min) & (vol.dados <= cfg.pulmao_max)
    )
    rotulos, tamanhos = _remover_tocantes_borda(candidatos, corpo.bits)
    if not tamanhos.any():
        raise ErroEntradaDegenerada("Nenhuma região de pulmão interior ao corpo", 'pulmao_vazio')

    # ordem estável: maior tamanho primeiro, menor rótulo no empate
    ordem = np.lexsort((np.arange(len(tamanhos)), -tamanhos))
    mantidos = [ordem[0]]
    segundo = ordem[1] if len(ordem) > 1 else 0
    if tamanhos[segundo] > 0 and tamanhos[segundo] >= cfg.razao_segundo_pulmao * tamanhos[ordem[0]]:
        mantidos.append(segundo)

    pulmao = np.isin(rotulos, mantidos)
    pulmao = _fechamento(pulmao, cfg.raio_fechamento_pulmao) & corpo.bits

    logger.info(f"Pulmão segmentado: {len(mantidos)} componente(s), {int(pulmao.sum())} voxels")
    return Mascara(vol.geometria, pulmao)


def remover_ambiente(vol, corpo):
    """
    Fora do corpo os voxels medidos viram ar deliberado (-1000 HU, válidos).

    Voxels fora do FOV continuam inválidos: ausência de dado não é ambiente.
    """
    verificar_geometria(vol, corpo, "remoção de ambiente")
    dados = np.where(corpo.bits, vol.dados, HU_AR)
    return vol.com_dados(dados, vol.valido)


def preprocessar(vol, cfg=None):
    """
    Módulo de preprocessamento completo.

    Returns:
        Tuple (volume sem ambiente, ParSegmentacao)
    """
    cfg = cfg or ConfigPreprocessamento()
    corpo = segmentar_corpo(vol, cfg)
    pulmao = segmentar_pulmao(vol, corpo, cfg)
    return remover_ambiente(vol, corpo), ParSegmentacao(corpo, pulmao)
