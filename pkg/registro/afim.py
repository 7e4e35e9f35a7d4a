"""
Registro afim por casamento de blocos com ajuste por mínimos quadrados aparados
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import signal

from volume import (
    ErroConfiguracao,
    ErroEntradaDegenerada,
    ErroSubdeterminado,
    Geometria,
    Mascara,
    TransformacaoAfim,
    Volume,
    amostrar_mascara,
    amostrar_pontos,
    reamostrar_espacamento,
)

logger = logging.getLogger(__name__)

# Constantes
JANELA_AFIM = (0.0, 1000.0)
ESPACAMENTO_NIVEL_FINO = 2.0  # mm; cada nível mais grosso dobra
LIMIAR_REGIAO = -500.0
MIN_CORRESPONDENCIAS = 12
MIN_PONTOS_AJUSTE = 4
PASSOS_LTS = 20


@dataclass(frozen=True)
class ConfigAfim:
    janela: tuple = JANELA_AFIM
    niveis_piramide: int = 2
    tamanho_bloco: int = 4
    fracao_blocos: float = 0.25
    raio_busca_blocos: int = 3
    fracao_corte: float = 0.5
    iteracoes_por_nivel: int = 5

    def __post_init__(self):
        baixo, alto = (float(v) for v in self.janela)
        object.__setattr__(self, 'janela', (baixo, alto))
        if not baixo < alto:
            raise ErroConfiguracao(f"Janela afim inválida: {self.janela}")
        if not 0 < self.fracao_corte < 1:
            raise ErroConfiguracao(f"fracao_corte deve estar em (0, 1): {self.fracao_corte}")
        if not 0 < self.fracao_blocos <= 1:
            raise ErroConfiguracao(f"fracao_blocos deve estar em (0, 1]: {self.fracao_blocos}")
        if self.niveis_piramide < 1 or self.tamanho_bloco < 2 or self.iteracoes_por_nivel < 1:
            raise ErroConfiguracao("niveis_piramide, tamanho_bloco e iteracoes_por_nivel fora do intervalo")
        if self.raio_busca_blocos < 0:
            raise ErroConfiguracao(f"raio_busca_blocos deve ser >= 0: {self.raio_busca_blocos}")

    @property
    def raio_busca(self):
        """Raio de busca em voxels do nível."""
        return self.raio_busca_blocos * self.tamanho_bloco

    def espacamentos_piramide(self):
        """Espaçamentos (mm) do nível mais grosso ao mais fino: 4 e 2 mm por padrão."""
        return [ESPACAMENTO_NIVEL_FINO * 2 ** (self.niveis_piramide - 1 - n) for n in range(self.niveis_piramide)]


def recortar_janela(vol, janela):
    """Limita as intensidades a [baixo, alto]; a validade não muda."""
    baixo, alto = janela
    return vol.com_dados(np.clip(vol.dados, baixo, alto))


def aplicar_afim(vol, transformacao, geometria):
    """Reamostra `vol` na grade `geometria` amostrando em T(x) (trilinear)."""
    geometria = geometria_de(geometria)
    valores, validos = amostrar_pontos(vol, transformacao.aplicar(geometria.grade_mundo()))
    return Volume(geometria, valores, validos)


def aplicar_afim_mascara(mascara, transformacao, geometria, valido=None):
    """Variante de vizinho mais próximo para máscaras."""
    geometria = geometria_de(geometria)
    bits = amostrar_mascara(mascara, transformacao.aplicar(geometria.grade_mundo()), valido)
    return Mascara(geometria, bits)


def _regiao(vol, corpo=None):
    """Região de referência: válida e dentro do corpo (ou acima de -500 HU)."""
    regiao = vol.valido & (vol.dados > LIMIAR_REGIAO)
    if corpo is not None:
        regiao = vol.valido & amostrar_mascara(corpo, vol.geometria.grade_mundo())
    return regiao


def _centro_de_massa(vol, regiao):
    if not regiao.any():
        raise ErroEntradaDegenerada("Região vazia ao calcular centro de massa", 'regiao_vazia')
    indices = np.argwhere(regiao).mean(axis=0)
    return vol.geometria.indices_para_mundo(indices)


def _selecionar_blocos(ref_janela, regiao, cfg):
    """Blocos totalmente dentro da região, os `fracao_blocos` de maior variância."""
    b = cfg.tamanho_bloco
    nx, ny, nz = (n // b for n in ref_janela.dims)
    if min(nx, ny, nz) == 0:
        return np.empty((0, 3), dtype=np.int64)

    recorte = (slice(0, nx * b), slice(0, ny * b), slice(0, nz * b))
    forma_blocos = (nx, b, ny, b, nz, b)
    dentro = regiao[recorte].reshape(forma_blocos).all(axis=(1, 3, 5))
    variancia = ref_janela.dados[recorte].reshape(forma_blocos).var(axis=(1, 3, 5))

    candidatos = np.argwhere(dentro & (variancia > 0))
    if len(candidatos) == 0:
        return candidatos
    n_mantidos = max(1, math.ceil(cfg.fracao_blocos * len(candidatos)))
    var_candidatos = variancia[tuple(candidatos.T)]
    ordem = np.argsort(-var_candidatos, kind='stable')[:n_mantidos]
    return candidatos[np.sort(ordem)] * b


def _refinar_parabola(ncc, pico):
    """Ajuste parabólico de 3 pontos em cada eixo em torno do pico."""
    ajuste = np.zeros(3)
    for eixo in range(3):
        if not 0 < pico[eixo] < ncc.shape[eixo] - 1:
            continue
        anterior, posterior = list(pico), list(pico)
        anterior[eixo] -= 1
        posterior[eixo] += 1
        c_menos, c_0, c_mais = ncc[tuple(anterior)], ncc[tuple(pico)], ncc[tuple(posterior)]
        curvatura = c_menos - 2 * c_0 + c_mais
        if curvatura < 0:
            ajuste[eixo] = np.clip(0.5 * (c_menos - c_mais) / curvatura, -0.5, 0.5)
    return ajuste


def _casar_bloco(bloco, janela_busca):
    """
    Correlação cruzada normalizada do bloco em todas as posições da janela.

    Returns:
        Tuple (deslocamento em voxels relativo ao centro, ncc máxima)
    """
    n = bloco.size
    bloco0 = bloco - bloco.mean()
    norma_bloco = np.sqrt(np.sum(bloco0 ** 2))

    numerador = signal.correlate(janela_busca, bloco0, mode='valid')
    caixa = np.ones_like(bloco)
    soma = signal.correlate(janela_busca, caixa, mode='valid')
    soma_quadrados = signal.correlate(janela_busca ** 2, caixa, mode='valid')
    variancia = np.maximum(soma_quadrados - soma ** 2 / n, 0.0)

    denominador = norma_bloco * np.sqrt(variancia)
    ncc = np.divide(numerador, denominador, out=np.zeros_like(numerador), where=denominador > 1e-9 * n)

    pico = np.unravel_index(int(np.argmax(ncc)), ncc.shape)
    raio = (np.asarray(ncc.shape) - 1) // 2
    deslocamento = np.asarray(pico, dtype=np.float64) - raio + _refinar_parabola(ncc, pico)
    return deslocamento, float(ncc[pico])


def _correspondencias(ref_janela, mov_janela, transformacao, blocos, cfg):
    """Pares (x na referência, T(x + t) no móvel) dos blocos com NCC positiva."""
    geometria = ref_janela.geometria
    b, raio = cfg.tamanho_bloco, cfg.raio_busca
    baixo = cfg.janela[0]

    deformado = aplicar_afim(mov_janela, transformacao, geometria).imputado(baixo)
    acolchoado = np.pad(deformado, raio, mode='constant', constant_values=baixo)
    espacamento = np.asarray(geometria.espacamento)

    origens, destinos = [], []
    for inicio in blocos:
        i, j, k = inicio
        bloco = ref_janela.dados[i:i + b, j:j + b, k:k + b]
        janela_busca = acolchoado[i:i + b + 2 * raio, j:j + b + 2 * raio, k:k + b + 2 * raio]
        deslocamento, ncc = _casar_bloco(bloco, janela_busca)
        if ncc <= 0:
            continue
        centro = geometria.indices_para_mundo(inicio + (b - 1) / 2.0)
        origens.append(centro)
        destinos.append(transformacao.aplicar(centro + deslocamento * espacamento))

    return np.asarray(origens).reshape(-1, 3), np.asarray(destinos).reshape(-1, 3)


def _ajustar_afim(origens, destinos):
    homogeneas = np.hstack([origens, np.ones((len(origens), 1))])
    solucao, _, posto, _ = np.linalg.lstsq(homogeneas, destinos, rcond=None)
    if posto < 4:
        raise ErroSubdeterminado(f"Correspondências coplanares (posto {posto}) não determinam a afim")
    matriz = np.eye(4)
    matriz[:3, :] = solucao.T
    return matriz


def ajustar_lts(origens, destinos, fracao_corte):
    """
    Ajuste afim por mínimos quadrados aparados (passos de concentração).

    Mantém os ceil(fracao_corte * n) pares de menor resíduo, nunca menos que 4.
    """
    n = len(origens)
    h = min(n, max(MIN_PONTOS_AJUSTE, math.ceil(fracao_corte * n)))
    selecionados = np.arange(n)
    matriz = _ajustar_afim(origens, destinos)

    for _ in range(PASSOS_LTS):
        previsto = origens @ matriz[:3, :3].T + matriz[:3, 3]
        residuos = np.linalg.norm(previsto - destinos, axis=1)
        novos = np.sort(np.argsort(residuos, kind='stable')[:h])
        if np.array_equal(novos, selecionados):
            break
        selecionados = novos
        matriz = _ajustar_afim(origens[selecionados], destinos[selecionados])

    return matriz


def registrar_afim(movel, referencia, cfg=None, corpo_referencia=None):
    """
    Registra `movel` em `referencia` (ambos já sem ambiente).

    Args:
        movel: Volume móvel
        referencia: Volume de referência
        cfg: ConfigAfim (padrões se None)
        corpo_referencia: Mascara de corpo da referência; sem ela a região
            é aproximada por HU > -500

    Returns:
        TransformacaoAfim referência -> móvel

    Raises:
        ErroSubdeterminado: menos de 12 correspondências em algum passo
    """
    cfg = cfg or ConfigAfim()

    centro_ref = _centro_de_massa(referencia, _regiao(referencia))
    centro_mov = _centro_de_massa(movel, _regiao(movel))
    transformacao = TransformacaoAfim.translacao(centro_mov - centro_ref)
    logger.info(f"Inicialização por centro de massa: {np.round(centro_mov - centro_ref, 2)} mm")

    for espacamento in cfg.espacamentos_piramide():
        esp = (espacamento,) * 3
        ref_nivel = reamostrar_espacamento(referencia, esp)
        ref_janela = recortar_janela(ref_nivel, cfg.janela)
        mov_janela = recortar_janela(reamostrar_espacamento(movel, esp), cfg.janela)
        blocos = _selecionar_blocos(ref_janela, _regiao(ref_nivel, corpo_referencia), cfg)
        logger.info(f"Nível {espacamento} mm: {len(blocos)} blocos selecionados")

        for iteracao in range(cfg.iteracoes_por_nivel):
            origens, destinos = _correspondencias(ref_janela, mov_janela, transformacao, blocos, cfg)
            if len(origens) < MIN_CORRESPONDENCIAS:
                raise ErroSubdeterminado(
                    f"Apenas {len(origens)} correspondências de bloco no nível {espacamento} mm "
                    f"(mínimo {MIN_CORRESPONDENCIAS})"
                )
            transformacao = TransformacaoAfim(ajustar_lts(origens, destinos, cfg.fracao_corte))
            logger.debug(f"Nível {espacamento} mm, iteração {iteracao + 1}: {len(origens)} correspondências")

    logger.info(f"Registro afim concluído: translação {np.round(transformacao.translacao_mm, 2)} mm")
    return transformacao


def geometria_de(vol):
    """Conveniência para chamadas com a tripla (dims, espaçamento, origem)."""
    if isinstance(vol, Geometria):
        return vol
    if isinstance(vol, tuple):
        return Geometria(*vol)
    return vol.geometria
