"""
Álgebra de campos de deslocamento: deformação, composição e log-Jacobiano

Todos os campos seguem a convenção pull-back: o voxel x da grade do campo
amostra a entrada em mundo(x) + u(x).
"""

import logging

import numpy as np
from scipy import ndimage

from volume import CampoDeslocamento, Mascara, Volume, amostrar_mascara, amostrar_pontos, verificar_geometria
from volume.nucleo import indices_continuos

logger = logging.getLogger(__name__)

EPSILON_JACOBIANO = 1e-6


def amostrar_campo(campo, pontos):
    """
    Interpola o campo trilinearmente em pontos de mundo (..., 3).

    Fora da grade vale o vetor da borda mais próxima.
    """
    pontos = np.asarray(pontos, dtype=np.float64)
    forma = pontos.shape
    coords = indices_continuos(campo.geometria, pontos.reshape(-1, 3))
    componentes = [
        ndimage.map_coordinates(campo.vetores[..., c], coords, order=1, mode='nearest')
        for c in range(3)
    ]
    return np.stack(componentes, axis=-1).reshape(forma)


def deformar(vol, campo, geometria=None):
    """
    Deforma `vol` pelo campo; a saída fica na grade do campo.

    Raises:
        ErroGeometria: `geometria` pedida difere da grade do campo
    """
    if geometria is not None:
        verificar_geometria(geometria, campo, "deformação")
    valores, validos = amostrar_pontos(vol, campo.posicoes())
    return Volume(campo.geometria, valores, validos)


def deformar_mascara(mascara, campo, valido=None):
    """Vizinho mais próximo; `valido` restringe aos voxels de origem válidos."""
    return Mascara(campo.geometria, amostrar_mascara(mascara, campo.posicoes(), valido))


def compor(externo, interno):
    """u(x) = u_externo(x) + u_interno(x + u_externo(x)), na grade do externo."""
    destino = externo.posicoes()
    vetores = externo.vetores + amostrar_campo(interno, destino)
    return CampoDeslocamento(externo.geometria, vetores)


def afim_para_campo(transformacao, geometria):
    grade = geometria.grade_mundo()
    return CampoDeslocamento(geometria, transformacao.aplicar(grade) - grade)


def compor_com_afim(campo, transformacao):
    """
    Composição exata de um campo não rígido (interno ao espaço afim) com a afim.

    u(x) = A(x + u_nr(x)) - x; a parte afim é linear e não precisa ser amostrada.
    """
    grade = campo.geometria.grade_mundo()
    return CampoDeslocamento(campo.geometria, transformacao.aplicar(grade + campo.vetores) - grade)


def reamostrar_campo(campo, geometria):
    """Leva o campo para outra grade por interpolação trilinear."""
    if campo.geometria.compativel(geometria):
        return campo
    return CampoDeslocamento(geometria, amostrar_campo(campo, geometria.grade_mundo()))


def matriz_jacobiana(campo):
    """∂φ_c/∂x_a de φ(x) = x + u(x), diferenças centrais em mm (unilaterais na borda)."""
    geometria = campo.geometria
    jacobiana = np.zeros(geometria.dims + (3, 3))
    for eixo, (n, h) in enumerate(zip(geometria.dims, geometria.espacamento)):
        jacobiana[..., eixo, eixo] = 1.0
        if n < 2:
            continue
        for componente in range(3):
            jacobiana[..., componente, eixo] += np.gradient(
                campo.vetores[..., componente], h, axis=eixo, edge_order=1
            )
    return jacobiana


def log_jacobiano(campo, regiao=None):
    """
    Mapa ln det(∇φ).

    Determinantes não positivos (dobras) recebem ln(1e-6) e são contados.

    Args:
        campo: CampoDeslocamento
        regiao: Mascara opcional; a fração de dobras é medida nela

    Returns:
        Tuple (Volume, relatorio) com relatorio = {'voxels_dobrados', 'fracao_dobrada'}
    """
    determinante = np.linalg.det(matriz_jacobiana(campo))
    dobrado = determinante <= 0
    mapa = np.log(np.where(dobrado, EPSILON_JACOBIANO, determinante))

    if regiao is not None:
        verificar_geometria(regiao, campo, "log-Jacobiano")
        dobrado = dobrado & regiao.bits
        total = regiao.contagem()
    else:
        total = campo.geometria.n_voxels

    voxels_dobrados = int(np.count_nonzero(dobrado))
    relatorio = {
        'voxels_dobrados': voxels_dobrados,
        'fracao_dobrada': voxels_dobrados / total if total else 0.0,
    }
    if voxels_dobrados:
        logger.warning(f"Campo com {voxels_dobrados} voxels dobrados ({relatorio['fracao_dobrada']:.4%})")
    return Volume(campo.geometria, mapa), relatorio
