#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
Tipos geométricos centrais do AtlasTorax e interpolação trilinear.

Os arrays são indexados [i, j, k] com i ao longo de x (eixo mais rápido no
disco). A posição de mundo do voxel v é `origem + v * espacamento`; não há
rotação no modelo interno.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .erros import ErroConfiguracao, ErroGeometria

logger = logging.getLogger(__name__)

# HU do ar, usado na imputação de voxels sem dado
HU_AR = -1000.0

# Índices contínuos a menos disto de um inteiro são tratados como centro de voxel
_TOL_INDICE = 1e-9
_TOL_GEOMETRIA = 1e-6


def _tripla(valores, nome, tipo=float):
    try:
        tripla = tuple(tipo(v) for v in valores)
    except (TypeError, ValueError) as e:
        raise ErroConfiguracao(f"{nome} inválido: {valores!r} ({e})")
    if len(tripla) != 3:
        raise ErroConfiguracao(f"{nome} deve ter 3 componentes, recebido {valores!r}")
    return tripla


@dataclass(frozen=True)
class Geometria:
    """Grade alinhada aos eixos: número de voxels, espaçamento (mm) e origem (mm)."""

    dims: tuple
    espacamento: tuple
    origem: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        dims = _tripla(self.dims, 'dims', int)
        espacamento = _tripla(self.espacamento, 'espacamento')
        origem = _tripla(self.origem, 'origem')

        if min(dims) < 1:
            raise ErroConfiguracao(f"Dimensões devem ser >= 1: {dims}")
        if not all(math.isfinite(e) and e > 0 for e in espacamento):
            raise ErroConfiguracao(f"Espaçamento deve ser positivo: {espacamento}")
        if not all(math.isfinite(o) for o in origem):
            raise ErroConfiguracao(f"Origem deve ser finita: {origem}")

        object.__setattr__(self, 'dims', dims)
        object.__setattr__(self, 'espacamento', espacamento)
        object.__setattr__(self, 'origem', origem)

    @property
    def n_voxels(self):
        return int(np.prod(self.dims))

    @property
    def extensao(self):
        """Extensão coberta pelos voxels (mm), de borda a borda."""
        return tuple(n * e for n, e in zip(self.dims, self.espacamento))

    def indices_para_mundo(self, indices):
        indices = np.asarray(indices, dtype=np.float64)
        return np.asarray(self.origem) + indices * np.asarray(self.espacamento)

    def mundo_para_indices(self, pontos):
        pontos = np.asarray(pontos, dtype=np.float64)
        return (pontos - np.asarray(self.origem)) / np.asarray(self.espacamento)

    def grade_mundo(self):
        """Coordenadas de mundo de todos os voxels, forma (nx, ny, nz, 3)."""
        eixos = [o + np.arange(n) * e for n, e, o in zip(self.dims, self.espacamento, self.origem)]
        return np.stack(np.meshgrid(*eixos, indexing='ij'), axis=-1)

    def compativel(self, outra, tol=_TOL_GEOMETRIA):
        return (
            self.dims == outra.dims
            and np.allclose(self.espacamento, outra.espacamento, rtol=0, atol=tol)
            and np.allclose(self.origem, outra.origem, rtol=0, atol=tol)
        )

    def como_dict(self):
        return {'dims': list(self.dims), 'espacamento': list(self.espacamento), 'origem': list(self.origem)}


def _geometria_de(objeto):
    return objeto if isinstance(objeto, Geometria) else objeto.geometria


def verificar_geometria(a, b, contexto=""):
    """Levanta ErroGeometria se as grades de `a` e `b` diferirem."""
    ga, gb = _geometria_de(a), _geometria_de(b)
    if not ga.compativel(gb):
        raise ErroGeometria(
            f"Geometrias incompatíveis{' em ' + contexto if contexto else ''}: "
            f"{ga.dims}@{ga.espacamento} vs {gb.dims}@{gb.espacamento}"
        )


def _somente_leitura(array):
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Volume:
    """
    Volume escalar (HU, ou sem unidade para mapas derivados) com máscara de validade.

    `valido` é False fora do FOV; o conteúdo desses voxels não tem significado e
    só é imputado com HU_AR no ponto de consumo (ver `imputado`).
    """

    geometria: Geometria
    dados: np.ndarray
    valido: np.ndarray = None

    def __post_init__(self):
        dims = self.geometria.dims
        dados = np.array(self.dados, dtype=np.float64)
        if dados.shape != dims:
            raise ErroGeometria(f"Dados com forma {dados.shape}, esperado {dims}")

        if self.valido is None:
            valido = np.ones(dims, dtype=bool)
        else:
            valido = np.array(self.valido, dtype=bool)
            if valido.shape != dims:
                raise ErroGeometria(f"Máscara de validade com forma {valido.shape}, esperado {dims}")

        finitos = np.isfinite(dados)
        if not finitos.all():
            valido &= finitos
            dados[~finitos] = HU_AR

        object.__setattr__(self, 'dados', _somente_leitura(dados))
        object.__setattr__(self, 'valido', _somente_leitura(valido))

    @property
    def dims(self):
        return self.geometria.dims

    @property
    def espacamento(self):
        return self.geometria.espacamento

    @property
    def origem(self):
        return self.geometria.origem

    def imputado(self, valor=HU_AR):
        """Dados com os voxels inválidos substituídos por `valor`."""
        return np.where(self.valido, self.dados, valor)

    def com_dados(self, dados, valido=None):
        return Volume(self.geometria, dados, self.valido if valido is None else valido)

    def mascara_valida(self):
        return Mascara(self.geometria, self.valido)


@dataclass(frozen=True, eq=False)
class Mascara:
    """Máscara binária sobre uma geometria (corpo, pulmão, região efetiva...)."""

    geometria: Geometria
    bits: np.ndarray

    def __post_init__(self):
        bits = np.array(self.bits, dtype=bool)
        if bits.shape != self.geometria.dims:
            raise ErroGeometria(f"Máscara com forma {bits.shape}, esperado {self.geometria.dims}")
        object.__setattr__(self, 'bits', _somente_leitura(bits))

    @property
    def dims(self):
        return self.geometria.dims

    def contagem(self):
        return int(np.count_nonzero(self.bits))

    def vazia(self):
        return not self.bits.any()

    def intersecao(self, outra):
        verificar_geometria(self, outra, "interseção de máscaras")
        return Mascara(self.geometria, self.bits & outra.bits)

    def uniao(self, outra):
        verificar_geometria(self, outra, "união de máscaras")
        return Mascara(self.geometria, self.bits | outra.bits)

    @classmethod
    def cheia(cls, geometria):
        return cls(geometria, np.ones(geometria.dims, dtype=bool))

    @classmethod
    def vazia_em(cls, geometria):
        return cls(geometria, np.zeros(geometria.dims, dtype=bool))


@dataclass(frozen=True, eq=False)
class TransformacaoAfim:
    """
    Matriz 4x4 que leva coordenadas de mundo da referência (mm) às coordenadas
    de mundo do volume móvel (mm): convenção pull-back, reamostragem em um passo.
    """

    matriz: np.ndarray

    def __post_init__(self):
        matriz = np.array(self.matriz, dtype=np.float64)
        if matriz.shape != (4, 4):
            raise ErroConfiguracao(f"Matriz afim deve ser 4x4, recebida {matriz.shape}", 'matriz_invalida')
        if not np.allclose(matriz[3], [0.0, 0.0, 0.0, 1.0], atol=1e-12):
            raise ErroConfiguracao(f"Última linha da matriz afim deve ser (0,0,0,1): {matriz[3]}", 'matriz_invalida')
        if not np.isfinite(matriz).all():
            raise ErroConfiguracao("Matriz afim com valores não finitos", 'matriz_invalida')
        if abs(np.linalg.det(matriz[:3, :3])) < 1e-12:
            raise ErroConfiguracao("Bloco linear da matriz afim é singular", 'matriz_singular')
        matriz[3] = (0.0, 0.0, 0.0, 1.0)
        object.__setattr__(self, 'matriz', _somente_leitura(matriz))

    @classmethod
    def identidade(cls):
        return cls(np.eye(4))

    @classmethod
    def translacao(cls, deslocamento):
        matriz = np.eye(4)
        matriz[:3, 3] = _tripla(deslocamento, 'translação')
        return cls(matriz)

    @classmethod
    def escala(cls, fator, centro=(0.0, 0.0, 0.0)):
        """Escala em torno de `centro` (mm); `fator` escalar ou tripla."""
        fatores = np.broadcast_to(np.asarray(fator, dtype=np.float64), (3,))
        centro = np.asarray(centro, dtype=np.float64)
        matriz = np.eye(4)
        matriz[:3, :3] = np.diag(fatores)
        matriz[:3, 3] = centro - fatores * centro
        return cls(matriz)

    @property
    def linear(self):
        return self.matriz[:3, :3]

    @property
    def translacao_mm(self):
        return self.matriz[:3, 3]

    def aplicar(self, pontos):
        pontos = np.asarray(pontos, dtype=np.float64)
        return pontos @ self.linear.T + self.translacao_mm

    def compor(self, interna):
        """Transformação que aplica `interna` primeiro e depois esta."""
        return TransformacaoAfim(self.matriz @ interna.matriz)

    def inversa(self):
        return TransformacaoAfim(np.linalg.inv(self.matriz))

    def salvar_txt(self, caminho):
        """Grava os 16 valores em texto, linha a linha, 4 por linha."""
        np.savetxt(caminho, self.matriz, fmt='%.17g')
        logger.info(f"Matriz afim salva em {caminho}")

    @classmethod
    def carregar_txt(cls, caminho):
        try:
            matriz = np.loadtxt(caminho, dtype=np.float64)
        except (OSError, ValueError) as e:
            raise ErroConfiguracao(f"Não foi possível ler a matriz afim {caminho}: {e}", 'matriz_invalida')
        return cls(np.reshape(matriz, (4, 4)) if matriz.size == 16 else matriz)


def indices_continuos(geometria, pontos):
    """Pontos de mundo (N, 3) -> índices contínuos (3, N), com centros de voxel exatos."""
    indices = geometria.mundo_para_indices(pontos)
    arredondados = np.rint(indices)
    indices = np.where(np.abs(indices - arredondados) < _TOL_INDICE, arredondados, indices)
    return indices.T


def amostrar_pontos(vol, pontos):
    """
    Interpolação trilinear vetorizada.

    Args:
        vol: Volume de origem
        pontos: array (..., 3) de coordenadas de mundo (mm)

    Returns:
        Tuple (valores, validos): arrays com a forma de `pontos` sem o último eixo.
        Um ponto é válido quando todos os vizinhos com peso não nulo existem na
        grade e são válidos; pontos inválidos recebem HU_AR.
    """
    pontos = np.asarray(pontos, dtype=np.float64)
    forma = pontos.shape[:-1]
    coords = indices_continuos(vol.geometria, pontos.reshape(-1, 3))

    valores = ndimage.map_coordinates(vol.imputado(), coords, order=1, mode='constant', cval=HU_AR)
    peso_valido = ndimage.map_coordinates(
        vol.valido.astype(np.float64), coords, order=1, mode='constant', cval=0.0
    )
    validos = peso_valido >= 1.0 - _TOL_INDICE
    valores = np.where(validos, valores, HU_AR)
    return valores.reshape(forma), validos.reshape(forma)


def amostrar_trilinear(vol, ponto):
    """Amostra um único ponto de mundo; devolve (valor, valido)."""
    valores, validos = amostrar_pontos(vol, np.asarray(ponto, dtype=np.float64).reshape(1, 3))
    return float(valores[0]), bool(validos[0])


def amostrar_mascara(mascara, pontos, valido=None):
    """
    Vizinho mais próximo para máscaras: o resultado é verdadeiro apenas se o
    voxel de origem existe na grade, está marcado e (quando `valido` é dado)
    é válido.
    """
    pontos = np.asarray(pontos, dtype=np.float64)
    forma = pontos.shape[:-1]
    indices = np.floor(indices_continuos(mascara.geometria, pontos.reshape(-1, 3)) + 0.5).astype(np.int64)
    dims = np.asarray(mascara.geometria.dims)[:, None]
    na_grade = np.all((indices >= 0) & (indices < dims), axis=0)

    resultado = np.zeros(indices.shape[1], dtype=bool)
    i, j, k = indices[:, na_grade]
    resultado[na_grade] = mascara.bits[i, j, k]
    if valido is not None:
        resultado[na_grade] &= np.asarray(valido, dtype=bool)[i, j, k]
    return resultado.reshape(forma)


def reamostrar_para_geometria(vol, geometria):
    """Reamostra `vol` trilinearmente nos centros de voxel de `geometria`."""
    valores, validos = amostrar_pontos(vol, geometria.grade_mundo())
    return Volume(geometria, valores, validos)


def _suavizar_normalizado(vol, sigma):
    """Suavização gaussiana que só mistura voxels válidos."""
    numerador = ndimage.gaussian_filter(np.where(vol.valido, vol.dados, 0.0), sigma, mode='nearest')
    pesos = ndimage.gaussian_filter(vol.valido.astype(np.float64), sigma, mode='nearest')
    dados = np.divide(numerador, pesos, out=np.full_like(numerador, HU_AR), where=pesos > 1e-6)
    return vol.com_dados(dados)


def geometria_reamostrada(geometria, espacamento_saida):
    """Grade de espaçamento `espacamento_saida` cobrindo a mesma extensão de `geometria`."""
    espacamento_saida = np.asarray(_tripla(espacamento_saida, 'espaçamento de saída'))
    if np.any(espacamento_saida <= 0):
        raise ErroConfiguracao(f"Espaçamento de saída deve ser positivo: {tuple(espacamento_saida)}")

    espacamento = np.asarray(geometria.espacamento)
    extensao = np.asarray(geometria.extensao)
    dims = np.maximum(np.ceil(extensao / espacamento_saida - 1e-9), 1).astype(int)
    origem = np.asarray(geometria.origem) - 0.5 * espacamento + 0.5 * espacamento_saida
    return Geometria(tuple(dims), tuple(espacamento_saida), tuple(origem))


def reamostrar_espacamento(vol, espacamento_saida):
    """
    Reamostra para um novo espaçamento cobrindo a mesma extensão.

    Na redução de resolução os dados são antes suavizados com gaussiana de
    sigma = 0.5 * max(saida/entrada - 1, 0) voxels por eixo.
    """
    geometria = geometria_reamostrada(vol.geometria, espacamento_saida)
    sigma = 0.5 * np.maximum(np.asarray(geometria.espacamento) / np.asarray(vol.espacamento) - 1.0, 0.0)

    if np.any(sigma > 0):
        logger.debug(f"Suavizando antes da reamostragem com sigma={tuple(np.round(sigma, 3))} voxels")
        vol = _suavizar_normalizado(vol, sigma)

    return reamostrar_para_geometria(vol, geometria)


@dataclass(frozen=True, eq=False)
class CampoDeslocamento:
    """
    Campo denso de deslocamentos (mm) em convenção pull-back: o voxel de saída
    x amostra a entrada em mundo(x) + u(x).
    """

    geometria: Geometria
    vetores: np.ndarray

    def __post_init__(self):
        vetores = np.array(self.vetores, dtype=np.float64)
        esperado = self.geometria.dims + (3,)
        if vetores.shape != esperado:
            raise ErroGeometria(f"Campo com forma {vetores.shape}, esperado {esperado}")
        if not np.isfinite(vetores).all():
            raise ErroConfiguracao("Campo de deslocamento com componentes não finitas", 'campo_nao_finito')
        object.__setattr__(self, 'vetores', _somente_leitura(vetores))

    @classmethod
    def zeros(cls, geometria):
        return cls(geometria, np.zeros(geometria.dims + (3,)))

    @classmethod
    def constante(cls, geometria, vetor):
        return cls(geometria, np.broadcast_to(np.asarray(vetor, dtype=np.float64), geometria.dims + (3,)))

    @property
    def dims(self):
        return self.geometria.dims

    def magnitude(self):
        return np.linalg.norm(self.vetores, axis=-1)

    def posicoes(self):
        """Coordenadas de mundo deformadas mundo(x) + u(x)."""
        return self.geometria.grade_mundo() + self.vetores
