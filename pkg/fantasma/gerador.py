#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
Fantasmas torácicos sintéticos e deformações com verdade analítica.

Tudo é função pura de (semente, especificação): o mesmo par gera volumes
idênticos bit a bit.
"""

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import ndimage

from volume import (
    CampoDeslocamento,
    ErroConfiguracao,
    Geometria,
    Mascara,
    Volume,
    salvar_mascara,
    salvar_nifti,
)
from registro.preprocessamento import ParSegmentacao

logger = logging.getLogger(__name__)

# Constantes
NIVEIS_HU = {'ar': -1000.0, 'pulmao': -850.0, 'gordura': -100.0, 'mole': 40.0, 'osso': 700.0}
ORDEM_NIVEIS = ('ar', 'pulmao', 'gordura', 'mole', 'osso')
ROTULO = {nome: indice for indice, nome in enumerate(ORDEM_NIVEIS)}
FAIXA_COSTELA = (0.80, 0.85)
N_BOLHAS = 8
LIMITE_GRADIENTE = 0.45
FATOR_ALARGAMENTO = 1.2
MAX_ALARGAMENTOS = 40


@dataclass(frozen=True)
class EspecFantasma:
    """Anatomia do fantasma em mm, centrada na origem do mundo."""

    semente: int = 0
    dims: tuple = (96, 96, 96)
    espacamento: tuple = (2.0, 2.0, 2.0)
    semi_eixos_corpo: tuple = (85.0, 65.0, 140.0)
    semi_eixos_pulmao: tuple = (25.0, 35.0, 60.0)
    centros_pulmao: tuple = ((-35.0, 0.0, 0.0), (35.0, 0.0, 0.0))
    espessura_gordura: float = 10.0
    n_costelas: int = 6
    espessura_costela: float = 6.0
    niveis_hu: dict = field(default_factory=lambda: dict(NIVEIS_HU))
    fov_crop: float = 0.0
    ruido_hu: float = 20.0
    fator_volume_pulmao: float = 1.0

    def __post_init__(self):
        niveis = {**NIVEIS_HU, **dict(self.niveis_hu)}
        object.__setattr__(self, 'niveis_hu', niveis)
        valores = [niveis[nome] for nome in ORDEM_NIVEIS]
        if any(a >= b for a, b in zip(valores, valores[1:])):
            raise ErroConfiguracao(f"Níveis HU devem crescer ar < pulmão < gordura < mole < osso: {niveis}")
        if not 0.0 <= self.fov_crop < 1.0:
            raise ErroConfiguracao(f"fov_crop deve estar em [0, 1): {self.fov_crop}")
        if self.ruido_hu < 0 or self.fator_volume_pulmao <= 0 or self.n_costelas < 0:
            raise ErroConfiguracao("ruido_hu, fator_volume_pulmao e n_costelas fora do intervalo")
        if self.espessura_gordura <= 0 or self.espessura_gordura >= min(self.semi_eixos_corpo):
            raise ErroConfiguracao(f"Espessura de gordura inválida: {self.espessura_gordura}")
        # valida dims e espaçamento
        self.geometria()
        self._verificar_pulmoes()

    def geometria(self):
        dims = np.asarray(self.dims)
        espacamento = np.asarray(self.espacamento, dtype=np.float64)
        return Geometria(tuple(dims), tuple(espacamento), tuple(-(dims - 1) / 2.0 * espacamento))

    @property
    def semi_eixos_pulmao_efetivos(self):
        return tuple(np.asarray(self.semi_eixos_pulmao) * self.fator_volume_pulmao ** (1.0 / 3.0))

    @property
    def semi_eixos_internos(self):
        return tuple(np.asarray(self.semi_eixos_corpo) - self.espessura_gordura)

    def _verificar_pulmoes(self):
        """Cada pulmão precisa caber no tecido mole, por dentro da faixa das costelas."""
        interno = np.asarray(self.semi_eixos_internos)
        corpo = np.asarray(self.semi_eixos_corpo)
        semi = np.asarray(self.semi_eixos_pulmao_efetivos)
        # amostra densa da superfície de cada elipsoide de pulmão
        direcoes = np.random.default_rng(0).normal(size=(2000, 3))
        direcoes = np.vstack([direcoes / np.linalg.norm(direcoes, axis=1, keepdims=True), np.eye(3), -np.eye(3)])
        for centro in self.centros_pulmao:
            superficie = np.asarray(centro) + direcoes * semi
            raio_plano = np.sqrt(np.sum((superficie[:, :2] / corpo[:2]) ** 2, axis=1))
            if np.any(raio_plano >= FAIXA_COSTELA[0]) or np.any(np.sum((superficie / interno) ** 2, axis=1) >= 1.0):
                raise ErroConfiguracao(f"Pulmão centrado em {centro} não está estritamente dentro do corpo")


def _dentro_elipsoide(pontos, centro, semi_eixos):
    return np.sum(((pontos - np.asarray(centro)) / np.asarray(semi_eixos)) ** 2, axis=-1) <= 1.0


def rotulos_em(espec, pontos):
    """Rótulo do tecido em cada ponto de mundo (..., 3)."""
    rotulos = np.full(pontos.shape[:-1], ROTULO['ar'], dtype=np.int8)
    rotulos[_dentro_elipsoide(pontos, (0, 0, 0), espec.semi_eixos_corpo)] = ROTULO['gordura']
    rotulos[_dentro_elipsoide(pontos, (0, 0, 0), espec.semi_eixos_internos)] = ROTULO['mole']

    if espec.n_costelas:
        semi = np.asarray(espec.semi_eixos_corpo)
        raio_plano = np.sqrt(np.sum((pontos[..., :2] / semi[:2]) ** 2, axis=-1))
        na_faixa = (raio_plano >= FAIXA_COSTELA[0]) & (raio_plano <= FAIXA_COSTELA[1])
        extensao_z = espec.semi_eixos_pulmao_efetivos[2]
        centros_z = np.linspace(-extensao_z, extensao_z, espec.n_costelas)
        distancia_z = np.min(np.abs(pontos[..., 2, np.newaxis] - centros_z), axis=-1)
        rotulos[na_faixa & (distancia_z <= espec.espessura_costela / 2.0)] = ROTULO['osso']

    for centro in espec.centros_pulmao:
        rotulos[_dentro_elipsoide(pontos, centro, espec.semi_eixos_pulmao_efetivos)] = ROTULO['pulmao']
    return rotulos


def gerar_fantasma(espec, deformacao=None):
    """
    Gera o volume e as máscaras verdadeiras.

    Com `deformacao`, o fantasma é avaliado em x + u(x): o resultado é o
    fantasma deformado pelo campo pull-back u, sem perda por interpolação.

    Returns:
        Tuple (Volume, ParSegmentacao)
    """
    geometria = espec.geometria()
    pontos = geometria.grade_mundo()
    if deformacao is not None:
        pontos = pontos + deformacao.deslocamento(pontos)

    rotulos = rotulos_em(espec, pontos)
    tabela_hu = np.array([espec.niveis_hu[nome] for nome in ORDEM_NIVEIS])
    dados = ndimage.gaussian_filter(tabela_hu[rotulos], 1.0, mode='nearest')

    rng = np.random.default_rng(espec.semente)
    if espec.ruido_hu > 0:
        dados = dados + rng.normal(0.0, espec.ruido_hu, size=dados.shape)

    valido = np.ones(geometria.dims, dtype=bool)
    cortadas = int(round(espec.fov_crop * geometria.dims[2]))
    if cortadas:
        valido[:, :, geometria.dims[2] - cortadas:] = False

    corpo = Mascara(geometria, rotulos != ROTULO['ar'])
    pulmao = Mascara(geometria, rotulos == ROTULO['pulmao'])
    logger.debug(f"Fantasma semente {espec.semente}: {pulmao.contagem()} voxels de pulmão, {cortadas} fatias cortadas")
    return Volume(geometria, dados, valido), ParSegmentacao(corpo, pulmao)


@dataclass(frozen=True, eq=False)
class DeformacaoSintetica:
    """u(x) = Σ a_i exp(-||x - c_i||² / 2 w_i²) + B (x - c0), em mm."""

    semente: int
    centros: np.ndarray
    amplitudes: np.ndarray
    larguras: np.ndarray
    linear: np.ndarray
    centro_afim: np.ndarray

    def _bolhas(self, pontos):
        diferenca = pontos[..., np.newaxis, :] - self.centros
        return diferenca, np.exp(-np.sum(diferenca ** 2, axis=-1) / (2.0 * self.larguras ** 2))

    def deslocamento(self, pontos):
        pontos = np.asarray(pontos, dtype=np.float64)
        _, pesos = self._bolhas(pontos)
        return pesos @ self.amplitudes + (pontos - self.centro_afim) @ self.linear.T

    def gradiente(self, pontos):
        """∂u_c/∂x_a, forma (..., 3, 3)."""
        pontos = np.asarray(pontos, dtype=np.float64)
        diferenca, pesos = self._bolhas(pontos)
        fator = -pesos[..., np.newaxis] * diferenca / self.larguras[:, np.newaxis] ** 2
        return np.einsum('ic,...ia->...ca', self.amplitudes, fator) + self.linear

    def campo(self, geometria):
        return CampoDeslocamento(geometria, self.deslocamento(geometria.grade_mundo()))


def gerar_deformacao(semente, geometria, deslocamento_max):
    """
    Oito bolhas gaussianas mais uma parte afim pequena, com pico exatamente
    `deslocamento_max` na grade. As larguras crescem até ||∇u||_F < 0.45.

    Returns:
        Tuple (CampoDeslocamento, DeformacaoSintetica)

    Raises:
        ErroConfiguracao: deslocamento incompatível com a positividade do Jacobiano
    """
    if deslocamento_max < 0:
        raise ErroConfiguracao(f"deslocamento_max deve ser >= 0: {deslocamento_max}")

    rng = np.random.default_rng(semente)
    extensao = np.asarray(geometria.extensao)
    centro_grade = geometria.indices_para_mundo((np.asarray(geometria.dims) - 1) / 2.0)
    centros = centro_grade + rng.uniform(-0.3, 0.3, size=(N_BOLHAS, 3)) * extensao
    direcoes = rng.normal(size=(N_BOLHAS, 3))
    direcoes /= np.linalg.norm(direcoes, axis=1, keepdims=True)
    amplitudes_base = direcoes * rng.uniform(0.5, 1.0, size=(N_BOLHAS, 1))
    linear_base = rng.normal(0.0, 0.002, size=(3, 3))

    larguras = np.full(N_BOLHAS, max(3.0 * deslocamento_max, 2.0 * max(geometria.espacamento)))
    pontos = geometria.grade_mundo()

    for _ in range(MAX_ALARGAMENTOS):
        bruta = DeformacaoSintetica(semente, centros, amplitudes_base, larguras, linear_base, centro_grade)
        pico = np.max(np.linalg.norm(bruta.deslocamento(pontos), axis=-1))
        escala = deslocamento_max / pico if pico > 0 else 0.0
        deformacao = replace(bruta, amplitudes=amplitudes_base * escala, linear=linear_base * escala)

        gradiente_max = np.max(np.linalg.norm(deformacao.gradiente(pontos), axis=(-2, -1)))
        if gradiente_max < LIMITE_GRADIENTE:
            logger.debug(f"Deformação semente {semente}: pico {deslocamento_max} mm, "
                         f"larguras {larguras[0]:.1f} mm, |∇u| máx {gradiente_max:.3f}")
            return deformacao.campo(geometria), deformacao
        larguras = larguras * FATOR_ALARGAMENTO

    raise ErroConfiguracao(
        f"Deslocamento máximo {deslocamento_max} mm incompatível com Jacobiano positivo nesta grade"
    )


CHAVES_ESPEC = {
    'seed': 'semente',
    'dims': 'dims',
    'spacing_mm': 'espacamento',
    'body_semi_axes_mm': 'semi_eixos_corpo',
    'lung_semi_axes_mm': 'semi_eixos_pulmao',
    'lung_centers_mm': 'centros_pulmao',
    'fat_thickness_mm': 'espessura_gordura',
    'rib_count': 'n_costelas',
    'hu_levels': 'niveis_hu',
    'fov_crop': 'fov_crop',
    'noise_hu': 'ruido_hu',
    'lung_volume_factor': 'fator_volume_pulmao',
}
CHAVES_HU = {'air': 'ar', 'lung': 'pulmao', 'fat': 'gordura', 'soft': 'mole', 'bone': 'osso'}
CHAVES_COORTE = {'count', 'max_displacement_mm', 'fov_crops', 'deformation_seed', 'sex', 'bmi', 'copd', 'cac',
                 'id_prefix'}


def espec_de_dict(dados):
    """Objeto JSON -> EspecFantasma; chaves de coorte são ignoradas aqui."""
    desconhecidas = set(dados) - set(CHAVES_ESPEC) - CHAVES_COORTE
    if desconhecidas:
        raise ErroConfiguracao(f"Chaves desconhecidas na especificação do fantasma: {sorted(desconhecidas)}")

    parametros = {CHAVES_ESPEC[c]: v for c, v in dados.items() if c in CHAVES_ESPEC}
    if 'niveis_hu' in parametros:
        niveis = parametros['niveis_hu']
        if not isinstance(niveis, dict) or set(niveis) - set(CHAVES_HU):
            raise ErroConfiguracao(f"hu_levels inválido: {niveis!r}")
        parametros['niveis_hu'] = {CHAVES_HU[c]: float(v) for c, v in niveis.items()}
    for chave in ('dims', 'espacamento', 'semi_eixos_corpo', 'semi_eixos_pulmao'):
        if chave in parametros:
            parametros[chave] = tuple(parametros[chave])
    if 'centros_pulmao' in parametros:
        parametros['centros_pulmao'] = tuple(tuple(c) for c in parametros['centros_pulmao'])

    try:
        return EspecFantasma(**parametros)
    except (TypeError, ValueError) as e:
        raise ErroConfiguracao(f"Especificação de fantasma inválida: {e}")


def carregar_espec(caminho):
    try:
        with open(caminho, 'r', encoding='utf-8') as arquivo:
            dados = json.load(arquivo)
    except OSError as e:
        raise ErroConfiguracao(f"Não foi possível ler {caminho}: {e}")
    except json.JSONDecodeError as e:
        raise ErroConfiguracao(f"{caminho}: JSON inválido na linha {e.lineno}, coluna {e.colno}: {e.msg}")
    if not isinstance(dados, dict):
        raise ErroConfiguracao(f"{caminho}: especificação deve ser um objeto JSON")
    return dados


def gerar_coorte(dados, diretorio):
    """
    Gera `count` fantasmas (sementes seed, seed+1, ...), opcionalmente deformados
    e com cortes de FOV alternados, e grava o manifesto CSV.

    Returns:
        DataFrame do manifesto
    """
    espec_base = espec_de_dict(dados)
    diretorio = Path(diretorio)
    diretorio.mkdir(parents=True, exist_ok=True)

    quantidade = int(dados.get('count', 1))
    if quantidade < 1:
        raise ErroConfiguracao(f"count deve ser >= 1: {quantidade}")
    deslocamento_max = float(dados.get('max_displacement_mm', 0.0))
    cortes = list(dados.get('fov_crops', [espec_base.fov_crop]))
    semente_deformacao = int(dados.get('deformation_seed', espec_base.semente + 1000))
    prefixo = str(dados.get('id_prefix', 'fantasma'))

    linhas = []
    for i in range(quantidade):
        espec = replace(espec_base, semente=espec_base.semente + i, fov_crop=float(cortes[i % len(cortes)]))
        deformacao = None
        if deslocamento_max > 0:
            _, deformacao = gerar_deformacao(semente_deformacao + i, espec.geometria(), deslocamento_max)
        volume, segmentacao = gerar_fantasma(espec, deformacao)

        id_exame = f"{prefixo}_{i:03d}"
        caminho = diretorio / f"{id_exame}.nii.gz"
        salvar_nifti(volume, caminho)
        salvar_mascara(segmentacao.corpo, diretorio / f"{id_exame}_corpo.nii.gz")
        salvar_mascara(segmentacao.pulmao, diretorio / f"{id_exame}_pulmao.nii.gz")
        linhas.append({
            'scan_id': id_exame,
            'path': caminho.name,
            'sex': dados.get('sex', ''),
            'bmi': dados.get('bmi', ''),
            'copd': dados.get('copd', ''),
            'cac': dados.get('cac', ''),
        })
        logger.info(f"Fantasma {id_exame} gerado (fov_crop={espec.fov_crop})")

    manifesto = pd.DataFrame(linhas, columns=['scan_id', 'path', 'sex', 'bmi', 'copd', 'cac'])
    manifesto.to_csv(diretorio / 'manifesto.csv', index=False)
    return manifesto
