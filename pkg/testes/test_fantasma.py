#!/usr/bin/env python
# -*- coding: utf-8 -*-

from dataclasses import replace

import numpy as np
import pytest
from scipy import ndimage

from data import carregar_manifesto
from fantasma import EspecFantasma, espec_de_dict, gerar_coorte, gerar_deformacao, gerar_fantasma, rotulos_em
from fantasma.gerador import ROTULO
from registro import log_jacobiano
from volume import ErroConfiguracao, Geometria, ler_mascara, ler_nifti


class TestFantasma:
    def test_deterministico(self, espec_pequena, fantasma_pequeno):
        volume, segmentacao = gerar_fantasma(espec_pequena)
        np.testing.assert_array_equal(volume.dados, fantasma_pequeno[0].dados)
        np.testing.assert_array_equal(segmentacao.pulmao.bits, fantasma_pequeno[1].pulmao.bits)

    def test_sementes_diferentes_mudam_o_ruido(self, espec_pequena, fantasma_pequeno):
        outro, segmentacao = gerar_fantasma(replace(espec_pequena, semente=7))
        assert not np.array_equal(outro.dados, fantasma_pequeno[0].dados)
        np.testing.assert_array_equal(segmentacao.corpo.bits, fantasma_pequeno[1].corpo.bits)

    def test_interior_do_pulmao(self, fantasma_pequeno):
        volume, segmentacao = fantasma_pequeno
        interior = ndimage.binary_erosion(segmentacao.pulmao.bits, iterations=2)
        assert interior.sum() > 100
        assert abs(volume.dados[interior].mean() + 850.0) <= 30.0

    def test_dois_pulmoes_dentro_do_corpo(self, fantasma_pequeno):
        _, segmentacao = fantasma_pequeno
        _, n_componentes = ndimage.label(segmentacao.pulmao.bits)
        assert n_componentes == 2
        assert not np.any(segmentacao.pulmao.bits & ~segmentacao.corpo.bits)

    def test_corte_de_fov(self, espec_pequena):
        volume, _ = gerar_fantasma(replace(espec_pequena, fov_crop=0.2))
        assert not volume.valido[:, :, 38:].any()
        assert volume.valido[:, :, :38].all()

    def test_rotulos_analiticos(self, espec_pequena):
        pontos = np.array([
            [0.0, 0.0, 0.0],
            [35.0, 0.0, 0.0],
            [0.0, 0.0, 200.0],
            [84.0, 0.0, 0.0],
            [69.7, 0.0, 12.0],
        ])
        esperado = [ROTULO['mole'], ROTULO['pulmao'], ROTULO['ar'], ROTULO['gordura'], ROTULO['osso']]
        np.testing.assert_array_equal(rotulos_em(espec_pequena, pontos), esperado)


class TestEspec:
    def test_niveis_fora_de_ordem(self):
        with pytest.raises(ErroConfiguracao):
            EspecFantasma(niveis_hu={'pulmao': 100.0})

    def test_pulmao_fora_do_corpo(self):
        with pytest.raises(ErroConfiguracao):
            EspecFantasma(semi_eixos_pulmao=(60.0, 60.0, 60.0))

    def test_fov_crop_invalido(self):
        with pytest.raises(ErroConfiguracao):
            EspecFantasma(fov_crop=1.0)

    def test_de_dict(self):
        espec = espec_de_dict({'seed': 3, 'dims': [24, 24, 24], 'spacing_mm': [8, 8, 8], 'hu_levels': {'lung': -870},
                               'count': 4})
        assert espec.semente == 3
        assert espec.dims == (24, 24, 24)
        assert espec.niveis_hu['pulmao'] == -870.0
        assert espec.niveis_hu['ar'] == -1000.0

    @pytest.mark.parametrize('dados', [{'sigma': 1}, {'hu_levels': {'blood': 50}}])
    def test_de_dict_invalido(self, dados):
        with pytest.raises(ErroConfiguracao):
            espec_de_dict(dados)


GEOMETRIA = Geometria((24, 24, 24), (8.0, 8.0, 8.0), (-92.0, -92.0, -92.0))


class TestDeformacao:
    @pytest.fixture(scope='class')
    def deformacao(self):
        return gerar_deformacao(11, GEOMETRIA, 10.0)

    def test_pico_exato(self, deformacao):
        campo, _ = deformacao
        assert np.linalg.norm(campo.vetores, axis=-1).max() == pytest.approx(10.0, rel=1e-9)

    def test_campo_igual_ao_avaliador(self, deformacao):
        campo, analitica = deformacao
        np.testing.assert_allclose(campo.vetores, analitica.deslocamento(GEOMETRIA.grade_mundo()), atol=1e-12)

    def test_gradiente_por_diferencas_finitas(self, deformacao):
        _, analitica = deformacao
        pontos = np.random.default_rng(0).uniform(-80.0, 80.0, size=(20, 3))
        h = 1e-4
        numerico = np.stack([
            (analitica.deslocamento(pontos + h * eixo) - analitica.deslocamento(pontos - h * eixo)) / (2 * h)
            for eixo in np.eye(3)
        ], axis=-1)
        np.testing.assert_allclose(analitica.gradiente(pontos), numerico, atol=1e-7)

    def test_sem_dobras(self, deformacao):
        campo, analitica = deformacao
        assert np.linalg.norm(analitica.gradiente(GEOMETRIA.grade_mundo()), axis=(-2, -1)).max() < 0.45
        _, relatorio = log_jacobiano(campo)
        assert relatorio['voxels_dobrados'] == 0

    def test_mesma_semente_mesmo_campo(self, deformacao):
        campo, _ = gerar_deformacao(11, GEOMETRIA, 10.0)
        np.testing.assert_array_equal(campo.vetores, deformacao[0].vetores)

    def test_deslocamento_nulo(self, espec_pequena, fantasma_pequeno):
        campo, analitica = gerar_deformacao(5, espec_pequena.geometria(), 0.0)
        assert not campo.vetores.any()
        volume, _ = gerar_fantasma(espec_pequena, analitica)
        np.testing.assert_array_equal(volume.dados, fantasma_pequeno[0].dados)

    def test_deslocamento_negativo(self):
        with pytest.raises(ErroConfiguracao):
            gerar_deformacao(0, GEOMETRIA, -1.0)


class TestCoorte:
    def test_gera_arquivos_e_manifesto(self, tmp_path):
        dados = {'seed': 2, 'dims': [24, 24, 24], 'spacing_mm': [8, 8, 8], 'count': 2, 'max_displacement_mm': 6,
                 'fov_crops': [0.0, 0.25], 'sex': 'F', 'copd': 'false'}
        manifesto = gerar_coorte(dados, tmp_path)
        assert list(manifesto['scan_id']) == ['fantasma_000', 'fantasma_001']

        lido = carregar_manifesto(tmp_path / 'manifesto.csv')
        assert list(lido['sex']) == ['F', 'F']

        primeiro = ler_nifti(lido['path'][0])
        segundo = ler_nifti(lido['path'][1])
        assert primeiro.valido.all()
        assert not segundo.valido[:, :, 18:].any()
        assert ler_mascara(tmp_path / 'fantasma_001_pulmao.nii.gz').contagem() > 0

    def test_coorte_reprodutivel(self, tmp_path):
        dados = {'dims': [24, 24, 24], 'spacing_mm': [8, 8, 8], 'count': 1, 'max_displacement_mm': 6}
        gerar_coorte(dados, tmp_path / 'a')
        gerar_coorte(dados, tmp_path / 'b')
        arquivo = 'fantasma_000.nii.gz'
        assert (tmp_path / 'a' / arquivo).read_bytes() == (tmp_path / 'b' / arquivo).read_bytes()

    def test_quantidade_invalida(self, tmp_path):
        with pytest.raises(ErroConfiguracao):
            gerar_coorte({'count': 0}, tmp_path)
