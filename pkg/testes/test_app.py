#!/usr/bin/env python
# -*- coding: utf-8 -*-

import json
import os

import numpy as np
import pandas as pd
import pytest

import app
from atlas import PacoteAtlas, salvar_atlas
from registro import salvar_estagios
from volume import Geometria, Volume, ler_nifti, salvar_nifti

CONFIG_REPOSITORIO = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
                                  'configuracoes', 'atlas_config.ini')


@pytest.fixture
def executar(tmp_path):
    """main() com log e configuração isolados."""
    def _executar(*argv):
        return app.main(['--config', CONFIG_REPOSITORIO, '--log-dir', str(tmp_path / 'log'), *argv])
    return _executar


@pytest.fixture
def exame_em_disco(tmp_path, fantasma_pequeno):
    caminho = tmp_path / 'entrada' / 'p01.nii.gz'
    salvar_nifti(fantasma_pequeno[0], caminho)
    return str(caminho)


def _pacote(geometria, valor):
    mapa = Volume(geometria, np.full(geometria.dims, valor))
    return PacoteAtlas(mapa, mapa, mapa, mapa, mapa, mapa, metadados={'cohort_size': 1})


class TestComandos:
    def test_preprocess_reprodutivel(self, executar, exame_em_disco, tmp_path):
        assert executar('preprocess', exame_em_disco, str(tmp_path / 'a')) == 0
        assert executar('preprocess', exame_em_disco, str(tmp_path / 'b')) == 0
        for nome in ('p01_hu.nii.gz', 'p01_corpo.nii.gz', 'p01_pulmao.nii.gz'):
            assert (tmp_path / 'a' / nome).read_bytes() == (tmp_path / 'b' / nome).read_bytes()
        assert (tmp_path / 'log' / app.LOG_NOME).exists()

    def test_phantom(self, executar, tmp_path):
        espec = tmp_path / 'espec.json'
        espec.write_text(json.dumps({'dims': [24, 24, 24], 'spacing_mm': [8, 8, 8], 'count': 2}))
        assert executar('phantom', str(espec), str(tmp_path / 'coorte'), '--seed', '5') == 0
        manifesto = pd.read_csv(tmp_path / 'coorte' / 'manifesto.csv')
        assert list(manifesto['scan_id']) == ['fantasma_000', 'fantasma_001']
        assert (tmp_path / 'coorte' / 'fantasma_001.nii.gz').exists()

    def test_register_gera_saidas(self, executar, exame_em_disco, estagios_rapidos, tmp_path):
        estagios = tmp_path / 'estagios.json'
        salvar_estagios(estagios_rapidos, estagios)
        config = tmp_path / 'rapida.ini'
        config.write_text("[AFIM]\nniveis_piramide = 1\niteracoes_por_nivel = 1\n")
        saida = tmp_path / 'registro'
        codigo = app.main(['--config', str(config), '--log-dir', str(tmp_path / 'log'), 'register', exame_em_disco,
                           exame_em_disco, str(saida), '--stages', str(estagios)])
        assert codigo == 0
        for nome in ('campo.nii.gz', 'deformado.nii.gz', 'pulmao_deformado.nii.gz', 'corpo_deformado.nii.gz',
                     'logjac.nii.gz', 'afim.txt', 'qa.csv'):
            assert (saida / nome).exists()
        assert (saida / 'qa.csv').read_text().splitlines()[0] == 'scan_id,lung_dsc,body_dsc,success,folding_fraction'

    def test_diff_de_um_atlas_consigo_e_zero(self, executar, tmp_path):
        salvar_atlas(_pacote(Geometria((6, 6, 6), (2, 2, 2)), -850.0), tmp_path / 'a')
        assert executar('diff', str(tmp_path / 'a'), str(tmp_path / 'a'), str(tmp_path / 'd')) == 0
        diferenca = ler_nifti(tmp_path / 'd' / 'hu_mean_diff.nii.gz')
        assert np.all(diferenca.dados[diferenca.valido] == 0.0)
        assert (tmp_path / 'd' / 'figuras' / 'hu_diff.png').exists()


class TestCodigosDeSaida:
    def test_entrada_inexistente(self, executar, tmp_path):
        assert executar('preprocess', str(tmp_path / 'nada.nii.gz'), str(tmp_path / 'saida')) == 2

    def test_estagios_malformados(self, executar, tmp_path):
        estagios = tmp_path / 'ruins.json'
        estagios.write_text('[{"resolution": 2,')
        codigo = executar('register', 'm.nii.gz', 'r.nii.gz', str(tmp_path / 'saida'), '--stages', str(estagios))
        assert codigo == 3

    def test_workers_invalido(self, executar, tmp_path):
        assert executar('atlas', 'm.csv', 'r.nii.gz', str(tmp_path), '--workers', '0') == 3

    @pytest.mark.parametrize('argv', [
        ['frobnicate'],
        ['preprocess'],
        ['atlas', 'm.csv', 'r.nii.gz', 'saida', '--window', 'abc'],
        ['register', 'm', 'r', 's', '--preset', 'inexistente'],
    ])
    def test_erro_de_uso(self, executar, argv):
        with pytest.raises(SystemExit) as info:
            executar(*argv)
        assert info.value.code == 3

    def test_filtro_sem_exames(self, executar, exame_em_disco, tmp_path):
        manifesto = tmp_path / 'manifesto.csv'
        manifesto.write_text(f"scan_id,path,sex,bmi,copd,cac\np01,{exame_em_disco},F,22,false,0\n")
        codigo = executar('atlas', str(manifesto), exame_em_disco, str(tmp_path / 'atlas'), '--filter', 'bmi>100')
        assert codigo == 4

    def test_diff_geometrias_diferentes(self, executar, tmp_path):
        salvar_atlas(_pacote(Geometria((6, 6, 6), (2, 2, 2)), 1.0), tmp_path / 'a')
        salvar_atlas(_pacote(Geometria((6, 6, 7), (2, 2, 2)), 1.0), tmp_path / 'b')
        assert executar('diff', str(tmp_path / 'a'), str(tmp_path / 'b'), str(tmp_path / 'd')) == 5
