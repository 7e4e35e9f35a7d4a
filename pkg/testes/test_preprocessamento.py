#!/usr/bin/env python
# -*- coding: utf-8 -*-

import numpy as np
import pytest
from scipy import ndimage

from atlas import dice
from volume import ErroConfiguracao, ErroEntradaDegenerada, Geometria, Mascara, Volume
from registro import (
    ConfigPreprocessamento,
    ParSegmentacao,
    preprocessar,
    remover_ambiente,
    segmentar_corpo,
    segmentar_pulmao,
)


class TestSegmentacao:
    def test_corpo_e_pulmao_no_fantasma_sem_ruido(self, fantasma_sem_ruido):
        volume, verdade = fantasma_sem_ruido
        _, segmentacao = preprocessar(volume)
        # a grade de 4 mm tem borda parcial maior que a de 2 mm
        assert dice(segmentacao.corpo, verdade.corpo) >= 0.98
        assert dice(segmentacao.pulmao, verdade.pulmao) >= 0.98

    def test_pulmao_contido_no_corpo(self, fantasma_pequeno):
        volume, _ = fantasma_pequeno
        _, segmentacao = preprocessar(volume)
        assert not np.any(segmentacao.pulmao.bits & ~segmentacao.corpo.bits)
        _, n = ndimage.label(segmentacao.corpo.bits)
        assert n == 1

    def test_dois_pulmoes(self, fantasma_pequeno):
        volume, _ = fantasma_pequeno
        _, segmentacao = preprocessar(volume)
        _, n = ndimage.label(segmentacao.pulmao.bits)
        assert n == 2

    def test_volume_vazio(self):
        geometria = Geometria((8, 8, 8), (1, 1, 1))
        with pytest.raises(ErroEntradaDegenerada) as erro:
            segmentar_corpo(Volume(geometria, np.full(geometria.dims, -1000.0)))
        assert erro.value.tipo_erro == 'corpo_vazio'

    def test_sem_pulmao(self):
        geometria = Geometria((12, 12, 12), (1, 1, 1))
        dados = np.full(geometria.dims, -1000.0)
        dados[2:10, 2:10, 2:10] = 40.0
        vol = Volume(geometria, dados)
        corpo = segmentar_corpo(vol)
        with pytest.raises(ErroEntradaDegenerada):
            segmentar_pulmao(vol, corpo)

    def test_cavidade_tocando_a_borda_e_descartada(self):
        geometria = Geometria((20, 20, 6), (1, 1, 1))
        dados = np.full(geometria.dims, -1000.0)
        dados[2:18, 2:18, :] = 40.0
        dados[6:10, 6:10, :] = -850.0     # interior
        dados[2:5, 12:16, :] = -850.0     # encostada na borda do corpo
        vol = Volume(geometria, dados)
        bits = np.zeros(geometria.dims, dtype=bool)
        bits[2:18, 2:18, :] = True
        corpo = Mascara(geometria, bits)
        pulmao = segmentar_pulmao(vol, corpo, ConfigPreprocessamento(raio_fechamento_pulmao=0))
        assert pulmao.bits[6:10, 6:10, :].all()
        assert not pulmao.bits[2:5, 12:16, :].any()

    def test_config_invalida(self):
        with pytest.raises(ErroConfiguracao):
            ConfigPreprocessamento(pulmao_min=-400.0, pulmao_max=-950.0)
        with pytest.raises(ErroConfiguracao):
            ConfigPreprocessamento(raio_fechamento_corpo=-1)


class TestRemocaoAmbiente:
    def test_ambiente_vira_ar_e_fov_continua_invalido(self, fantasma_pequeno):
        volume, verdade = fantasma_pequeno
        valido = volume.valido.copy()
        valido[:, :, :5] = False
        recortado = volume.com_dados(volume.dados, valido)

        sem_ambiente = remover_ambiente(recortado, verdade.corpo)
        fora = ~verdade.corpo.bits
        assert np.all(sem_ambiente.dados[fora & valido] == -1000.0)
        np.testing.assert_array_equal(sem_ambiente.valido, valido)
        dentro = verdade.corpo.bits & valido
        np.testing.assert_array_equal(sem_ambiente.dados[dentro], volume.dados[dentro])

    def test_par_exige_pulmao_no_corpo(self):
        geometria = Geometria((4, 4, 4), (1, 1, 1))
        corpo = np.zeros(geometria.dims, dtype=bool)
        pulmao = np.zeros(geometria.dims, dtype=bool)
        pulmao[0, 0, 0] = True
        with pytest.raises(ErroConfiguracao):
            ParSegmentacao(Mascara(geometria, corpo), Mascara(geometria, pulmao))
