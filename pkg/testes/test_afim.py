#!/usr/bin/env python
# -*- coding: utf-8 -*-

import numpy as np
import pytest

from volume import CampoDeslocamento, ErroConfiguracao, ErroSubdeterminado, Geometria, TransformacaoAfim, Volume
from registro import ConfigAfim, aplicar_afim, deformar, preprocessar, recortar_janela, registrar_afim
from registro.afim import ajustar_lts


class TestAjusteLTS:
    def test_recupera_afim_com_pontos_espurios(self):
        rng = np.random.default_rng(11)
        matriz = np.eye(4)
        matriz[:3, :3] = [[1.05, 0.02, 0.0], [-0.01, 0.97, 0.03], [0.0, 0.01, 1.02]]
        matriz[:3, 3] = (4.0, -3.0, 7.5)
        origens = rng.uniform(-80, 80, size=(60, 3))
        destinos = TransformacaoAfim(matriz).aplicar(origens)
        destinos[:15] += rng.uniform(20, 40, size=(15, 3))

        np.testing.assert_allclose(ajustar_lts(origens, destinos, 0.5), matriz, atol=1e-9)

    def test_pontos_coplanares(self):
        rng = np.random.default_rng(2)
        origens = np.column_stack([rng.uniform(size=(20, 2)), np.zeros(20)])
        with pytest.raises(ErroSubdeterminado):
            ajustar_lts(origens, origens + 1.0, 0.5)


class TestRegistroAfim:
    def test_recupera_translacao_do_fantasma(self, fantasma_pequeno):
        volume, _ = fantasma_pequeno
        translacao = np.array([6.0, -4.0, 4.0])
        # móvel(x) = fantasma(x + t): a afim referência -> móvel é x - t
        movel = deformar(volume, CampoDeslocamento.constante(volume.geometria, translacao))

        ref_pre, seg_ref = preprocessar(volume)
        mov_pre, _ = preprocessar(movel)
        transformacao = registrar_afim(mov_pre, ref_pre, corpo_referencia=seg_ref.corpo)

        np.testing.assert_allclose(transformacao.translacao_mm, -translacao, atol=1.5)
        np.testing.assert_allclose(transformacao.linear, np.eye(3), atol=0.03)

    def test_volume_sem_textura(self):
        geometria = Geometria((16, 16, 16), (4.0, 4.0, 4.0))
        vol = Volume(geometria, np.full(geometria.dims, 40.0))
        cfg = ConfigAfim(niveis_piramide=1)
        with pytest.raises(ErroSubdeterminado) as erro:
            registrar_afim(vol, vol, cfg)
        assert erro.value.codigo_saida == 6


class TestAuxiliares:
    def test_recorte_preserva_validade(self):
        geometria = Geometria((2, 2, 2), (1, 1, 1))
        valido = np.ones(geometria.dims, dtype=bool)
        valido[0, 0, 0] = False
        vol = Volume(geometria, np.array([-2000.0, 0, 500, 1500, 10, 20, 30, 40]).reshape(2, 2, 2), valido)
        recortado = recortar_janela(vol, (0.0, 1000.0))
        assert recortado.dados.max() == 1000.0
        np.testing.assert_array_equal(recortado.valido, valido)

    def test_aplicar_identidade(self, fantasma_pequeno):
        volume, _ = fantasma_pequeno
        resultado = aplicar_afim(volume, TransformacaoAfim.identidade(), volume.geometria)
        np.testing.assert_array_equal(resultado.dados, volume.dados)

    def test_config_invalida(self):
        with pytest.raises(ErroConfiguracao):
            ConfigAfim(fracao_corte=1.0)
        with pytest.raises(ErroConfiguracao):
            ConfigAfim(janela=(100.0, 0.0))
