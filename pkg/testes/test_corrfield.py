#!/usr/bin/env python
# -*- coding: utf-8 -*-

import itertools
import json

import numpy as np
import pytest

from volume import CampoDeslocamento, ErroConfiguracao, ErroFalhaEstagio, Geometria, Mascara, Volume
from registro import (
    ConfigEstagio,
    ConjuntoPontosChave,
    TabelaCustos,
    amostrar_pontos_chave,
    arvore_geradora,
    carregar_estagios,
    custos_unarios,
    deformar,
    densificar,
    descritor_ssc,
    energia,
    estagio_unico,
    estagios_otimizados,
    executar_estagio,
    executar_pipeline,
    filtrar_simetria,
    regularizar_mst,
    salvar_estagios,
)
from registro.corrfield import conjunto_candidatos


def _instancia_aleatoria(rng, n_pontos, eixos):
    geometria = Geometria((5, 5, 5), (1.0, 1.5, 2.0))
    todos = np.argwhere(np.ones((5, 5, 5), dtype=bool))
    posicoes = todos[rng.choice(len(todos), size=n_pontos, replace=False)]
    pontos = ConjuntoPontosChave(geometria, posicoes, (1, 1))
    custos = rng.uniform(0.0, 1.0, size=(n_pontos,) + tuple(len(e) for e in eixos))
    return pontos, TabelaCustos(custos, eixos, geometria.espacamento)


def _escolhas(tabela, pontos):
    candidatos = tabela.deslocamentos_mm
    return [int(np.flatnonzero(np.all(np.isclose(candidatos, d), axis=1))[0]) for d in pontos.deslocamentos]


class TestEstagios:
    def test_tabela_otimizada(self):
        estagios = estagios_otimizados()
        assert len(estagios) == 4
        assert estagios[0].resolucao == (2.0, 2.0, 2.0)
        assert estagios[0].raio_busca == (60, 30)
        assert estagios[-1].resolucao == (1.0, 1.0, 1.0)
        assert estagios[-1].raio_patch == (6, 4)
        assert [e.regularizacao for e in estagios] == [1.0, 0.7, 0.5, 0.1]
        assert estagio_unico() == estagios[:1]

    def test_quantizacao_padrao(self):
        assert ConfigEstagio(raio_busca=(60, 30), dispersao=(8, 4)).passo == (7, 3)
        assert ConfigEstagio(raio_busca=(6, 6), dispersao=(6, 6)).passo == (1, 1)

    def test_raio_menor_que_dispersao(self):
        with pytest.raises(ErroConfiguracao):
            ConfigEstagio(raio_busca=(3, 3), dispersao=(4, 2))

    def test_regularizacao_negativa(self):
        with pytest.raises(ErroConfiguracao):
            ConfigEstagio(regularizacao=-0.1)

    def test_json_ida_e_volta(self, tmp_path):
        caminho = tmp_path / 'estagios.json'
        salvar_estagios(estagios_otimizados(), caminho)
        assert carregar_estagios(caminho) == estagios_otimizados()

    def test_json_chave_desconhecida(self, tmp_path):
        caminho = tmp_path / 'estagios.json'
        caminho.write_text(json.dumps([{'search_radius': [10, 10], 'dispersion': [2, 2], 'sigma': 3}]))
        with pytest.raises(ErroConfiguracao):
            carregar_estagios(caminho)

    def test_json_malformado(self, tmp_path):
        caminho = tmp_path / 'estagios.json'
        caminho.write_text('[{"search_radius": [10, 10],}]')
        with pytest.raises(ErroConfiguracao) as erro:
            carregar_estagios(caminho)
        assert 'linha 1' in erro.value.mensagem

    def test_resolucao_limitada_pela_referencia(self):
        cfg = ConfigEstagio(resolucao=1.0, raio_busca=(8, 8), dispersao=(4, 4), raio_patch=(2, 2))
        adaptada = cfg.adaptar_resolucao((2.0, 2.0, 2.0))
        assert adaptada.resolucao == (2.0, 2.0, 2.0)
        assert adaptada.raio_busca == (4, 4)
        assert adaptada.dispersao == (2, 2)
        assert adaptada.raio_patch == (1, 1)
        assert cfg.adaptar_resolucao((0.5, 0.5, 0.5)) is cfg


class TestPontosChave:
    def test_grade_regular_centrada(self):
        geometria = Geometria((10, 10, 10), (1, 1, 1))
        pontos = amostrar_pontos_chave(Mascara.cheia(geometria), (3, 3))
        assert len(pontos) == 27
        assert sorted(set(pontos.posicoes[:, 0])) == [1, 4, 7]

    def test_no_fora_da_mascara_e_deslocado(self):
        geometria = Geometria((9, 9, 3), (1, 1, 1))
        bits = np.zeros(geometria.dims, dtype=bool)
        bits[:, :, 1] = True
        bits[3, 3, 1] = False
        pontos = amostrar_pontos_chave(Mascara(geometria, bits), (2, 1))
        assert np.all(bits[tuple(pontos.posicoes.T)])
        assert len(pontos) == len(np.unique(pontos.posicoes, axis=0))

    def test_mascara_vazia(self):
        geometria = Geometria((4, 4, 4), (1, 1, 1))
        assert len(amostrar_pontos_chave(Mascara.vazia_em(geometria), (2, 2))) == 0


class TestDescritor:
    def test_volume_constante(self):
        vol = Volume(Geometria((6, 6, 6), (1, 1, 1)), np.full((6, 6, 6), 40.0))
        desc = descritor_ssc(vol)
        np.testing.assert_allclose(desc.canais, 1.0)

    def test_variacao_so_em_x(self):
        geometria = Geometria((8, 8, 8), (1, 1, 1))
        dados = np.broadcast_to(np.sin(np.arange(8) * 0.9)[:, None, None] * 100, (8, 8, 8))
        desc = descritor_ssc(Volume(geometria, dados))
        canais = desc.canais.astype(np.float64)
        assert canais.shape == (8, 8, 8, 6)
        np.testing.assert_allclose(canais[..., 2:], 1.0)
        assert np.all(canais[..., :2] <= 1.0)
        assert np.all(canais[..., :2] > 0.0)
        assert canais[..., :2].min() < 0.9


class TestCustosUnarios:
    def test_forca_bruta(self):
        rng = np.random.default_rng(5)
        geometria = Geometria((10, 10, 10), (1, 1, 1))
        ref = descritor_ssc(Volume(geometria, rng.normal(size=geometria.dims) * 100))
        mov = descritor_ssc(Volume(geometria, rng.normal(size=geometria.dims) * 100))
        valido = np.ones(geometria.dims, dtype=bool)
        valido[7:, :, :] = False
        mov = mov.com_validade(valido)

        cfg = ConfigEstagio(resolucao=1.0, raio_busca=(2, 2), dispersao=(1, 1), raio_patch=(1, 1))
        pontos = ConjuntoPontosChave(geometria, [[4, 4, 4], [1, 8, 5]], (1, 1))
        tabela = custos_unarios(ref, mov, pontos, cfg)
        assert tabela.custos.shape == (2, 5, 5, 5)

        a = ref.canais.astype(np.float64)
        b = mov.canais.astype(np.float64)
        for indice, k in enumerate(pontos.posicoes):
            for ia, ib, ic in itertools.product(range(5), repeat=3):
                d = np.array([tabela.eixos[0][ia], tabela.eixos[1][ib], tabela.eixos[2][ic]])
                termos = []
                for p in itertools.product((-1, 0, 1), repeat=3):
                    x = k + np.array(p)
                    y = x + d
                    dentro_x = np.all((x >= 0) & (x < 10))
                    dentro_y = np.all((y >= 0) & (y < 10))
                    if dentro_x and dentro_y and ref.valido[tuple(x)] and mov.valido[tuple(y)]:
                        termos.append(np.abs(a[tuple(x)] - b[tuple(y)]).mean())
                    else:
                        termos.append(1.0)
                assert tabela.custos[indice, ia, ib, ic] == pytest.approx(np.mean(termos), abs=1e-9)

    def test_candidatos_quantizados(self):
        eixos = conjunto_candidatos((16, 5), (3, 2))
        np.testing.assert_array_equal(eixos[0], np.arange(-15, 16, 3))
        np.testing.assert_array_equal(eixos[2], [-4, -2, 0, 2, 4])


class TestRegularizacao:
    # conjuntos de candidatos com |D| <= 5
    EIXOS = [
        (np.array([-1, 0, 1]), np.array([0]), np.array([0])),
        (np.array([0, 1]), np.array([0]), np.array([0, 1])),
        (np.array([-2, -1, 0, 1, 2]), np.array([0]), np.array([0])),
        (np.array([0]), np.array([-1, 0]), np.array([0, 1])),
    ]

    @pytest.mark.parametrize('semente', range(200))
    def test_minimo_global_exaustivo(self, semente):
        rng = np.random.default_rng(semente)
        n_pontos = int(rng.integers(1, 5))
        pontos, tabela = _instancia_aleatoria(rng, n_pontos, self.EIXOS[semente % len(self.EIXOS)])
        arvore = arvore_geradora(pontos)
        regularizacao = float(rng.uniform(0.05, 2.0))

        n_candidatos = tabela.plana.shape[1]
        melhor = min(
            energia(tabela, escolhas, regularizacao, arvore)
            for escolhas in itertools.product(range(n_candidatos), repeat=n_pontos)
        )
        resolvido = regularizar_mst(pontos, tabela, regularizacao, arvore)
        assert energia(tabela, _escolhas(tabela, resolvido), regularizacao, arvore) == pytest.approx(melhor, abs=1e-9)

        sem_regularizacao = regularizar_mst(pontos, tabela, 0.0, arvore)
        np.testing.assert_array_equal(_escolhas(tabela, sem_regularizacao), np.argmin(tabela.plana, axis=1))

    def test_sem_regularizacao_e_argmin(self):
        rng = np.random.default_rng(0)
        eixos = (np.arange(-2, 3), np.arange(-1, 2), np.array([0]))
        pontos, tabela = _instancia_aleatoria(rng, 6, eixos)
        resolvido = regularizar_mst(pontos, tabela, 0.0)
        np.testing.assert_array_equal(_escolhas(tabela, resolvido), np.argmin(tabela.plana, axis=1))

    def test_arvore_gera_todos_os_pontos(self):
        rng = np.random.default_rng(4)
        geometria = Geometria((20, 20, 20), (1, 1, 1))
        posicoes = np.unique(rng.integers(0, 20, size=(50, 3)), axis=0)
        arvore = arvore_geradora(ConjuntoPontosChave(geometria, posicoes))
        assert len(arvore.arestas) == len(posicoes) - len(arvore.raizes)
        assert np.all(arvore.pais[arvore.raizes] == -1)
        assert np.sum(arvore.pais >= 0) == len(posicoes) - len(arvore.raizes)


class TestSimetriaEDensificacao:
    def _pontos(self):
        geometria = Geometria((10, 10, 10), (2.0, 2.0, 2.0))
        pontos = amostrar_pontos_chave(Mascara.cheia(geometria), (3, 3))
        return geometria, pontos.com_deslocamentos(np.tile([2.0, 0.0, -2.0], (len(pontos), 1)))

    def test_campo_reverso_consistente(self):
        geometria, direta = self._pontos()
        filtrada = filtrar_simetria(direta, CampoDeslocamento.constante(geometria, (-2.0, 0.0, 2.0)))
        assert len(filtrada) == len(direta)
        np.testing.assert_allclose(filtrada.erro_consistencia, 0.0, atol=1e-12)

    def test_campo_reverso_inconsistente(self):
        geometria, direta = self._pontos()
        with pytest.raises(ErroFalhaEstagio):
            filtrar_simetria(direta, CampoDeslocamento.constante(geometria, (2.0, 0.0, -2.0)))

    def test_densificacao_de_deslocamento_constante(self):
        geometria, direta = self._pontos()
        campo = densificar(direta, geometria)
        np.testing.assert_allclose(campo.vetores, np.broadcast_to([2.0, 0.0, -2.0], campo.vetores.shape),
                                   atol=1e-12)

    def test_vizinhos_por_distancia_em_mm(self):
        # sigma (1, 1, 10) mm: na métrica escalada os 10 pontos em z ficam mais perto que o ponto em x
        geometria = Geometria((8, 1, 21), (1.0, 1.0, 1.0))
        posicoes = [(3, 0, 0)] + [(0, 0, z) for z in range(11, 21)]
        deslocamentos = [(1.0, 0.0, 0.0)] + [(0.0, 0.0, 0.0)] * 10
        pontos = ConjuntoPontosChave(geometria, posicoes, (1, 10), deslocamentos=deslocamentos)
        campo = densificar(pontos, geometria)

        mundo = np.asarray(posicoes, dtype=np.float64)
        mais_proximos = np.argsort(np.linalg.norm(mundo, axis=1), kind='stable')[:10]
        pesos = np.exp(-0.5 * np.sum((mundo[mais_proximos] / [1.0, 1.0, 10.0]) ** 2, axis=1))
        esperado = pesos @ np.asarray(deslocamentos)[mais_proximos] / pesos.sum()
        assert esperado[0] > 0.0
        np.testing.assert_allclose(campo.vetores[0, 0, 0], esperado, rtol=1e-12, atol=1e-15)


class TestEstagio:
    def test_recupera_translacao(self, fantasma_pequeno, estagios_rapidos):
        volume, verdade = fantasma_pequeno
        translacao = np.array([8.0, 0.0, -4.0])
        movel = deformar(volume, CampoDeslocamento.constante(volume.geometria, -translacao))

        campo = executar_estagio(movel, volume, estagios_rapidos[0])
        interior = verdade.corpo.bits & movel.valido
        mediana = np.median(campo.vetores[interior], axis=0)
        np.testing.assert_allclose(mediana, translacao, atol=2.0)

    def test_pipeline_vazio_e_identidade(self, fantasma_pequeno):
        volume, _ = fantasma_pequeno
        campo = executar_pipeline(volume, volume, [])
        assert np.all(campo.vetores == 0.0)
