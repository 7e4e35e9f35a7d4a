#!/usr/bin/env python
# -*- coding: utf-8 -*-

import os

import pytest

from data import analisar_filtro, carregar_manifesto, filtrar_manifesto, selecionar
from volume import ErroConfiguracao, ErroEntradaSaida, ErroSelecaoVazia

CONTEUDO = """scan_id,path,sex,bmi,copd,cac
s1,s1.nii.gz,F,21.5,true,none
s2,s2.nii.gz,M,31,false,severe
s3,/dados/s3.nii.gz,F,,true,moderate
s4,s4.nii.gz,m,24.9,,moderate
s5,s5.nii.gz,,18.5,false,
"""


@pytest.fixture
def manifesto(tmp_path):
    caminho = tmp_path / 'manifesto.csv'
    caminho.write_text(CONTEUDO)
    return carregar_manifesto(caminho)


def _ids(filtrado):
    return list(filtrado['scan_id'])


class TestCarregamento:
    def test_caminhos_relativos_ao_csv(self, manifesto, tmp_path):
        assert manifesto['path'][0] == os.path.join(str(tmp_path.resolve()), 's1.nii.gz')
        assert manifesto['path'][2] == '/dados/s3.nii.gz'

    def test_cabecalho_errado(self, tmp_path):
        caminho = tmp_path / 'ruim.csv'
        caminho.write_text("scan_id,path,sex,bmi,copd\ns1,a,F,20,true\n")
        with pytest.raises(ErroConfiguracao):
            carregar_manifesto(caminho)

    def test_id_repetido(self, tmp_path):
        caminho = tmp_path / 'repetido.csv'
        caminho.write_text("scan_id,path,sex,bmi,copd,cac\ns1,a,F,20,true,0\ns1,b,M,21,false,0\n")
        with pytest.raises(ErroConfiguracao, match='s1'):
            carregar_manifesto(caminho)

    def test_arquivo_inexistente(self, tmp_path):
        with pytest.raises(ErroEntradaSaida) as info:
            carregar_manifesto(tmp_path / 'nada.csv')
        assert info.value.codigo_saida == 2


class TestFiltros:
    def test_sem_filtro(self, manifesto):
        assert len(filtrar_manifesto(manifesto, '')) == 5
        assert analisar_filtro('   ') == []

    def test_faixa_numerica(self, manifesto):
        assert _ids(filtrar_manifesto(manifesto, 'bmi>=18.5 and bmi<=24.9')) == ['s1', 's4', 's5']
        assert _ids(filtrar_manifesto(manifesto, 'bmi > 30')) == ['s2']

    def test_vazio_nunca_satisfaz(self, manifesto):
        assert 's3' not in _ids(filtrar_manifesto(manifesto, 'bmi != 20'))
        assert 's4' not in _ids(filtrar_manifesto(manifesto, 'copd != true'))
        assert 's5' not in _ids(filtrar_manifesto(manifesto, 'sex != F'))

    def test_booleano(self, manifesto):
        assert _ids(filtrar_manifesto(manifesto, 'copd==true')) == ['s1', 's3']
        assert _ids(filtrar_manifesto(manifesto, 'copd == false')) == ['s2', 's5']

    def test_texto_sem_diferenciar_caixa(self, manifesto):
        assert _ids(filtrar_manifesto(manifesto, 'sex==M')) == ['s2', 's4']
        assert _ids(filtrar_manifesto(manifesto, "sex == 'f'")) == ['s1', 's3']

    def test_in(self, manifesto):
        assert _ids(filtrar_manifesto(manifesto, 'cac in (moderate, severe)')) == ['s2', 's3', 's4']
        assert _ids(filtrar_manifesto(manifesto, 'cac in (moderate,severe) and sex==F')) == ['s3']

    def test_analise(self):
        condicoes = analisar_filtro('bmi>=18.5 and cac in (a, "b c")')
        assert condicoes == [('bmi', '>=', [('18.5', False)]), ('cac', 'in', [('a', False), ('b c', True)])]

    @pytest.mark.parametrize('expressao', [
        'bmi >=',
        'bmi 20',
        'bmi>=20 or sex==F',
        '(bmi>=20 and sex==F)',
        'cac in (a, b',
        'sex < F',
        'copd > true',
        '== 3',
    ])
    def test_sintaxe_invalida(self, manifesto, expressao):
        with pytest.raises(ErroConfiguracao) as info:
            filtrar_manifesto(manifesto, expressao)
        assert info.value.codigo_saida == 3

    def test_campo_desconhecido(self, manifesto):
        with pytest.raises(ErroConfiguracao, match='idade'):
            filtrar_manifesto(manifesto, 'idade>40')

    def test_selecao_vazia(self, manifesto):
        with pytest.raises(ErroSelecaoVazia) as info:
            selecionar(manifesto, 'bmi>100')
        assert info.value.codigo_saida == 4
        assert _ids(selecionar(manifesto, 'sex==F')) == ['s1', 's3']
