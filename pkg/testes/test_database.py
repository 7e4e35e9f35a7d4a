#!/usr/bin/env python
# -*- coding: utf-8 -*-

import pytest

from data import inicializar_banco_dados, listar_registros, obter_registro, salvar_registro

QA = {'lung_dsc': 0.95, 'body_dsc': 0.99, 'success': True, 'folding_fraction': 0.0}
IDENTIDADE = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]]


@pytest.fixture
def banco(tmp_path):
    caminho = str(tmp_path / 'cache' / 'registros.db')
    assert inicializar_banco_dados(caminho)
    return caminho


def test_salvar_e_obter(banco, tmp_path):
    campo = tmp_path / 's1_campo.nii.gz'
    campo.write_bytes(b'campo')
    avisos = [{'erro': True, 'mensagem': 'estágio 2 sem pontos', 'tipo_erro': 'falha_estagio'}]
    assert salvar_registro(banco, 's1', 'abc123', campo, IDENTIDADE, QA, avisos)

    registro = obter_registro(banco, 's1', 'abc123')
    assert registro['caminho_campo'] == str(campo)
    assert registro['transformacao'] == IDENTIDADE
    assert registro['success'] is True
    assert registro['lung_dsc'] == 0.95
    assert registro['avisos'] == avisos


def test_outro_hash_nao_encontra(banco, tmp_path):
    campo = tmp_path / 's1_campo.nii.gz'
    campo.write_bytes(b'campo')
    salvar_registro(banco, 's1', 'abc123', campo, IDENTIDADE, QA, [])
    assert obter_registro(banco, 's1', 'outro') is None
    assert obter_registro(banco, 's2', 'abc123') is None


def test_campo_apagado_invalida_cache(banco, tmp_path):
    campo = tmp_path / 's1_campo.nii.gz'
    campo.write_bytes(b'campo')
    salvar_registro(banco, 's1', 'abc123', campo, IDENTIDADE, QA, [])
    campo.unlink()
    assert obter_registro(banco, 's1', 'abc123') is None


def test_substituir_e_listar(banco, tmp_path):
    campo = tmp_path / 'campo.nii.gz'
    campo.write_bytes(b'campo')
    salvar_registro(banco, 's2', 'h1', campo, IDENTIDADE, QA, [])
    salvar_registro(banco, 's1', 'h1', campo, IDENTIDADE, QA, [])
    salvar_registro(banco, 's1', 'h2', campo, IDENTIDADE, dict(QA, success=False), [])
    salvar_registro(banco, 's1', 'h1', campo, IDENTIDADE, dict(QA, success=False), [])

    assert listar_registros(banco, 'h1') == [('s1', 'h1', 0), ('s2', 'h1', 1)]
    assert len(listar_registros(banco)) == 3


def test_banco_inexistente(tmp_path):
    caminho = str(tmp_path / 'nada.db')
    assert obter_registro(caminho, 's1', 'h') is None
    assert listar_registros(caminho) == []
