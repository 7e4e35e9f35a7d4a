#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
Índice SQLite dos registros por exame do AtlasTorax

Cada linha aponta para o campo total gravado em disco e guarda a afim e a
linha de QA, chaveada por (scan_id, hash da configuração). Só o processo
principal escreve no banco.
"""

import json
import logging
import os
import sqlite3

logger = logging.getLogger(__name__)


def _get_connection(caminho_banco):
    """Cria e retorna uma conexão com o banco de dados."""
    return sqlite3.connect(caminho_banco)


def _execute_query(caminho_banco, query, params=(), fetch=None, commit=False):
    """
    Executa uma consulta SQL genérica.

    Args:
        caminho_banco (str): Arquivo do banco.
        query (str): A consulta SQL a ser executada.
        params (tuple): Parâmetros para a consulta.
        fetch (str, optional): 'one' para fetchone(), 'all' para fetchall().
        commit (bool, optional): True para confirmar a transação.

    Returns:
        Resultado(s) da consulta se fetch for especificado, senão True/False
        indicando sucesso. None em caso de erro com fetch.
    """
    conn = None
    result = None
    success = False
    try:
        conn = _get_connection(caminho_banco)
        cursor = conn.cursor()
        cursor.execute(query, params)

        if fetch == 'one':
            result = cursor.fetchone()
        elif fetch == 'all':
            result = cursor.fetchall()
        elif commit:
            conn.commit()
        success = True

    except sqlite3.Error as e:
        logger.error(f"Erro ao executar query: {query} - Params: {params} - Erro: {e}")
        success = False
        result = None
    finally:
        if conn:
            conn.close()

    if fetch:
        return result
    return success


def inicializar_banco_dados(caminho_banco):
    """Garante que o diretório, o banco e a tabela de registros existam."""
    diretorio = os.path.dirname(caminho_banco)
    if diretorio and not os.path.exists(diretorio):
        logger.info(f"Criando diretório {diretorio}")
        os.makedirs(diretorio)

    return _execute_query(caminho_banco, '''
    CREATE TABLE IF NOT EXISTS registros (
        scan_id TEXT NOT NULL,
        hash_config TEXT NOT NULL,
        caminho_campo TEXT NOT NULL,
        transformacao TEXT NOT NULL,
        lung_dsc REAL NOT NULL,
        body_dsc REAL NOT NULL,
        success INTEGER NOT NULL,
        folding_fraction REAL NOT NULL,
        avisos TEXT NOT NULL,
        PRIMARY KEY (scan_id, hash_config)
    )
    ''')


def obter_registro(caminho_banco, scan_id, hash_config):
    """
    Busca um registro em cache.

    Returns:
        dict com as colunas, ou None se ausente (ou se o arquivo do campo sumiu)
    """
    if not os.path.exists(caminho_banco):
        return None
    linha = _execute_query(
        caminho_banco,
        '''SELECT caminho_campo, transformacao, lung_dsc, body_dsc, success, folding_fraction, avisos
           FROM registros WHERE scan_id = ? AND hash_config = ?''',
        (scan_id, hash_config),
        fetch='one',
    )
    if not linha:
        return None

    caminho_campo = linha[0]
    if not os.path.exists(caminho_campo):
        logger.warning(f"Cache de {scan_id} aponta para arquivo ausente {caminho_campo}; ignorando")
        return None
    return {
        'caminho_campo': caminho_campo,
        'transformacao': json.loads(linha[1]),
        'lung_dsc': linha[2],
        'body_dsc': linha[3],
        'success': bool(linha[4]),
        'folding_fraction': linha[5],
        'avisos': json.loads(linha[6]),
    }


def salvar_registro(caminho_banco, scan_id, hash_config, caminho_campo, transformacao, qa, avisos):
    """
    Insere ou substitui o registro de um exame.

    Args:
        transformacao: matriz 4x4 como lista de listas
        qa: dict com lung_dsc, body_dsc, success, folding_fraction
        avisos: lista de dicionários serializáveis

    Returns:
        bool: True se a gravação foi confirmada
    """
    sucesso = _execute_query(
        caminho_banco,
        '''INSERT OR REPLACE INTO registros
           (scan_id, hash_config, caminho_campo, transformacao, lung_dsc, body_dsc, success, folding_fraction, avisos)
           VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)''',
        (
            scan_id,
            hash_config,
            str(caminho_campo),
            json.dumps(transformacao),
            float(qa['lung_dsc']),
            float(qa['body_dsc']),
            int(bool(qa['success'])),
            float(qa['folding_fraction']),
            json.dumps(avisos),
        ),
        commit=True,
    )
    if sucesso:
        logger.debug(f"Registro de {scan_id} ({hash_config[:8]}) salvo no cache")
    return sucesso


def listar_registros(caminho_banco, hash_config=None):
    """Lista (scan_id, hash_config, success) dos registros em cache."""
    if not os.path.exists(caminho_banco):
        return []
    if hash_config is None:
        return _execute_query(caminho_banco, 'SELECT scan_id, hash_config, success FROM registros ORDER BY scan_id',
                              fetch='all') or []
    return _execute_query(
        caminho_banco,
        'SELECT scan_id, hash_config, success FROM registros WHERE hash_config = ? ORDER BY scan_id',
        (hash_config,),
        fetch='all',
    ) or []
