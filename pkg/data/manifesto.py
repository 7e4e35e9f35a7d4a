#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
Manifesto de coorte (CSV) e mini-linguagem de filtros de subgrupo.

Gramática dos filtros:

    expressao := condicao ('and' condicao)*
    condicao  := campo OP valor | campo 'in' '(' valor (',' valor)* ')'
    OP        := == != < <= > >=

Exemplos: ``bmi>=18.5 and bmi<=24.9``, ``copd==true``,
``cac in (moderate,severe)``. Campos vazios nunca satisfazem uma condição.
"""

import logging
import operator
import re
from pathlib import Path

import numpy as np
import pandas as pd

from volume import ErroConfiguracao, ErroEntradaSaida, ErroSelecaoVazia

logger = logging.getLogger(__name__)

# Constantes
COLUNAS = ['scan_id', 'path', 'sex', 'bmi', 'copd', 'cac']
VERDADEIROS = {'true', '1', 'yes', 'y', 'sim'}
FALSOS = {'false', '0', 'no', 'n', 'nao', 'não'}

OPERADORES = {
    '==': operator.eq,
    '!=': operator.ne,
    '<': operator.lt,
    '<=': operator.le,
    '>': operator.gt,
    '>=': operator.ge,
}

_TOKEN = re.compile(r"""\s*(?:
    (?P<op><=|>=|==|!=|<|>)
  | (?P<abre>\()
  | (?P<fecha>\))
  | (?P<virgula>,)
  | '(?P<aspas_simples>[^']*)'
  | "(?P<aspas_duplas>[^"]*)"
  | (?P<palavra>[^\s()<>=!,'"]+)
)""", re.VERBOSE)


def carregar_manifesto(caminho):
    """
    Lê o manifesto; `path` relativo é resolvido a partir do diretório do CSV.

    Raises:
        ErroEntradaSaida: arquivo ilegível
        ErroConfiguracao: cabeçalho diferente do esperado ou scan_id repetido/vazio
    """
    caminho = Path(caminho)
    try:
        manifesto = pd.read_csv(caminho, dtype=str, skipinitialspace=True)
    except FileNotFoundError:
        raise ErroEntradaSaida(f"Manifesto não encontrado: {caminho}", 'arquivo_inexistente')
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ErroConfiguracao(f"Manifesto ilegível {caminho}: {e}")

    if list(manifesto.columns) != COLUNAS:
        raise ErroConfiguracao(
            f"Cabeçalho do manifesto deve ser exatamente {','.join(COLUNAS)}; recebido {','.join(manifesto.columns)}"
        )
    if manifesto['scan_id'].isna().any() or manifesto['path'].isna().any():
        raise ErroConfiguracao(f"{caminho}: scan_id e path são obrigatórios em todas as linhas")

    manifesto['scan_id'] = manifesto['scan_id'].str.strip()
    repetidos = manifesto['scan_id'][manifesto['scan_id'].duplicated()].unique()
    if len(repetidos):
        raise ErroConfiguracao(f"{caminho}: scan_id repetido: {', '.join(repetidos)}")

    base = caminho.resolve().parent
    manifesto['path'] = [str(p if Path(p).is_absolute() else base / p) for p in manifesto['path'].str.strip()]
    logger.info(f"Manifesto {caminho}: {len(manifesto)} exames")
    return manifesto


def _tokens(expressao):
    posicao = 0
    tokens = []
    texto = expressao.strip()
    while posicao < len(texto):
        casamento = _TOKEN.match(texto, posicao)
        if not casamento or casamento.end() == posicao:
            raise ErroConfiguracao(f"Filtro inválido perto de {texto[posicao:]!r}")
        tipo = casamento.lastgroup
        valor = casamento.group(tipo)
        if tipo in ('aspas_simples', 'aspas_duplas'):
            tipo = 'texto'
        tokens.append((tipo, valor))
        posicao = casamento.end()
    return tokens


class _Analisador:
    """Analisador descendente da mini-linguagem; produz uma lista de condições."""

    def __init__(self, expressao):
        self.expressao = expressao
        self.tokens = _tokens(expressao)
        self.posicao = 0

    def _proximo(self, esperado=None):
        if self.posicao >= len(self.tokens):
            raise ErroConfiguracao(f"Filtro incompleto: {self.expressao!r}")
        tipo, valor = self.tokens[self.posicao]
        if esperado is not None and tipo != esperado:
            raise ErroConfiguracao(f"Filtro {self.expressao!r}: esperado {esperado}, encontrado {valor!r}")
        self.posicao += 1
        return tipo, valor

    def _olhar(self):
        return self.tokens[self.posicao] if self.posicao < len(self.tokens) else (None, None)

    def _valor(self):
        tipo, valor = self._proximo()
        if tipo not in ('palavra', 'texto'):
            raise ErroConfiguracao(f"Filtro {self.expressao!r}: valor esperado, encontrado {valor!r}")
        return valor, tipo == 'texto'

    def _condicao(self):
        _, campo = self._proximo('palavra')
        tipo, valor = self._olhar()
        if tipo == 'palavra' and valor.lower() == 'in':
            self._proximo()
            self._proximo('abre')
            valores = [self._valor()]
            while self._olhar()[0] == 'virgula':
                self._proximo()
                valores.append(self._valor())
            self._proximo('fecha')
            return campo, 'in', valores
        _, op = self._proximo('op')
        return campo, op, [self._valor()]

    def analisar(self):
        condicoes = [self._condicao()]
        while self.posicao < len(self.tokens):
            _, valor = self._proximo('palavra')
            if valor.lower() != 'and':
                raise ErroConfiguracao(f"Filtro {self.expressao!r}: esperado 'and', encontrado {valor!r}")
            condicoes.append(self._condicao())
        return condicoes


def analisar_filtro(expressao):
    """Lista de condições (campo, operador, [(valor, entre_aspas)])."""
    if not expressao or not expressao.strip():
        return []
    return _Analisador(expressao).analisar()


def _como_numero(texto):
    try:
        return float(texto)
    except ValueError:
        return None


def _como_booleano(texto):
    texto = texto.strip().lower()
    if texto in VERDADEIROS:
        return True
    if texto in FALSOS:
        return False
    return None


def _mascara_condicao(coluna, op, valores):
    texto = coluna.astype(object).where(coluna.notna(), '').astype(str).str.strip()
    presente = texto != ''

    literais = [v for v, _ in valores]
    numericos = [None if aspas else _como_numero(v) for v, aspas in valores]
    booleanos = [None if aspas else _como_booleano(v) for v, aspas in valores]

    if all(b is not None for b in booleanos) and all(v.lower() in ('true', 'false') for v in literais):
        if op not in ('==', '!=', 'in'):
            raise ErroConfiguracao(f"Operador {op} não se aplica a valores booleanos")
        convertida = texto.map(_como_booleano)
        alvo = booleanos
    elif all(n is not None for n in numericos):
        convertida = pd.to_numeric(texto.where(presente), errors='coerce')
        alvo = numericos
    else:
        if op not in ('==', '!=', 'in'):
            raise ErroConfiguracao(f"Operador {op} exige valor numérico, recebido {literais[0]!r}")
        convertida = texto.str.lower()
        alvo = [v.lower() for v in literais]

    definida = presente & convertida.notna()
    if op == 'in':
        resultado = convertida.isin(alvo)
    else:
        resultado = OPERADORES[op](convertida, alvo[0])
    return np.asarray(definida & resultado.astype(bool))


def filtrar_manifesto(manifesto, expressao):
    """
    Linhas do manifesto que satisfazem o filtro (todas se o filtro for vazio).

    Raises:
        ErroConfiguracao: sintaxe inválida ou campo inexistente
    """
    selecao = np.ones(len(manifesto), dtype=bool)
    for campo, op, valores in analisar_filtro(expressao):
        if campo not in manifesto.columns:
            raise ErroConfiguracao(f"Campo desconhecido no filtro: {campo!r}")
        selecao &= _mascara_condicao(manifesto[campo], op, valores)
    filtrado = manifesto[selecao]
    logger.info(f"Filtro {expressao!r}: {len(filtrado)} de {len(manifesto)} exames")
    return filtrado


def selecionar(manifesto, expressao):
    """Como `filtrar_manifesto`, mas seleção vazia é erro."""
    filtrado = filtrar_manifesto(manifesto, expressao)
    if filtrado.empty:
        raise ErroSelecaoVazia(f"Nenhum exame satisfaz o filtro {expressao!r}")
    return filtrado
