"""
Registro não rígido por campos de correspondência de pontos-chave.

Cada estágio amostra pontos-chave na região efetiva, compara descritores de
autossimilaridade em um conjunto discreto de deslocamentos, regulariza as
escolhas sobre a árvore geradora mínima do grafo k-NN dos pontos (programação
dinâmica min-soma exata), descarta correspondências inconsistentes com o
registro reverso e interpola o resultado em um campo denso.
"""

import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components, minimum_spanning_tree
from sklearn.neighbors import NearestNeighbors

from volume import (
    CampoDeslocamento,
    ErroConfiguracao,
    ErroEntradaDegenerada,
    ErroFalhaEstagio,
    Geometria,
    Mascara,
    amostrar_mascara,
    reamostrar_espacamento,
    verificar_geometria,
)

from .campos import amostrar_campo, compor, deformar, reamostrar_campo

logger = logging.getLogger(__name__)

# Constantes
VIZINHOS_GRAFO = 8
VIZINHOS_DENSIFICACAO = 10
SIGMA_DESCRITOR = 1.0
FATOR_LIMIAR_SIMETRIA = 0.5
NOS_POR_BLOCO = 32
CONSULTAS_POR_BLOCO = 200_000
OFFSETS_SSC = ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1))

# (resolução mm, raio de busca, dispersão, raio do patch, regularização)
TABELA_ESTAGIOS = (
    (2.0, (60, 30), (8, 4), (6, 4), 1.0),
    (2.0, (32, 16), (7, 3), (6, 4), 0.7),
    (2.0, (10, 6), (6, 3), (3, 2), 0.5),
    (1.0, (20, 10), (10, 5), (6, 4), 0.1),
)


def _par(valor, nome, minimo):
    """(plano, através do plano); escalar vale para os dois."""
    try:
        if np.ndim(valor) == 0:
            par = (int(valor), int(valor))
        else:
            par = tuple(int(v) for v in valor)
    except (TypeError, ValueError) as e:
        raise ErroConfiguracao(f"{nome} inválido: {valor!r} ({e})")
    if len(par) != 2 or min(par) < minimo:
        raise ErroConfiguracao(f"{nome} deve ser um par de inteiros >= {minimo}: {valor!r}")
    return par


def _resolucao(valor):
    try:
        tripla = (float(valor),) * 3 if np.ndim(valor) == 0 else tuple(float(v) for v in valor)
    except (TypeError, ValueError) as e:
        raise ErroConfiguracao(f"Resolução inválida: {valor!r} ({e})")
    if len(tripla) != 3 or not all(math.isfinite(v) and v > 0 for v in tripla):
        raise ErroConfiguracao(f"Resolução deve ter 3 componentes positivas: {valor!r}")
    return tripla


def por_eixo(par):
    """Expande (plano, z) para (x, y, z)."""
    return np.array([par[0], par[0], par[1]])


def _arredondar(valor):
    return int(math.floor(valor + 0.5))


@dataclass(frozen=True)
class ConfigEstagio:
    """
    Parâmetros de um estágio (pares em voxels do estágio: plano, através do plano).

    `quantizacao` None usa max(1, floor(raio_busca / 8)) por eixo.
    """

    resolucao: tuple = (2.0, 2.0, 2.0)
    raio_busca: tuple = (60, 30)
    dispersao: tuple = (8, 4)
    raio_patch: tuple = (6, 4)
    regularizacao: float = 1.0
    quantizacao: tuple = None

    def __post_init__(self):
        object.__setattr__(self, 'resolucao', _resolucao(self.resolucao))
        object.__setattr__(self, 'raio_busca', _par(self.raio_busca, 'raio_busca', 0))
        object.__setattr__(self, 'dispersao', _par(self.dispersao, 'dispersao', 1))
        object.__setattr__(self, 'raio_patch', _par(self.raio_patch, 'raio_patch', 0))
        if self.quantizacao is not None:
            object.__setattr__(self, 'quantizacao', _par(self.quantizacao, 'quantizacao', 1))

        try:
            regularizacao = float(self.regularizacao)
        except (TypeError, ValueError):
            raise ErroConfiguracao(f"Regularização inválida: {self.regularizacao!r}")
        if not math.isfinite(regularizacao) or regularizacao < 0:
            raise ErroConfiguracao(f"Regularização deve ser >= 0: {self.regularizacao}")
        object.__setattr__(self, 'regularizacao', regularizacao)

        if any(r < d for r, d in zip(self.raio_busca, self.dispersao)):
            raise ErroConfiguracao(
                f"raio_busca {self.raio_busca} deve ser >= dispersao {self.dispersao} em cada eixo"
            )

    @property
    def passo(self):
        if self.quantizacao is not None:
            return self.quantizacao
        return tuple(max(1, r // 8) for r in self.raio_busca)

    def adaptar_resolucao(self, espacamento_referencia):
        """
        Nunca trabalha em grade mais fina que a referência: a resolução é limitada
        ao espaçamento da referência e os parâmetros em voxels são reescalados
        para manter a extensão em mm.
        """
        efetiva = tuple(max(r, e) for r, e in zip(self.resolucao, espacamento_referencia))
        if np.allclose(efetiva, self.resolucao):
            return self

        fator = (self.resolucao[0] / efetiva[0], self.resolucao[2] / efetiva[2])

        def escalar(par, minimo):
            return tuple(max(minimo, _arredondar(p * f)) for p, f in zip(par, fator))

        dispersao = escalar(self.dispersao, 1)
        raio = tuple(max(r, d) for r, d in zip(escalar(self.raio_busca, 0), dispersao))
        adaptada = replace(
            self,
            resolucao=efetiva,
            raio_busca=raio,
            dispersao=dispersao,
            raio_patch=escalar(self.raio_patch, 0),
            quantizacao=None if self.quantizacao is None else escalar(self.quantizacao, 1),
        )
        logger.info(f"Estágio de {self.resolucao} mm executado em {efetiva} mm: "
                    f"raio {adaptada.raio_busca}, dispersão {adaptada.dispersao}")
        return adaptada

    def como_dict(self):
        return {
            'resolution_mm': list(self.resolucao),
            'search_radius': list(self.raio_busca),
            'dispersion': list(self.dispersao),
            'patch_radius': list(self.raio_patch),
            'regularization': self.regularizacao,
            'quantization': None if self.quantizacao is None else list(self.quantizacao),
        }


def _estagio_da_tabela(indice):
    resolucao, raio, dispersao, patch, regularizacao = TABELA_ESTAGIOS[min(indice, len(TABELA_ESTAGIOS) - 1)]
    return ConfigEstagio(resolucao, raio, dispersao, patch, regularizacao)


def estagios_otimizados():
    """Configuração otimizada de quatro estágios."""
    return [_estagio_da_tabela(i) for i in range(len(TABELA_ESTAGIOS))]


def estagio_unico():
    """Linha de base de estágio único: só o primeiro estágio da configuração otimizada."""
    return [_estagio_da_tabela(0)]


CHAVES_JSON = {
    'resolution_mm': 'resolucao',
    'search_radius': 'raio_busca',
    'dispersion': 'dispersao',
    'patch_radius': 'raio_patch',
    'regularization': 'regularizacao',
    'quantization': 'quantizacao',
}


def estagios_de_lista(lista):
    """Objetos JSON -> ConfigEstagio; chaves ausentes usam o padrão do mesmo índice."""
    if not isinstance(lista, list):
        raise ErroConfiguracao("Lista de estágios deve ser um array JSON")

    estagios = []
    for indice, item in enumerate(lista):
        if not isinstance(item, dict):
            raise ErroConfiguracao(f"Estágio {indice}: esperado objeto JSON, recebido {type(item).__name__}")
        desconhecidas = set(item) - set(CHAVES_JSON)
        if desconhecidas:
            raise ErroConfiguracao(f"Estágio {indice}: chaves desconhecidas {sorted(desconhecidas)}")
        parametros = {CHAVES_JSON[chave]: valor for chave, valor in item.items()}
        estagios.append(replace(_estagio_da_tabela(indice), **parametros))
    return estagios


def carregar_estagios(caminho):
    try:
        with open(caminho, 'r', encoding='utf-8') as arquivo:
            lista = json.load(arquivo)
    except OSError as e:
        raise ErroConfiguracao(f"Não foi possível ler {caminho}: {e}")
    except json.JSONDecodeError as e:
        raise ErroConfiguracao(f"{caminho}: JSON inválido na linha {e.lineno}, coluna {e.colno}: {e.msg}")
    estagios = estagios_de_lista(lista)
    logger.info(f"{len(estagios)} estágio(s) carregado(s) de {caminho}")
    return estagios


def salvar_estagios(estagios, caminho):
    Path(caminho).write_text(json.dumps([e.como_dict() for e in estagios], indent=2), encoding='utf-8')


@dataclass(frozen=True, eq=False)
class ConjuntoPontosChave:
    """Pontos-chave (índices de voxel) na grade do estágio e seus resultados."""

    geometria: Geometria
    posicoes: np.ndarray
    dispersao: tuple = (1, 1)
    centroide: np.ndarray = None
    deslocamentos: np.ndarray = None
    erro_consistencia: np.ndarray = None

    def __post_init__(self):
        posicoes = np.asarray(self.posicoes, dtype=np.int64).reshape(-1, 3)
        object.__setattr__(self, 'posicoes', posicoes)
        for nome, largura in (('deslocamentos', 3), ('erro_consistencia', None)):
            valor = getattr(self, nome)
            if valor is None:
                continue
            valor = np.asarray(valor, dtype=np.float64)
            if largura:
                valor = valor.reshape(-1, largura)
            if len(valor) != len(posicoes):
                raise ErroConfiguracao(f"{nome} com {len(valor)} entradas para {len(posicoes)} pontos")
            object.__setattr__(self, nome, valor)

    def __len__(self):
        return len(self.posicoes)

    def mundo(self):
        return self.geometria.indices_para_mundo(self.posicoes)

    def com_deslocamentos(self, deslocamentos):
        return replace(self, deslocamentos=deslocamentos)

    def selecionar(self, selecao, erro_consistencia=None):
        return replace(
            self,
            posicoes=self.posicoes[selecao],
            deslocamentos=None if self.deslocamentos is None else self.deslocamentos[selecao],
            erro_consistencia=erro_consistencia,
        )


def amostrar_pontos_chave(mascara, dispersao):
    """
    Grade regular de pontos com espaçamento (d_plano, d_plano, d_z), centrada na
    caixa envolvente da máscara. Nós fora da máscara vão para o voxel da máscara
    mais próximo se ele estiver a no máximo meio espaçamento em cada eixo.
    """
    dispersao = _par(dispersao, 'dispersao', 1)
    bits = mascara.bits
    if not bits.any():
        return ConjuntoPontosChave(mascara.geometria, np.empty((0, 3)), dispersao)

    ocupados = np.argwhere(bits)
    inicio, fim = ocupados.min(axis=0), ocupados.max(axis=0) + 1
    passo = por_eixo(dispersao)
    extensao = fim - inicio
    quantidade = np.maximum(1, extensao // passo)
    fase = (extensao - (quantidade - 1) * passo - 1) // 2

    eixos = [inicio[a] + fase[a] + np.arange(quantidade[a]) * passo[a] for a in range(3)]
    nos = np.stack(np.meshgrid(*eixos, indexing='ij'), axis=-1).reshape(-1, 3)

    caixa = tuple(slice(i, f) for i, f in zip(inicio, fim))
    bits_caixa = bits[caixa]
    locais = nos - inicio
    dentro = bits_caixa[tuple(locais.T)]

    if not dentro.all():
        # índices do voxel da máscara mais próximo de cada posição da caixa
        _, mais_proximo = ndimage.distance_transform_edt(~bits_caixa, return_indices=True)
        fora = locais[~dentro]
        alvo = mais_proximo[:, fora[:, 0], fora[:, 1], fora[:, 2]].T
        aceito = np.all(np.abs(alvo - fora) <= passo / 2.0, axis=1)
        locais = np.concatenate([locais[dentro], alvo[aceito]])

    posicoes = np.unique(locais + inicio, axis=0)
    logger.debug(f"{len(posicoes)} pontos-chave amostrados (dispersão {dispersao})")
    return ConjuntoPontosChave(mascara.geometria, posicoes, dispersao, centroide=ocupados.mean(axis=0))


@dataclass(frozen=True, eq=False)
class DescritorSSC:
    """Seis canais de autossimilaridade por voxel, em [0, 1]."""

    geometria: Geometria
    canais: np.ndarray
    valido: np.ndarray

    def com_validade(self, valido):
        return replace(self, valido=np.asarray(valido, dtype=bool))


def descritor_ssc(vol):
    """
    Canal i: diferença quadrática entre o volume e sua cópia deslocada de um
    voxel em ±x, ±y ou ±z (borda replicada), suavizada por gaussiana sigma=1;
    normalizada pela média dos canais + eps e mapeada por exp(-c).
    """
    dados = vol.imputado()
    amplitude = float(dados.max() - dados.min())
    epsilon = 1e-6 * amplitude ** 2 if amplitude > 0 else 1.0

    nx, ny, nz = dados.shape
    acolchoado = np.pad(dados, 1, mode='edge')
    canais = np.empty(dados.shape + (len(OFFSETS_SSC),))
    for canal, (ox, oy, oz) in enumerate(OFFSETS_SSC):
        deslocado = acolchoado[1 + ox:1 + ox + nx, 1 + oy:1 + oy + ny, 1 + oz:1 + oz + nz]
        canais[..., canal] = ndimage.gaussian_filter((dados - deslocado) ** 2, SIGMA_DESCRITOR, mode='nearest')

    canais = np.exp(-canais / (canais.mean(axis=-1, keepdims=True) + epsilon))
    return DescritorSSC(vol.geometria, canais.astype(np.float32), vol.valido.copy())


@dataclass(frozen=True, eq=False)
class TabelaCustos:
    """Custos (K, n_x, n_y, n_z) sobre a grade de deslocamentos candidatos (voxels)."""

    custos: np.ndarray
    eixos: tuple
    espacamento: tuple

    @property
    def plana(self):
        return self.custos.reshape(len(self.custos), -1)

    @property
    def eixos_mm(self):
        return [np.asarray(e, dtype=np.float64) * h for e, h in zip(self.eixos, self.espacamento)]

    @property
    def deslocamentos_mm(self):
        """Candidatos (|D|, 3) em mm, na ordem da tabela plana."""
        grade = np.meshgrid(*self.eixos_mm, indexing='ij')
        return np.stack([g.ravel() for g in grade], axis=-1)


def conjunto_candidatos(raio_busca, passo):
    """Caixa anisotrópica de deslocamentos quantizados, em voxels, por eixo."""
    eixos = []
    for raio, q in zip(por_eixo(raio_busca), por_eixo(passo)):
        m = int(raio) // int(q)
        eixos.append(np.arange(-m, m + 1, dtype=np.int64) * int(q))
    return tuple(eixos)


def custos_unarios(desc_ref, desc_mov, pontos, cfg, raio_busca=None):
    """
    custo(k, d) = média, no patch de raio `raio_patch` em torno de k, da
    diferença absoluta média dos canais entre ref(k + p) e mov(k + p + d).
    Voxels do patch fora da grade ou da região válida de qualquer lado valem 1.
    """
    verificar_geometria(desc_ref, desc_mov, "custos unários")
    verificar_geometria(desc_ref, pontos, "custos unários")

    eixos = conjunto_candidatos(raio_busca or cfg.raio_busca, cfg.passo)
    forma_candidatos = tuple(len(e) for e in eixos)
    custos = np.ones((len(pontos),) + forma_candidatos)
    tabela = TabelaCustos(custos, eixos, desc_ref.geometria.espacamento)
    if len(pontos) == 0:
        return tabela

    dims = np.asarray(desc_ref.geometria.dims)
    raio_patch = por_eixo(cfg.raio_patch)
    # só a caixa que contém os patches de todos os pontos
    inicio = np.maximum(pontos.posicoes.min(axis=0) - raio_patch, 0)
    fim = np.minimum(pontos.posicoes.max(axis=0) + raio_patch + 1, dims)
    caixa = tuple(slice(i, f) for i, f in zip(inicio, fim))
    ref = desc_ref.canais[caixa].astype(np.float64)
    ref_valido = desc_ref.valido[caixa]

    margem = np.array([np.abs(e).max() for e in eixos])
    mov = np.pad(desc_mov.canais.astype(np.float64), [(m, m) for m in margem] + [(0, 0)])
    mov_valido = np.pad(desc_mov.valido, [(m, m) for m in margem], constant_values=False)

    locais = tuple((pontos.posicoes - inicio).T)
    tamanho = fim - inicio
    for a, dx in enumerate(eixos[0]):
        for b, dy in enumerate(eixos[1]):
            for c, dz in enumerate(eixos[2]):
                origem = inicio + margem + (dx, dy, dz)
                janela = tuple(slice(o, o + t) for o, t in zip(origem, tamanho))
                diferenca = np.abs(ref - mov[janela]).mean(axis=-1)
                diferenca[~(ref_valido & mov_valido[janela])] = 1.0
                media = ndimage.uniform_filter(diferenca, size=2 * raio_patch + 1, mode='constant', cval=1.0)
                custos[:, a, b, c] = media[locais]

    return tabela


@dataclass(frozen=True, eq=False)
class ArvoreGeradora:
    """Floresta geradora mínima do grafo k-NN dos pontos, enraizada por componente."""

    arestas: np.ndarray
    comprimentos: np.ndarray
    pais: np.ndarray
    profundidade: np.ndarray
    raizes: np.ndarray


def _arestas_knn(pontos):
    k = min(VIZINHOS_GRAFO, len(pontos) - 1)
    _, vizinhos = NearestNeighbors(n_neighbors=k + 1).fit(pontos).kneighbors(pontos)
    origem = np.repeat(np.arange(len(pontos)), k + 1)
    destino = vizinhos.ravel()
    distintos = origem != destino
    pares = np.sort(np.stack([origem[distintos], destino[distintos]], axis=1), axis=1)
    return np.unique(pares, axis=0)


def arvore_geradora(pontos_chave):
    """
    Árvore geradora mínima do grafo dos 8 vizinhos mais próximos (mm).

    Empates de comprimento são decididos pela ordem lexicográfica dos índices:
    o peso passado à MST é a posição da aresta na ordem (comprimento, i, j).
    Cada componente é enraizado no ponto mais próximo do centróide da máscara.
    """
    n = len(pontos_chave)
    pontos = pontos_chave.mundo()
    if n == 0:
        raise ErroEntradaDegenerada("Árvore geradora de conjunto vazio", 'sem_pontos')

    if n > 1:
        pares = _arestas_knn(pontos)
        comprimento = np.linalg.norm(pontos[pares[:, 0]] - pontos[pares[:, 1]], axis=1)
        ordem = np.lexsort((pares[:, 1], pares[:, 0], np.round(comprimento, 9)))
        posto = np.empty(len(pares))
        posto[ordem] = np.arange(1, len(pares) + 1)
        grafo = coo_matrix((posto, (pares[:, 0], pares[:, 1])), shape=(n, n)).tocsr()
        mst = minimum_spanning_tree(grafo).tocoo()
        arestas = np.sort(np.stack([mst.row, mst.col], axis=1), axis=1).astype(np.int64)
        arestas = arestas[np.lexsort((arestas[:, 1], arestas[:, 0]))]
    else:
        arestas = np.empty((0, 2), dtype=np.int64)

    comprimentos = np.linalg.norm(pontos[arestas[:, 0]] - pontos[arestas[:, 1]], axis=1)
    adjacencia = coo_matrix(
        (np.ones(2 * len(arestas)), (np.r_[arestas[:, 0], arestas[:, 1]], np.r_[arestas[:, 1], arestas[:, 0]])),
        shape=(n, n),
    ).tocsr()

    centroide = pontos_chave.centroide
    if centroide is None:
        centroide = pontos_chave.posicoes.mean(axis=0)
    distancia_centro = np.linalg.norm(pontos - pontos_chave.geometria.indices_para_mundo(centroide), axis=1)

    pais = np.full(n, -1, dtype=np.int64)
    profundidade = np.zeros(n, dtype=np.int64)
    n_componentes, rotulos = connected_components(adjacencia, directed=False)
    raizes = []
    for componente in range(n_componentes):
        membros = np.flatnonzero(rotulos == componente)
        raiz = int(membros[np.argmin(distancia_centro[membros])])
        raizes.append(raiz)
        ordem, predecessores = breadth_first_order(adjacencia, raiz, directed=False, return_predecessors=True)
        for no in ordem[1:]:
            pais[no] = predecessores[no]
            profundidade[no] = profundidade[pais[no]] + 1

    if n_componentes > 1:
        logger.debug(f"Grafo k-NN desconexo: floresta com {n_componentes} árvores")
    return ArvoreGeradora(arestas, comprimentos, pais, profundidade, np.asarray(raizes, dtype=np.int64))


def energia(tabela, escolhas, regularizacao, arvore):
    """Σ custo(k, d_k) + λ Σ_(k,j) ||d_k - d_j||² / ||x_k - x_j|| sobre as arestas da árvore."""
    escolhas = np.asarray(escolhas, dtype=np.int64)
    unario = tabela.plana[np.arange(len(escolhas)), escolhas].sum()
    if len(arvore.arestas) == 0:
        return float(unario)
    d = tabela.deslocamentos_mm[escolhas]
    i, j = arvore.arestas.T
    par = np.sum(np.sum((d[i] - d[j]) ** 2, axis=1) / arvore.comprimentos)
    return float(unario + regularizacao * par)


def _mensagens(custos, pesos, eixos_mm):
    """
    min_d' [C(d') + w ||d' - d||²] para cada d, separável por eixo.

    custos: (n, n_x, n_y, n_z); pesos: (n,)
    """
    mensagem = custos
    w = pesos.reshape(-1, 1, 1, 1, 1)
    for eixo, valores in enumerate(eixos_mm):
        distancia2 = (valores[:, np.newaxis] - valores[np.newaxis, :]) ** 2
        movido = np.moveaxis(mensagem, eixo + 1, -1)
        candidatos = movido[..., :, np.newaxis] + w * distancia2
        mensagem = np.moveaxis(candidatos.min(axis=-2), -1, eixo + 1)
    return mensagem


def _min_soma(pontos_chave, tabela, regularizacao, arvore):
    n = len(pontos_chave)
    acumulado = np.array(tabela.custos, dtype=np.float64)
    pontos = pontos_chave.mundo()

    pesos = np.zeros(n)
    filhos = arvore.pais >= 0
    pesos[filhos] = regularizacao / np.linalg.norm(pontos[filhos] - pontos[arvore.pais[filhos]], axis=1)

    eixos_mm = tabela.eixos_mm
    # subida: folhas primeiro, um nível de profundidade por vez
    for nivel in range(int(arvore.profundidade.max()), 0, -1):
        nos = np.flatnonzero(arvore.profundidade == nivel)
        for inicio in range(0, len(nos), NOS_POR_BLOCO):
            bloco = nos[inicio:inicio + NOS_POR_BLOCO]
            np.add.at(acumulado, arvore.pais[bloco], _mensagens(acumulado[bloco], pesos[bloco], eixos_mm))

    # descida: escolha da raiz, depois cada filho dado o pai
    plano = acumulado.reshape(n, -1)
    candidatos = tabela.deslocamentos_mm
    escolhas = np.zeros(n, dtype=np.int64)
    escolhas[arvore.raizes] = np.argmin(plano[arvore.raizes], axis=1)
    for nivel in range(1, int(arvore.profundidade.max()) + 1):
        nos = np.flatnonzero(arvore.profundidade == nivel)
        escolhido_pai = candidatos[escolhas[arvore.pais[nos]]]
        distancia2 = np.sum((candidatos[np.newaxis, :, :] - escolhido_pai[:, np.newaxis, :]) ** 2, axis=-1)
        escolhas[nos] = np.argmin(plano[nos] + pesos[nos, np.newaxis] * distancia2, axis=1)
    return escolhas


def regularizar_mst(pontos_chave, tabela, regularizacao, arvore=None):
    """
    Minimizador exato de Σ custo + λ Σ ||Δd||²/||Δx|| sobre a árvore geradora.

    Com λ = 0 cada ponto fica com o argmin do próprio custo (primeiro índice).
    """
    if len(pontos_chave) == 0:
        return pontos_chave.com_deslocamentos(np.empty((0, 3)))

    if regularizacao == 0 or len(pontos_chave) == 1:
        escolhas = np.argmin(tabela.plana, axis=1)
    else:
        if arvore is None:
            arvore = arvore_geradora(pontos_chave)
        escolhas = _min_soma(pontos_chave, tabela, regularizacao, arvore)

    return pontos_chave.com_deslocamentos(tabela.deslocamentos_mm[escolhas])


def filtrar_simetria(direta, campo_reverso):
    """
    Mantém os pontos com ||d_k + b(x_k + d_k)|| <= 0.5 * dispersão no plano (mm).

    Raises:
        ErroFalhaEstagio: nenhum ponto sobrevive
    """
    if direta.deslocamentos is None:
        raise ErroConfiguracao("Filtro de simetria exige deslocamentos resolvidos")

    destino = direta.mundo() + direta.deslocamentos
    erro = np.linalg.norm(direta.deslocamentos + amostrar_campo(campo_reverso, destino), axis=1)
    limiar = FATOR_LIMIAR_SIMETRIA * direta.dispersao[0] * direta.geometria.espacamento[0]
    aceitos = erro <= limiar

    if not aceitos.any():
        raise ErroFalhaEstagio(f"Todos os {len(direta)} pontos-chave falharam no filtro de simetria (limiar {limiar} mm)")
    logger.info(f"Filtro de simetria: {int(aceitos.sum())}/{len(direta)} pontos mantidos")
    return direta.selecionar(aceitos, erro[aceitos])


def densificar(pontos_chave, geometria):
    """
    Média gaussiana dos 10 pontos mais próximos (distância euclidiana em mm),
    com peso exp(-½ Σ (Δ/σ)²), sigma = dispersão em mm por eixo.
    Onde todos os pesos se anulam vale o deslocamento do ponto mais próximo.
    """
    if len(pontos_chave) == 0 or pontos_chave.deslocamentos is None:
        raise ErroEntradaDegenerada("Densificação sem pontos-chave resolvidos", 'sem_pontos')

    sigma = por_eixo(pontos_chave.dispersao) * np.asarray(pontos_chave.geometria.espacamento)
    deslocamentos = pontos_chave.deslocamentos
    mundo = pontos_chave.mundo()
    k = min(VIZINHOS_DENSIFICACAO, len(pontos_chave))
    vizinhanca = NearestNeighbors(n_neighbors=k).fit(mundo)

    consulta = geometria.grade_mundo().reshape(-1, 3)
    vetores = np.empty_like(consulta)
    for inicio in range(0, len(consulta), CONSULTAS_POR_BLOCO):
        bloco = slice(inicio, inicio + CONSULTAS_POR_BLOCO)
        _, indices = vizinhanca.kneighbors(consulta[bloco])
        diferenca = (consulta[bloco][:, np.newaxis, :] - mundo[indices]) / sigma
        pesos = np.exp(-0.5 * np.sum(diferenca ** 2, axis=-1))
        soma = pesos.sum(axis=1)
        com_peso = soma > np.finfo(np.float64).tiny
        media = np.einsum('nk,nkc->nc', pesos, deslocamentos[indices])
        vetores[bloco] = np.where(
            com_peso[:, np.newaxis],
            media / np.where(com_peso, soma, 1.0)[:, np.newaxis],
            deslocamentos[indices[:, 0]],
        )

    return CampoDeslocamento(geometria, vetores.reshape(geometria.dims + (3,)))


def _registrar_subestagio(movel, ref_estagio, cfg, raio_busca, mascara_estagio):
    """Um passe completo na grade do estágio; devolve o campo na mesma grade."""
    geometria = ref_estagio.geometria
    mov_estagio = reamostrar_espacamento(movel, cfg.resolucao)
    verificar_geometria(mov_estagio, ref_estagio, "subestágio")

    efetiva = ref_estagio.valido & mov_estagio.valido
    if mascara_estagio is not None:
        efetiva &= mascara_estagio
    pontos = amostrar_pontos_chave(Mascara(geometria, efetiva), cfg.dispersao)
    if len(pontos) == 0:
        raise ErroFalhaEstagio("Região efetiva de registro vazia")
    logger.info(f"Subestágio raio {raio_busca}: {len(pontos)} pontos-chave")

    desc_ref = descritor_ssc(ref_estagio).com_validade(efetiva)
    desc_mov = descritor_ssc(mov_estagio).com_validade(efetiva)
    arvore = arvore_geradora(pontos)

    direta = regularizar_mst(pontos, custos_unarios(desc_ref, desc_mov, pontos, cfg, raio_busca),
                             cfg.regularizacao, arvore)
    reversa = regularizar_mst(pontos, custos_unarios(desc_mov, desc_ref, pontos, cfg, raio_busca),
                              cfg.regularizacao, arvore)

    filtrada = filtrar_simetria(direta, densificar(reversa, geometria))
    return densificar(filtrada, geometria)


def _subestagio_seguro(movel, ref_estagio, cfg, raio_busca, mascara_estagio, geometria_saida, avisos, nome):
    try:
        campo = _registrar_subestagio(movel, ref_estagio, cfg, raio_busca, mascara_estagio)
    except ErroFalhaEstagio as e:
        logger.warning(f"Subestágio {nome} falhou ({e.mensagem}); usando incremento nulo")
        if avisos is not None:
            avisos.append({**e.como_dict(), 'subestagio': nome})
        return CampoDeslocamento.zeros(geometria_saida)
    return reamostrar_campo(campo, geometria_saida)


def executar_estagio(movel, referencia, cfg, mascara=None, avisos=None):
    """
    Estágio com dois subestágios: raio completo, depois raio/2 (teto) sobre o
    móvel já deformado. Devolve f_b ∘ f_a na grade da referência.

    Args:
        movel: Volume na grade da referência
        referencia: Volume de referência
        cfg: ConfigEstagio
        mascara: Mascara opcional que restringe ainda mais os pontos-chave
        avisos: lista opcional que recebe um registro por subestágio que falhou
    """
    verificar_geometria(movel, referencia, "estágio")
    cfg = cfg.adaptar_resolucao(referencia.espacamento)
    ref_estagio = reamostrar_espacamento(referencia, cfg.resolucao)
    mascara_estagio = None
    if mascara is not None:
        mascara_estagio = amostrar_mascara(mascara, ref_estagio.geometria.grade_mundo())

    raio_a = cfg.raio_busca
    raio_b = tuple(math.ceil(r / 2) for r in raio_a)
    cfg = replace(cfg, quantizacao=cfg.passo)

    campo_a = _subestagio_seguro(movel, ref_estagio, cfg, raio_a, mascara_estagio,
                                 referencia.geometria, avisos, 'a')
    campo_b = _subestagio_seguro(deformar(movel, campo_a), ref_estagio, cfg, raio_b, mascara_estagio,
                                 referencia.geometria, avisos, 'b')
    return compor(campo_b, campo_a)


def executar_pipeline(movel, referencia, estagios, mascara=None, avisos=None):
    """
    Estágios em sequência; antes de cada um o móvel é deformado pelo campo
    acumulado, o que atualiza a região efetiva. Devolve o campo total na grade
    da referência.
    """
    verificar_geometria(movel, referencia, "pipeline")
    total = None
    for indice, cfg in enumerate(estagios):
        logger.info(f"Estágio {indice + 1}/{len(estagios)}: resolução {cfg.resolucao} mm, "
                    f"raio {cfg.raio_busca}, dispersão {cfg.dispersao}, λ={cfg.regularizacao}")
        atual = movel if total is None else deformar(movel, total)
        campo = executar_estagio(atual, referencia, cfg, mascara, avisos)
        total = campo if total is None else compor(campo, total)

    if total is None:
        return CampoDeslocamento.zeros(referencia.geometria)
    return total
