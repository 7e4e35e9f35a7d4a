#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
Gravação e leitura do pacote de atlas, e figuras de cortes centrais
"""

import json
import logging
import os

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from volume import ErroEntradaSaida, ErroConfiguracao, Volume, ler_nifti, salvar_nifti, verificar_geometria  # noqa: E402

from .construcao import PacoteAtlas  # noqa: E402

logger = logging.getLogger(__name__)

# Constantes
JANELA_PULMAO = (-900.0, -700.0)
ARQUIVOS_ATLAS = {
    'media_hu': 'hu_mean.nii.gz',
    'variancia_hu': 'hu_var.nii.gz',
    'contagem_hu': 'hu_count.nii.gz',
    'media_logjac': 'logjac_mean.nii.gz',
    'variancia_logjac': 'logjac_var.nii.gz',
    'contagem_logjac': 'logjac_count.nii.gz',
}
ARQUIVO_METADADOS = 'atlas.json'


def salvar_atlas(pacote, diretorio):
    """Seis NIfTI mais o arquivo lateral atlas.json (sem carimbo de tempo)."""
    os.makedirs(diretorio, exist_ok=True)
    for atributo, nome in ARQUIVOS_ATLAS.items():
        salvar_nifti(getattr(pacote, atributo), os.path.join(diretorio, nome))

    metadados = dict(pacote.metadados)
    metadados['files'] = dict(sorted(ARQUIVOS_ATLAS.items(), key=lambda item: item[1]))
    with open(os.path.join(diretorio, ARQUIVO_METADADOS), 'w', encoding='utf-8') as arquivo:
        json.dump(metadados, arquivo, indent=2, sort_keys=True, ensure_ascii=False)
        arquivo.write('\n')
    logger.info(f"Atlas gravado em {diretorio} ({metadados.get('cohort_size', '?')} exames)")


def carregar_atlas(diretorio):
    """
    Lê um pacote gravado por `salvar_atlas`.

    Raises:
        ErroEntradaSaida: arquivo ausente
        ErroGeometria: mapas com grades diferentes
    """
    caminho_json = os.path.join(diretorio, ARQUIVO_METADADOS)
    try:
        with open(caminho_json, 'r', encoding='utf-8') as arquivo:
            metadados = json.load(arquivo)
    except FileNotFoundError:
        raise ErroEntradaSaida(f"Atlas sem {ARQUIVO_METADADOS}: {diretorio}", 'arquivo_inexistente')
    except json.JSONDecodeError as e:
        raise ErroConfiguracao(f"{caminho_json}: JSON inválido na linha {e.lineno}, coluna {e.colno}: {e.msg}")

    mapas = {atributo: ler_nifti(os.path.join(diretorio, nome)) for atributo, nome in ARQUIVOS_ATLAS.items()}
    primeiro = mapas['media_hu']
    for atributo, mapa in mapas.items():
        verificar_geometria(primeiro, mapa, f"atlas {atributo}")
    metadados.pop('files', None)
    return PacoteAtlas(**mapas, metadados=metadados)


def _cortes_centrais(vol):
    """Cortes axial, coronal e sagital pelo centro da grade; inválidos viram NaN."""
    dados = np.where(vol.valido, vol.dados, np.nan)
    nx, ny, nz = vol.dims
    return [
        np.rot90(dados[:, :, nz // 2]),
        np.rot90(dados[:, ny // 2, :]),
        np.rot90(dados[nx // 2, :, :]),
    ]


def _montagem(vol, caminho, titulo, janela=None, cmap='gray'):
    cortes = _cortes_centrais(vol)
    if janela is None:
        finitos = np.concatenate([c[np.isfinite(c)] for c in cortes])
        janela = (float(finitos.min()), float(finitos.max())) if finitos.size else (0.0, 1.0)
        if janela[0] == janela[1]:
            janela = (janela[0] - 0.5, janela[1] + 0.5)

    fig, eixos = plt.subplots(1, 3, figsize=(12, 4))
    for eixo, corte, nome in zip(eixos, cortes, ('axial', 'coronal', 'sagital')):
        imagem = eixo.imshow(np.clip(corte, *janela), cmap=cmap, vmin=janela[0], vmax=janela[1])
        eixo.set_title(nome)
        eixo.axis('off')
    fig.colorbar(imagem, ax=list(eixos), shrink=0.8)
    fig.suptitle(titulo)
    fig.savefig(caminho, dpi=100, metadata={'Software': None})
    plt.close(fig)


def _log_variancia(variancia):
    valido = variancia.valido & (variancia.dados > 0)
    return Volume(variancia.geometria, np.log(np.where(valido, variancia.dados, 1.0)), valido)


def exportar_figuras(pacote, diretorio, janela=JANELA_PULMAO, prefixo=''):
    """
    PNGs derivados: média de HU, média recortada na janela de exibição,
    média do log-Jacobiano e log da variância de ambos. Volumes não são alterados.

    Returns:
        Lista dos caminhos gravados
    """
    os.makedirs(diretorio, exist_ok=True)
    figuras = [
        ('hu_mean.png', pacote.media_hu, 'Média de intensidade (HU)', None, 'gray'),
        ('hu_mean_window.png', pacote.media_hu, f'Média de intensidade, janela {janela}', janela, 'gray'),
        ('hu_logvar.png', _log_variancia(pacote.variancia_hu), 'Variância de intensidade (log)', None, 'magma'),
        ('logjac_mean.png', pacote.media_logjac, 'Média do log-Jacobiano', None, 'coolwarm'),
        ('logjac_logvar.png', _log_variancia(pacote.variancia_logjac), 'Variância do log-Jacobiano (log)', None,
         'magma'),
    ]
    caminhos = []
    for nome, vol, titulo, janela_figura, cmap in figuras:
        caminho = os.path.join(diretorio, prefixo + nome)
        _montagem(vol, caminho, titulo, janela_figura, cmap)
        caminhos.append(caminho)
    logger.info(f"{len(caminhos)} figuras gravadas em {diretorio}")
    return caminhos


def exportar_diferenca(media_hu, media_logjac, diretorio, janela=None):
    """Figuras dos mapas de diferença; `janela` só afeta a figura de HU."""
    os.makedirs(diretorio, exist_ok=True)
    caminhos = [os.path.join(diretorio, 'hu_diff.png'), os.path.join(diretorio, 'logjac_diff.png')]
    _montagem(media_hu, caminhos[0], 'Diferença de intensidade média', janela, 'coolwarm')
    _montagem(media_logjac, caminhos[1], 'Diferença do log-Jacobiano médio', None, 'coolwarm')
    return caminhos
