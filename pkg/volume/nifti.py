#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
Leitura e escrita do subconjunto NIfTI-1 usado pelo AtlasTorax.

Arquivo único (.nii, opcionalmente gzip), datatype int16 ou float32, 3 dimensões
para volumes e máscaras, 5 dimensões (nx, ny, nz, 1, 3) com intent `vector`
para campos de deslocamento. Matrizes com permutação/espelhamento de eixos são
reordenadas para a ordem interna; matrizes oblíquas são recusadas.
"""

import gzip
import io
import logging
import zlib
from pathlib import Path

import nibabel as nib
import numpy as np
from nibabel import orientations
from nibabel.spatialimages import HeaderDataError

from .erros import ErroEntradaSaida, ErroNifti
from .nucleo import HU_AR, CampoDeslocamento, Geometria, Mascara, Volume

logger = logging.getLogger(__name__)

TAMANHO_CABECALHO = 348
MAGIC_GZIP = b'\x1f\x8b'
SENTINELA_INT16 = -32768
TIPOS_SUPORTADOS = {4: np.int16, 16: np.float32}
INTENT_VETOR = 1007


def _ler_bytes(caminho):
    caminho = Path(caminho)
    try:
        bruto = caminho.read_bytes()
    except OSError as e:
        raise ErroEntradaSaida(f"Não foi possível ler {caminho}: {e}", 'arquivo_inexistente')

    if bruto[:2] == MAGIC_GZIP:
        try:
            bruto = gzip.decompress(bruto)
        except (OSError, EOFError, zlib.error) as e:
            raise ErroNifti(f"{caminho}: gzip corrompido ({e})")
    return bruto


def _ler_cabecalho(bruto, caminho):
    if len(bruto) < TAMANHO_CABECALHO:
        raise ErroNifti(f"{caminho}: arquivo menor que o cabeçalho ({len(bruto)} bytes)")

    try:
        cabecalho = nib.Nifti1Header.from_fileobj(io.BytesIO(bruto), check=False)
    except (HeaderDataError, ValueError) as e:
        raise ErroNifti(f"{caminho}: cabeçalho ilegível ({e})")

    if int(cabecalho['sizeof_hdr']) != TAMANHO_CABECALHO:
        raise ErroNifti(f"{caminho}: sizeof_hdr={int(cabecalho['sizeof_hdr'])}, esperado {TAMANHO_CABECALHO}")
    if cabecalho['magic'].item() != b'n+1':
        raise ErroNifti(f"{caminho}: magic {cabecalho['magic'].item()!r} não é 'n+1' (arquivo único)")

    datatype = int(cabecalho['datatype'])
    if datatype not in TIPOS_SUPORTADOS:
        raise ErroNifti(f"{caminho}: datatype {datatype} não suportado (apenas int16 e float32)",
                        'tipo_nao_suportado')
    return cabecalho


def _afim_do_cabecalho(cabecalho):
    """sform quando sform_code > 0, senão a qform (qoffset)."""
    if int(cabecalho['sform_code']) > 0:
        return cabecalho.get_sform()
    return cabecalho.get_qform()


def _orientacao(afim, caminho):
    """Valida que o bloco linear é uma permutação com sinais e devolve a reorientação."""
    linear = afim[:3, :3]
    escala = np.abs(linear).max()
    nao_nulos = np.abs(linear) > 1e-6 * escala if escala > 0 else np.zeros((3, 3), dtype=bool)
    if not (np.all(nao_nulos.sum(axis=0) == 1) and np.all(nao_nulos.sum(axis=1) == 1)):
        raise ErroNifti(f"{caminho}: matriz de orientação oblíqua não suportada", 'geometria_obliqua')
    return orientations.io_orientation(afim)


def _geometria_reorientada(cabecalho, afim, forma, caminho):
    """Reordena eixos para a ordem interna e devolve (geometria, orientação)."""
    ornt = _orientacao(afim, caminho)
    pixdim = np.asarray(cabecalho['pixdim'][1:4], dtype=np.float64)
    if not np.all(np.isfinite(pixdim) & (pixdim > 0)):
        raise ErroNifti(f"{caminho}: pixdim inválido {tuple(pixdim)}")

    afim_interno = afim @ orientations.inv_ornt_aff(ornt, forma)
    espacamento = np.empty(3)
    for eixo_entrada, (eixo_saida, _) in enumerate(ornt):
        espacamento[int(eixo_saida)] = pixdim[eixo_entrada]
    dims = tuple(int(forma[int(np.flatnonzero(ornt[:, 0] == i)[0])]) for i in range(3))

    geometria = Geometria(dims, tuple(espacamento), tuple(afim_interno[:3, 3]))
    return geometria, ornt


def _reorientar(array, ornt):
    if np.array_equal(ornt, orientations.axcodes2ornt(('R', 'A', 'S'))):
        return array
    return np.ascontiguousarray(orientations.apply_orientation(array, ornt))


def _escala(cabecalho):
    inclinacao = float(cabecalho['scl_slope'])
    intercepto = float(cabecalho['scl_inter'])
    if not np.isfinite(inclinacao) or inclinacao == 0:
        inclinacao = 1.0
    if not np.isfinite(intercepto):
        intercepto = 0.0
    return inclinacao, intercepto


def ler_nifti(caminho):
    """
    Lê um volume escalar 3D.

    Valores int16 iguais a -32768 e valores não finitos tornam-se inválidos
    (armazenados como HU_AR). scl_slope/scl_inter são aplicados.

    Raises:
        ErroEntradaSaida: arquivo inexistente ou ilegível
        ErroNifti: cabeçalho fora do subconjunto suportado
    """
    bruto = _ler_bytes(caminho)
    cabecalho = _ler_cabecalho(bruto, caminho)

    dim = cabecalho['dim']
    if int(dim[0]) != 3:
        raise ErroNifti(f"{caminho}: {int(dim[0])} dimensões, esperado 3", 'dimensoes')

    try:
        cru = np.asarray(cabecalho.raw_data_from_fileobj(io.BytesIO(bruto)))
    except (ValueError, OSError) as e:
        raise ErroNifti(f"{caminho}: payload truncado ({e})")

    if int(cabecalho['datatype']) == 4:
        valido = cru != SENTINELA_INT16
    else:
        valido = np.isfinite(cru)

    inclinacao, intercepto = _escala(cabecalho)
    with np.errstate(invalid='ignore', over='ignore'):
        dados = cru.astype(np.float64) * inclinacao + intercepto
    valido &= np.isfinite(dados)
    dados = np.where(valido, dados, HU_AR)

    geometria, ornt = _geometria_reorientada(cabecalho, _afim_do_cabecalho(cabecalho), cru.shape, caminho)
    volume = Volume(geometria, _reorientar(dados, ornt), _reorientar(valido, ornt))

    logger.debug(f"Lido {caminho}: dims={geometria.dims} espacamento={geometria.espacamento}")
    return volume


def _afim_diagonal(geometria):
    afim = np.diag(list(geometria.espacamento) + [1.0])
    afim[:3, 3] = geometria.origem
    return afim


def _gravar(imagem, caminho):
    """Serializa a imagem; gzip com mtime zero para saídas reprodutíveis."""
    caminho = Path(caminho)
    imagem.set_sform(imagem.affine, code=1)
    imagem.set_qform(imagem.affine, code=1)
    imagem.header.set_xyzt_units('mm')
    bruto = imagem.to_bytes()
    if caminho.suffix == '.gz':
        bruto = gzip.compress(bruto, mtime=0)
    try:
        caminho.parent.mkdir(parents=True, exist_ok=True)
        caminho.write_bytes(bruto)
    except OSError as e:
        raise ErroEntradaSaida(f"Não foi possível gravar {caminho}: {e}")
    logger.debug(f"Gravado {caminho}")


def salvar_nifti(vol, caminho):
    """Grava float32 com sform diagonal (code 1); voxels inválidos viram NaN."""
    dados = np.where(vol.valido, vol.dados, np.nan).astype(np.float32)
    imagem = nib.Nifti1Image(dados, _afim_diagonal(vol.geometria))
    imagem.header.set_data_dtype(np.float32)
    _gravar(imagem, caminho)


def salvar_mascara(mascara, caminho):
    imagem = nib.Nifti1Image(mascara.bits.astype(np.int16), _afim_diagonal(mascara.geometria))
    imagem.header.set_data_dtype(np.int16)
    _gravar(imagem, caminho)


def ler_mascara(caminho):
    """Máscara = voxels válidos com valor > 0.5."""
    vol = ler_nifti(caminho)
    return Mascara(vol.geometria, vol.valido & (vol.dados > 0.5))


def salvar_campo(campo, caminho):
    vetores = campo.vetores.astype(np.float32)[:, :, :, np.newaxis, :]
    imagem = nib.Nifti1Image(vetores, _afim_diagonal(campo.geometria))
    imagem.header.set_data_dtype(np.float32)
    imagem.header.set_intent('vector')
    _gravar(imagem, caminho)


def ler_campo(caminho):
    """
    Lê um campo gravado por `salvar_campo`.

    Campos só são aceitos já na ordem interna de eixos: reorientar vetores
    exigiria trocar também as componentes.
    """
    bruto = _ler_bytes(caminho)
    cabecalho = _ler_cabecalho(bruto, caminho)

    dim = cabecalho['dim']
    if int(dim[0]) != 5 or int(dim[4]) != 1 or int(dim[5]) != 3 or int(cabecalho['intent_code']) != INTENT_VETOR:
        raise ErroNifti(f"{caminho}: campo deve ter forma (nx,ny,nz,1,3) com intent vector", 'dimensoes')
    if int(cabecalho['datatype']) != 16:
        raise ErroNifti(f"{caminho}: campo deve ser float32", 'tipo_nao_suportado')

    try:
        cru = np.asarray(cabecalho.raw_data_from_fileobj(io.BytesIO(bruto)))
    except (ValueError, OSError) as e:
        raise ErroNifti(f"{caminho}: payload truncado ({e})")

    forma = cru.shape[:3]
    geometria, ornt = _geometria_reorientada(cabecalho, _afim_do_cabecalho(cabecalho), forma, caminho)
    if not np.array_equal(ornt, orientations.axcodes2ornt(('R', 'A', 'S'))):
        raise ErroNifti(f"{caminho}: campo com eixos permutados não suportado", 'geometria_obliqua')

    inclinacao, intercepto = _escala(cabecalho)
    vetores = cru.reshape(forma + (3,)).astype(np.float64) * inclinacao + intercepto
    return CampoDeslocamento(geometria, vetores)
