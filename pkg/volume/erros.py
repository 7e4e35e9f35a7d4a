# -*- coding: utf-8 -*-

"""
Hierarquia de exceções do AtlasTorax.

Cada erro carrega um `tipo_erro` estável e o código de saída que a linha de
comando devolve quando a exceção chega até ela.
"""


class ErroAtlas(Exception):
    """Erro base. `tipo_erro` identifica a causa; `codigo_saida` é o código da CLI."""

    codigo_saida = 1
    tipo_erro_padrao = 'erro'

    def __init__(self, mensagem, tipo_erro=None):
        super().__init__(mensagem)
        self.mensagem = mensagem
        self.tipo_erro = tipo_erro or self.tipo_erro_padrao

    def como_dict(self):
        """Formato usado nos registros de falha por exame."""
        return {
            'erro': True,
            'mensagem': self.mensagem,
            'tipo_erro': self.tipo_erro,
        }


class ErroEntradaSaida(ErroAtlas):
    codigo_saida = 2
    tipo_erro_padrao = 'entrada_saida'


class ErroConfiguracao(ErroAtlas):
    codigo_saida = 3
    tipo_erro_padrao = 'configuracao'


class ErroSelecaoVazia(ErroAtlas):
    codigo_saida = 4
    tipo_erro_padrao = 'selecao_vazia'


class ErroGeometria(ErroAtlas):
    codigo_saida = 5
    tipo_erro_padrao = 'geometria'


class ErroEntradaDegenerada(ErroAtlas):
    codigo_saida = 6
    tipo_erro_padrao = 'entrada_degenerada'


class ErroNifti(ErroEntradaSaida):
    """Arquivo NIfTI fora do subconjunto suportado.

    tipo_erro: cabecalho_malformado, tipo_nao_suportado, dimensoes ou geometria_obliqua.
    """

    tipo_erro_padrao = 'cabecalho_malformado'


class ErroSubdeterminado(ErroEntradaDegenerada):
    tipo_erro_padrao = 'subdeterminado'


class ErroFalhaEstagio(ErroEntradaDegenerada):
    tipo_erro_padrao = 'falha_estagio'
