"""
AtlasTorax - Registro multiestágio de TC de tórax e atlas de coorte com dados faltantes
Versão 2026.1.0
"""
