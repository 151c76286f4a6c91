"""
nmae_core - Módulo principal do nmae-cli

Pré-treinamento auto-supervisionado por reconstrução mascarada conjunta de
pares de imagens geoespacialmente vizinhas, em escala de bancada.
"""

__version__ = "0.3.0"
