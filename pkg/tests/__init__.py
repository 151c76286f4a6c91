"""
Testes automatizados para nmae-cli
"""
