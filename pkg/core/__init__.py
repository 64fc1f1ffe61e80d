"""
volterrafuse — ядро: автоэнкодер Вольтерры с самовыражающим слоем для
мультимодальной кластеризации подпространств.
"""

__version__ = "0.1.0"
