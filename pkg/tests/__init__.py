"""
Тесты для volterrafuse.
"""
