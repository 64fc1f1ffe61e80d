"""
volterrafuse — CLI интерфейс.
"""
