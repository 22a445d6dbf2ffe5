"""Núcleo: configuración, logging y excepciones"""
