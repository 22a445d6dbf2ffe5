"""Esquemas pydantic de entrada y salida"""
