"""Servicios estadísticos"""
