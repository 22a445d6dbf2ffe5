"""
demlab: estadística para experimentación digital
"""

__version__ = "1.0.0"
