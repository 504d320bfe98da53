"""Positive-matrix walk laboratory - Source Module"""

__version__ = "0.3.0"
