"""Whole-slide melanoma diagnosis and prognosis pipeline."""

__version__ = "0.1.0"
