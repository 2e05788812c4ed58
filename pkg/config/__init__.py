"""
Configuration module for the MERK integrators.
Contains environment driven settings.
"""

from .settings import Config

__all__ = ['Config']
