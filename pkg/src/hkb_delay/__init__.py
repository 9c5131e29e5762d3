"""Bifurcation analysis of the delayed HKB coupled-oscillator model."""

from .model import BETA_CAPTION, BETA_KAY, HkbParams, ModeKind

__all__ = ["HkbParams", "ModeKind", "BETA_KAY", "BETA_CAPTION"]
__version__ = "0.1.0"
