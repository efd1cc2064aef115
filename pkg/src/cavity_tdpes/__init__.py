"""Exact-factorization analysis of a cavity-coupled Shin-Metiu molecule.

Modules build from the bottom up: ``grid`` (meshes and derivatives),
``model`` (potentials and presets), ``bo`` and ``polariton`` (surfaces),
``propagator`` (split-operator dynamics), ``efactor`` (TDPES inversion),
``qcl`` (quasiclassical trajectories) and ``cli`` (command line).
"""

from .model import PRESETS, ModelParams, preset
from .propagator import FS_AU

__version__ = "0.1.0"

__all__ = ["PRESETS", "ModelParams", "preset", "FS_AU", "__version__"]
