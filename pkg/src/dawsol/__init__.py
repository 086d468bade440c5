"""Weakly supervised object localization trained as pixel-level domain adaptation.

Modules: ``core`` (config and domain types), ``model`` (CAM network), ``assigner``
(target sample assigner), ``losses``, ``metrics``, ``data``, ``trainer`` and ``cli``.
"""

from .core import RunConfig, load_config, seeded_rng

__version__ = "0.1.0"

__all__ = ["RunConfig", "load_config", "seeded_rng", "__version__"]
