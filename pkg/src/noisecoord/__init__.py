"""Coherent noise fields as a coordination signal for crowds, action timing,
spawn placement and territory generation."""

__version__ = "0.1.0"

from .noise import (FieldSampler, NoiseSpec, SeedBundle, derive_substream, fbm, hazard_map,
                    perlin3, phase_map, quantile_map, to_unit)

__all__ = ["FieldSampler", "NoiseSpec", "SeedBundle", "derive_substream", "fbm", "hazard_map",
           "perlin3", "phase_map", "quantile_map", "to_unit", "__version__"]
