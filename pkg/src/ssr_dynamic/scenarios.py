"""Reference designs and the bundled preset configurations."""

from __future__ import annotations

import math
from importlib import resources

import yaml

from .errors import ValidationError
from .stat_core import DesignParams, norm_cdf

PRESETS = ("cpz_audit", "jt_vs_lr", "roi", "timing")

# schizophrenia trial: sd 7.5, target effect 1.6, interim after 208 of 442
SCHIZ_SIGMA = 7.5
SCHIZ_GAMMA = 0.25 / (4.0 * SCHIZ_SIGMA**2)
SCHIZ_LAMBDA1 = 0.65 * SCHIZ_GAMMA
SCHIZ_LAMBDA2 = 0.62 * SCHIZ_GAMMA
TIMING_N1 = (80, 110, 140, 170, 200)
ROI_V = 100e6
ROI_COSTS = (40e3, 70e3, 100e3)
ROI_PRIORS = {"a": (0.5, 0.5), "b": (2.0 / 3.0, 1.0 / 3.0)}


def schizophrenia_design(n1: float = 208) -> DesignParams:
    return DesignParams(SCHIZ_SIGMA, 1.6, n1, 442, 884, alpha=0.025)


def cpz_design() -> DesignParams:
    """Promising-zone example: K = 0.145, interim at 140, sizes 280..420, equal weights, c = 1.96.

    Only ``K`` matters for the geometry, so ``sigma = 1`` and ``theta = 0.29``.
    """
    w = math.sqrt(0.5)
    return DesignParams(1.0, 0.29, 140, 280, 420, alpha=1.0 - norm_cdf(1.96), w1=w, w2=w)


def load_preset(name: str) -> dict:
    if name not in PRESETS:
        raise ValidationError(f"unknown preset {name!r}; valid presets: {', '.join(PRESETS)}")
    text = resources.files(__package__).joinpath("presets", f"{name}.yaml").read_text()
    return yaml.safe_load(text)
