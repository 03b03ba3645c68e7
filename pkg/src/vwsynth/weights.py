"""Record-level weight schemes: LW, CW, SW (and the unit vector).

Weights are confidential: they encode which records are risky and must not
be released alongside the synthetic data.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field

import numpy as np

from .model import Dataset
from .sampler import weights_ident

__all__ = [
    "Scheme",
    "WeightVector",
    "cw_default_radius",
    "cw_risks",
    "cw_weights",
    "lw_risks",
    "lw_weights",
    "sw_weights",
    "unit_weights",
]


class Scheme(str, enum.Enum):
    UNIT = "Unit"
    LW = "LW"
    CW = "CW"
    SW = "SW"
    REWEIGHTED = "Reweighted"


@dataclass(frozen=True)
class WeightVector:
    alphas: np.ndarray
    scheme: Scheme
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        a = np.array(self.alphas, dtype=float)
        if a.ndim != 1:
            raise ValueError("alphas must be one-dimensional")
        if not np.all(np.isfinite(a)) or np.any(a < 0) or np.any(a > 1):
            raise ValueError("every alpha must lie in [0, 1]")
        a.setflags(write=False)
        object.__setattr__(self, "alphas", a)
        object.__setattr__(self, "scheme", Scheme(self.scheme))

    def __len__(self):
        return self.alphas.size

    @property
    def ident(self) -> str:
        return weights_ident(self.alphas)

    def to_csv(self, path) -> None:
        echo = json.dumps(self.config, sort_keys=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "alpha", "scheme", "config"])
            for i, a in enumerate(self.alphas):
                w.writerow([i, repr(float(a)), self.scheme.value, echo])

    @classmethod
    def from_csv(cls, path) -> "WeightVector":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{path}: no weights")
        rows.sort(key=lambda r: int(r["index"]))
        return cls(
            np.array([float(r["alpha"]) for r in rows]),
            Scheme(rows[0]["scheme"]),
            json.loads(rows[0]["config"]),
        )


def _affine(risk: np.ndarray, c: float, g: float) -> np.ndarray:
    if c < 0:
        raise ValueError("scale c must be non-negative")
    return np.clip(c * (1.0 - risk) + g, 0.0, 1.0)


def unit_weights(n: int) -> WeightVector:
    return WeightVector(np.ones(n), Scheme.UNIT)


def lw_risks(record_bounds) -> np.ndarray:
    """Min-max rescale of by-record bounds; constant bounds give zero risk."""
    f = np.asarray(record_bounds, dtype=float)
    lo, hi = f.min(), f.max()
    if hi == lo:
        return np.zeros_like(f)
    return (f - lo) / (hi - lo)


def lw_weights(report, c: float = 1.0, g: float = 0.0) -> WeightVector:
    """Lipschitz-weighted scheme from a report on *unweighted* draws."""
    n = report.record_bounds.size
    prov_w = report.provenance.get("weights")
    if prov_w is not None and prov_w != weights_ident(np.ones(n)):
        raise ValueError("LW weights need a Lipschitz report computed with alpha = 1")
    alphas = _affine(lw_risks(report.record_bounds), c, g)
    return WeightVector(alphas, Scheme.LW, {"c": c, "g": g, "thresh": report.thresh})


def cw_default_radius(dataset: Dataset) -> float:
    sd = float(np.std(dataset.records, ddof=1))
    return 0.05 * sd if sd > 0 else 1.0


def cw_risks(dataset: Dataset, radius: float) -> np.ndarray:
    """Fraction of the *other* records lying outside ``[y_i - r, y_i + r]``."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    y = dataset.records.astype(float)
    s = np.sort(y)
    inside = np.searchsorted(s, y + radius, side="right") - np.searchsorted(s, y - radius, side="left")
    others = dataset.n - 1
    return (others - (inside - 1)) / others


def cw_weights(dataset: Dataset, c: float = 1.0, g: float = 0.0,
               radius: float | None = None) -> WeightVector:
    r = cw_default_radius(dataset) if radius is None else float(radius)
    alphas = _affine(cw_risks(dataset, r), c, g)
    return WeightVector(alphas, Scheme.CW, {"c": c, "g": g, "radius": r})


def sw_weights(delta_unweighted: float, delta_target: float, n: int) -> WeightVector:
    """Scalar weight ``delta_target / delta_unweighted`` on every record."""
    if not 0 < delta_target <= delta_unweighted:
        raise ValueError("need 0 < delta_target <= delta_unweighted")
    a = delta_target / delta_unweighted
    return WeightVector(np.full(n, a), Scheme.SW,
                        {"delta_unweighted": delta_unweighted, "delta_target": delta_target})
