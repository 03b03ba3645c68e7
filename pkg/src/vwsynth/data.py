"""Built-in data generators and count-CSV ingestion."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass

import numpy as np

from .model import Dataset

__all__ = [
    "DataError",
    "GeneratorSpec",
    "SDR_PROFILE",
    "read_counts_csv",
    "simulate",
    "simulate_nb_mixture",
    "simulate_sdr_like",
    "write_counts_csv",
]


class DataError(ValueError):
    """Input data could not be parsed into a valid count dataset."""


# public summaries of the 2017 SDR salary sample (n = 1000)
SDR_PROFILE = {"mean": 107609.0, "median": 95000.0, "sd": 69718.0, "max": 509000}


@dataclass(frozen=True)
class GeneratorSpec:
    """A built-in generator: ``poisson``, ``nb_mixture`` or ``sdr_like``."""

    kind: str = "nb_mixture"
    n: int = 1000
    mu: float = 100.0
    weights: tuple[float, ...] = (0.2, 0.8)
    mus: tuple[float, ...] = (100.0, 100.0)
    phis: tuple[float, ...] = (5.0, 20.0)

    def __post_init__(self):
        if self.kind not in ("poisson", "nb_mixture", "sdr_like"):
            raise ValueError(f"unknown generator {self.kind!r}")
        if self.n < 2:
            raise ValueError("generator n must be >= 2")
        if self.kind == "nb_mixture":
            if not len(self.weights) == len(self.mus) == len(self.phis) >= 1:
                raise ValueError("mixture weights, mus and phis must have equal length")
            if abs(sum(self.weights) - 1) > 1e-9:
                raise ValueError("mixture weights must sum to 1")
        for name in ("weights", "mus", "phis"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def simulate_nb_mixture(weights, mus, phis, n: int, rng: np.random.Generator) -> np.ndarray:
    weights, mus, phis = (np.asarray(v, dtype=float) for v in (weights, mus, phis))
    comp = rng.choice(weights.size, size=n, p=weights)
    phi, mu = phis[comp], mus[comp]
    return rng.negative_binomial(phi, phi / (phi + mu))


def simulate_sdr_like(n: int, rng: np.random.Generator) -> np.ndarray:
    """Salary-like skewed counts matching the SDR sample's mean and sd.

    A negative binomial with those two moments has its median near $93k and
    is truncated to the reported range by redrawing values above $509k.
    """
    mu, sd = SDR_PROFILE["mean"], SDR_PROFILE["sd"]
    phi = mu * mu / (sd * sd - mu)
    out = rng.negative_binomial(phi, phi / (phi + mu), size=n)
    while (bad := out > SDR_PROFILE["max"]).any():
        out[bad] = rng.negative_binomial(phi, phi / (phi + mu), size=int(bad.sum()))
    return out


def simulate(gen: GeneratorSpec, rng: np.random.Generator) -> Dataset:
    if gen.kind == "poisson":
        x = rng.poisson(gen.mu, size=gen.n)
    elif gen.kind == "nb_mixture":
        x = simulate_nb_mixture(gen.weights, gen.mus, gen.phis, gen.n, rng)
    else:
        x = simulate_sdr_like(gen.n, rng)
    return Dataset(x)


def read_counts_csv(path, column: str | int | None = None) -> Dataset:
    """Read counts from a CSV.

    A single-column file is read headerless.  Wider files need ``column``: a
    header name (first row is then a header) or a 0-based index.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: empty input")
    width = max(len(r) for r in rows)
    if width > 1 and column is None:
        raise DataError(f"{path}: {width} columns; select one with --column")
    idx = 0
    if column is not None:
        if isinstance(column, int) or str(column).isdigit():
            idx = int(column)
        else:
            header = [c.strip() for c in rows[0]]
            if column not in header:
                raise DataError(f"{path}: no column named {column!r}")
            idx = header.index(column)
            rows = rows[1:]
    values = []
    for lineno, r in enumerate(rows, 1):
        try:
            v = float(r[idx])
        except (IndexError, ValueError):
            raise DataError(f"{path}: row {lineno} is not a count: {r!r}") from None
        if not math.isfinite(v) or v < 0 or v != int(v):
            raise DataError(f"{path}: row {lineno} is not a non-negative integer: {r[idx]!r}")
        values.append(int(v))
    try:
        return Dataset(np.array(values, dtype=np.int64))
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


def write_counts_csv(path, dataset: Dataset) -> None:
    with open(path, "w") as fh:
        fh.writelines(f"{int(v)}\n" for v in dataset.records)
