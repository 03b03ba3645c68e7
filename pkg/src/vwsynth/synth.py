"""Synthetic replicates from posterior draws, and utility tables.

Quantiles everywhere use linear interpolation between order statistics
(numpy's default, Hyndman-Fan type 7).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import Family, ModelSpec
from .sampler import ParameterDraws

__all__ = [
    "ESTIMANDS",
    "SyntheticBundle",
    "UtilityRow",
    "UtilityTable",
    "estimands",
    "generate",
    "sample_counts",
    "utility_table",
]

ESTIMANDS = ("mean", "median", "q15", "q90")
_Q = {"median": 0.5, "q15": 0.15, "q90": 0.90}


def sample_counts(spec: ModelSpec, param_row: np.ndarray, n: int,
                  rng: np.random.Generator) -> np.ndarray:
    """n independent counts from the model at one natural-scale parameter row."""
    K = spec.n_coef
    mu = np.exp(spec.design(n) @ param_row[:K])
    if spec.family is Family.POISSON:
        return rng.poisson(mu)
    phis = param_row[K:]
    if spec.family is Family.NEGATIVE_BINOMIAL_MIXTURE:
        comp = rng.choice(len(phis), size=n, p=spec.mixture_weights)
        phi = phis[comp]
    else:
        phi = np.full(n, phis[0])
    return rng.negative_binomial(phi, phi / (phi + mu))


@dataclass(frozen=True)
class SyntheticBundle:
    replicates: np.ndarray            # M x n
    source_draw_indices: np.ndarray   # M
    provenance: dict = field(default_factory=dict)

    @property
    def M(self) -> int:
        return self.replicates.shape[0]

    def write_dir(self, directory) -> list[Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = []
        for m, rep in enumerate(self.replicates):
            p = d / f"replicate_{m:03d}.csv"
            p.write_text("".join(f"{int(v)}\n" for v in rep))
            paths.append(p)
        (d / "sources.json").write_text(json.dumps({
            "source_draw_indices": self.source_draw_indices.tolist(),
            "provenance": self.provenance,
        }, indent=2) + "\n")
        return paths

    @classmethod
    def read_dir(cls, directory) -> "SyntheticBundle":
        d = Path(directory)
        files = sorted(d.glob("replicate_*.csv"))
        if not files:
            raise ValueError(f"{d}: no replicate files")
        reps = np.array([np.loadtxt(f, dtype=np.int64, ndmin=1) for f in files])
        meta = d / "sources.json"
        idx = np.arange(len(files))
        prov = {}
        if meta.exists():
            info = json.loads(meta.read_text())
            idx = np.asarray(info["source_draw_indices"])
            prov = info.get("provenance", {})
        return cls(reps, idx, prov)


def generate(spec: ModelSpec, draws: ParameterDraws, n: int, M: int = 20,
             seed: int = 0) -> SyntheticBundle:
    """M synthetic datasets of size n, each from one evenly spaced draw."""
    S = draws.S
    if M < 1 or M > S:
        raise ValueError(f"need 1 <= M <= S (M={M}, S={S})")
    idx = np.round(np.linspace(0, S - 1, M)).astype(int)
    reps = np.empty((M, n), dtype=np.int64)
    for m, s in enumerate(idx):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), m]))
        reps[m] = sample_counts(spec, draws.params[s], n, rng)
    return SyntheticBundle(reps, idx, {"draws": dict(draws.provenance), "seed": int(seed)})


def estimands(data: np.ndarray) -> dict[str, np.ndarray]:
    """Estimands along the last axis of ``data``."""
    data = np.asarray(data, dtype=float)
    out = {"mean": data.mean(axis=-1)}
    for name, q in _Q.items():
        out[name] = np.quantile(data, q, axis=-1)
    return out


@dataclass(frozen=True)
class UtilityRow:
    estimand: str
    variant: str
    point: float
    lo: float
    hi: float


@dataclass(frozen=True)
class UtilityTable:
    rows: tuple[UtilityRow, ...]

    def get(self, estimand: str, variant: str) -> UtilityRow:
        for r in self.rows:
            if r.estimand == estimand and r.variant == variant:
                return r
        raise KeyError((estimand, variant))

    def variants(self) -> list[str]:
        return list(dict.fromkeys(r.variant for r in self.rows))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["estimand", "variant", "point", "lo", "hi"])
            for r in self.rows:
                w.writerow([r.estimand, r.variant, repr(r.point), repr(r.lo), repr(r.hi)])

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump([r.__dict__ for r in self.rows], fh, indent=2)
            fh.write("\n")


def _row(name, variant, point, lo, hi):
    # percentile intervals can miss the point estimate on small or discrete samples
    return UtilityRow(name, variant, float(point), float(min(lo, point)), float(max(hi, point)))


def utility_table(confidential, bundles: dict[str, SyntheticBundle], n_boot: int = 2000,
                  seed: int = 0) -> UtilityTable:
    """Point estimates and 95% intervals for the data and each synthetic variant.

    Synthetic variants: across-replicate mean and 2.5%/97.5% quantiles of the
    per-replicate estimand.  Data: percentile bootstrap with ``n_boot``
    resamples.
    """
    if not bundles:
        raise ValueError("need at least one synthetic bundle")
    x = np.asarray(getattr(confidential, "records", confidential), dtype=float)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x424F]))
    boot = x[rng.integers(0, x.size, size=(n_boot, x.size))]
    point = estimands(x)
    bstats = estimands(boot)
    rows = []
    for name in ESTIMANDS:
        lo, hi = np.quantile(bstats[name], [0.025, 0.975])
        rows.append(_row(name, "Data", point[name], lo, hi))
    for variant, b in bundles.items():
        if b.M == 0:
            raise ValueError(f"bundle {variant!r} is empty")
        per_rep = estimands(b.replicates)
        for name in ESTIMANDS:
            v = per_rep[name]
            lo, hi = np.quantile(v, [0.025, 0.975])
            rows.append(_row(name, variant, v.mean(), lo, hi))
    return UtilityTable(tuple(rows))
