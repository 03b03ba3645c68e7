"""Monte Carlo study of local-to-global contraction of Lipschitz bounds.

Each replicate simulates a fresh database, runs the unweighted fit and the
weighted + re-weighted pipeline on it, and records both database bounds.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import GeneratorSpec, simulate
from .model import Family, ModelSpec
from .pipeline import SchemeConfig, run_scheme, substream
from .reweight import ReweightConfig
from .sampler import SamplerConfig

__all__ = ["MCConfig", "MCReport", "run_mc", "summary"]

logger = logging.getLogger(__name__)

MC_SAMPLER = SamplerConfig(n_chains=2, n_warmup=500, n_keep=500)


@dataclass(frozen=True)
class MCConfig:
    generator: GeneratorSpec = field(default_factory=lambda: GeneratorSpec(kind="poisson", mu=100.0))
    family: Family | None = None
    R: int = 100
    scheme: SchemeConfig = field(default_factory=SchemeConfig)
    reweight: ReweightConfig = field(default_factory=ReweightConfig)
    sampler: SamplerConfig = MC_SAMPLER
    seed: int = 0
    replicate_seeds: tuple[int, ...] | None = None
    jobs: int = 1

    def __post_init__(self):
        if self.R < 2:
            raise ValueError("R must be >= 2")
        if self.replicate_seeds is not None and len(self.replicate_seeds) != self.R:
            raise ValueError("replicate_seeds must have R entries")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")

    @property
    def synth_family(self) -> Family:
        if self.family is not None:
            return Family(self.family)
        return Family.POISSON if self.generator.kind == "poisson" else Family.NEGATIVE_BINOMIAL

    def seeds(self) -> list[int]:
        if self.replicate_seeds is not None:
            return [int(s) for s in self.replicate_seeds]
        return [substream(self.seed, "mc", r) for r in range(self.R)]

    def to_dict(self) -> dict:
        return {
            "generator": self.generator.to_dict(),
            "family": self.synth_family.value,
            "R": self.R,
            "scheme": self.scheme.to_dict(),
            "reweight": self.reweight.to_dict(),
            "sampler": self.sampler.to_dict(),
            "seed": self.seed,
            "replicate_seeds": None if self.replicate_seeds is None else list(self.replicate_seeds),
        }


def summary(values) -> dict:
    v = np.asarray(values, dtype=float)
    lo, hi, mean = float(v.min()), float(v.max()), float(v.mean())
    return {
        "min": lo,
        "max": hi,
        "mean": mean,
        "sd": float(v.std(ddof=1)) if v.size > 1 else 0.0,
        "spread": hi - lo,
        "relative_spread": (hi - lo) / mean if mean > 0 else float("nan"),
    }


@dataclass(frozen=True)
class MCReport:
    unweighted: np.ndarray
    final: np.ndarray
    converged: np.ndarray
    config: dict

    @property
    def summary(self) -> dict:
        return {"unweighted": summary(self.unweighted), "final": summary(self.final)}

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "summary": self.summary,
            "unweighted": self.unweighted.tolist(),
            "final": self.final.tolist(),
            "converged": self.converged.tolist(),
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["replicate", "unweighted", "final", "converged"])
            for r, (u, f, c) in enumerate(zip(self.unweighted, self.final, self.converged)):
                w.writerow([r, repr(float(u)), repr(float(f)), bool(c)])

    def violin_rows(self) -> list[dict]:
        rows = [{"replicate": r, "variant": "Unweighted", "bound": float(b)}
                for r, b in enumerate(self.unweighted)]
        rows += [{"replicate": r, "variant": f"{self.config['scheme']['scheme']}_final", "bound": float(b)}
                 for r, b in enumerate(self.final)]
        return rows


def _replicate(config: MCConfig, rep_seed: int) -> tuple[float, float, bool]:
    rng = np.random.default_rng(substream(rep_seed, "data"))
    dataset = simulate(config.generator, rng)
    spec = ModelSpec(config.synth_family)
    run = run_scheme(spec, dataset, config.scheme, config.sampler, config.reweight, seed=rep_seed)
    return run.unweighted.report.overall, run.final.report.overall, run.converged


def run_mc(config: MCConfig) -> MCReport:
    """Run all replicates; non-converged replicates are flagged, not dropped."""
    seeds = config.seeds()
    if config.jobs == 1:
        results = [_replicate(config, s) for s in seeds]
    else:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(_replicate, [config] * len(seeds), seeds))
    unw, fin, conv = (np.array(col) for col in zip(*results))
    if not conv.all():
        logger.warning("%d of %d replicates did not converge", int((~conv).sum()), conv.size)
    return MCReport(unw.astype(float), fin.astype(float), conv.astype(bool), config.to_dict())
