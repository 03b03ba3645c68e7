"""End-to-end synthesizer runs: unweighted fit, weights, weighted fit, re-weight.

All randomness is derived from one user seed through named substreams, so a
stage can be rerun on its own and reproduce the same numbers.
"""

from __future__ import annotations

import logging
import zlib
from dataclasses import asdict, dataclass, replace

import numpy as np

from .lipschitz import LipschitzReport, lipschitz_report
from .model import Dataset, ModelSpec
from .reweight import ReweightConfig, ReweightOutcome, reweight_with_refit
from .sampler import ParameterDraws, SamplerConfig, sample_pseudo_posterior
from .weights import WeightVector, cw_weights, lw_weights, sw_weights, unit_weights

__all__ = ["Fit", "SchemeConfig", "SchemeRun", "fit", "run_scheme", "scheme_weights", "substream"]

logger = logging.getLogger(__name__)


def substream(seed: int, *names: str | int) -> int:
    """A 64-bit seed for the named substream of ``seed``."""
    keys = [int(seed)] + [n if isinstance(n, int) else zlib.crc32(n.encode()) for n in names]
    return int(np.random.SeedSequence(keys).generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class SchemeConfig:
    scheme: str = "LW"
    c: float = 1.0
    g: float = 0.0
    radius: float | None = None
    thresh: float = 1.0
    sw_target: float | None = None
    sw_match: str = "LW"

    def __post_init__(self):
        if self.scheme not in ("LW", "CW", "SW"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.sw_match not in ("LW", "CW"):
            raise ValueError("sw_match must be LW or CW")
        if self.c < 0:
            raise ValueError("c must be non-negative")
        if self.radius is not None and self.radius <= 0:
            raise ValueError("radius must be positive")
        if not 0 < self.thresh <= 1:
            raise ValueError("thresh must lie in (0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Fit:
    weights: WeightVector
    draws: ParameterDraws
    report: LipschitzReport


@dataclass(frozen=True)
class SchemeRun:
    unweighted: Fit
    weighted: Fit
    outcome: ReweightOutcome | None

    @property
    def final(self) -> Fit:
        if self.outcome is None:
            return self.weighted
        return Fit(self.outcome.alphas_w, self.outcome.draws_after, self.outcome.report_after)

    @property
    def converged(self) -> bool:
        fits = [self.unweighted, self.weighted, self.final]
        ok = all(f.draws.converged for f in fits)
        return ok and (self.outcome is None or self.outcome.converged)


def fit(spec: ModelSpec, dataset: Dataset, weights: WeightVector, sampler: SamplerConfig,
        thresh: float = 1.0) -> Fit:
    draws = sample_pseudo_posterior(spec, dataset, weights, sampler)
    return Fit(weights, draws, lipschitz_report(spec, draws, dataset, weights, thresh))


def scheme_weights(spec, dataset, cfg: SchemeConfig, unweighted: Fit, sampler, seed):
    if cfg.scheme == "LW":
        return lw_weights(unweighted.report, cfg.c, cfg.g)
    if cfg.scheme == "CW":
        return cw_weights(dataset, cfg.c, cfg.g, cfg.radius)
    target = cfg.sw_target
    if target is None:
        inner = replace(cfg, scheme=cfg.sw_match)
        w = scheme_weights(spec, dataset, inner, unweighted, sampler, seed)
        matched = fit(spec, dataset, w, replace(sampler, rng_seed=substream(seed, "sampler", "sw_match")),
                      cfg.thresh)
        target = min(matched.report.overall, unweighted.report.overall)
    return sw_weights(unweighted.report.overall, target, dataset.n)


def run_scheme(spec: ModelSpec, dataset: Dataset, cfg: SchemeConfig, sampler: SamplerConfig,
               reweight: ReweightConfig | None = None, seed: int = 0,
               do_reweight: bool = True, unweighted: Fit | None = None) -> SchemeRun:
    """Unweighted fit -> scheme weights -> weighted fit -> (re-weight + refit)."""
    if unweighted is None:
        unweighted = fit(spec, dataset, unit_weights(dataset.n),
                         replace(sampler, rng_seed=substream(seed, "sampler", "unweighted")),
                         cfg.thresh)
    w = scheme_weights(spec, dataset, cfg, unweighted, sampler, seed)
    weighted = fit(spec, dataset, w,
                   replace(sampler, rng_seed=substream(seed, "sampler", "weighted", cfg.scheme)),
                   cfg.thresh)
    outcome = None
    if do_reweight:
        outcome = reweight_with_refit(
            spec, dataset, w,
            replace(sampler, rng_seed=substream(seed, "sampler", "reweight", cfg.scheme)),
            reweight or ReweightConfig(), report=weighted.report,
        )
    return SchemeRun(unweighted, weighted, outcome)
