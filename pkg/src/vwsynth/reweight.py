"""Utility-maximising re-weighting of a vector-weighted pseudo posterior.

Every record whose by-record bound sits below the database bound is
over-protected: its weight can grow by ``bound / record_bound`` without
moving the maximum.  A common factor ``k < 1`` absorbs the drift that the
refit introduces; ``k`` is searched by bisection until the refit bound
matches the original one within a relative tolerance.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .lipschitz import LipschitzReport, lipschitz_report
from .model import Dataset, ModelSpec
from .sampler import ParameterDraws, SamplerConfig, sample_pseudo_posterior
from .weights import Scheme, WeightVector

__all__ = ["ReweightConfig", "ReweightOutcome", "reweight_formula", "reweight_with_refit"]

logger = logging.getLogger(__name__)

ZERO_BOUND_RATIO_CAP = 1e3


@dataclass(frozen=True)
class ReweightConfig:
    k_init: float = 0.95
    tolerance: float = 0.05
    max_iters: int = 12
    k_bounds: tuple[float, float] = (0.5, 1.0)

    def __post_init__(self):
        if not 0 < self.k_init < 1:
            raise ValueError("k_init must lie in (0, 1)")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        lo, hi = self.k_bounds
        if not 0 < lo < hi <= 1:
            raise ValueError("k_bounds must satisfy 0 < lo < hi <= 1")
        object.__setattr__(self, "k_bounds", (float(lo), float(hi)))

    def to_dict(self) -> dict:
        return {"k_init": self.k_init, "tolerance": self.tolerance,
                "max_iters": self.max_iters, "k_bounds": list(self.k_bounds)}


@dataclass(frozen=True)
class ReweightOutcome:
    alphas_w: WeightVector
    k_used: float
    delta_before: float
    delta_after: float
    iterations: int
    converged: bool
    draws_after: ParameterDraws | None = None
    report_after: LipschitzReport | None = None
    trials: tuple = ()

    @property
    def relative_error(self) -> float:
        return (self.delta_after - self.delta_before) / self.delta_before

    @property
    def n_clamped(self) -> int:
        return int(self.alphas_w.config.get("n_clamped", 0))

    def to_dict(self) -> dict:
        return {
            "k_used": self.k_used,
            "delta_before": self.delta_before,
            "delta_after": self.delta_after,
            "epsilon_before": 2.0 * self.delta_before,
            "epsilon_after": 2.0 * self.delta_after,
            "relative_error": self.relative_error,
            "iterations": self.iterations,
            "converged": self.converged,
            "n_clamped": self.n_clamped,
            "zero_bound_records": list(self.alphas_w.config.get("zero_bound_records", [])),
            "trials": [dict(t) for t in self.trials],
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def reweight_formula(alphas, report: LipschitzReport, k: float) -> WeightVector:
    """``alpha_w_i = clamp(k * alpha_i * bound / record_bound_i, 0, 1)``.

    ``report`` must come from the alpha-weighted fit.  Zero-weight records stay
    at zero.  A positive-weight record with a zero bound gets its ratio capped
    at ``ZERO_BOUND_RATIO_CAP`` and is listed in the config.
    """
    a = np.asarray(getattr(alphas, "alphas", alphas), dtype=float)
    rb = report.record_bounds
    if a.shape != rb.shape:
        raise ValueError("weights and report cover different numbers of records")
    if not k > 0:
        raise ValueError("k must be positive")
    live = a > 0
    zero_bound = live & (rb <= 0)
    ratio = np.zeros_like(a)
    ok = live & ~zero_bound
    ratio[ok] = report.overall / rb[ok]
    ratio[zero_bound] = ZERO_BOUND_RATIO_CAP
    raw = k * a * ratio
    out = np.clip(raw, 0.0, 1.0)
    if zero_bound.any():
        logger.warning("%d records with zero bound got a capped ratio", int(zero_bound.sum()))
    config = {
        "k": float(k),
        "source_scheme": getattr(getattr(alphas, "scheme", None), "value", None),
        "n_clamped": int(np.count_nonzero(raw > 1.0)),
        "zero_bound_records": np.flatnonzero(zero_bound).tolist(),
    }
    return WeightVector(out, Scheme.REWEIGHTED, config)


def _trial_seed(seed: int, trial: int) -> int:
    ss = np.random.SeedSequence([int(seed), 0x5245, trial])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def reweight_with_refit(spec: ModelSpec, dataset: Dataset, alphas,
                        sampler_config: SamplerConfig | None = None,
                        reweight_config: ReweightConfig | None = None,
                        report: LipschitzReport | None = None,
                        thresh: float = 1.0) -> ReweightOutcome:
    """Re-weight, refit, and bisect on ``k`` until the bound is preserved.

    ``report`` is the Lipschitz report of the alpha-weighted fit; it is
    computed here when omitted.  Each ``k`` trial gets a fresh sampler run on
    its own seed.  When no trial meets the tolerance the closest one is
    returned with ``converged=False``.
    """
    sampler_config = sampler_config or SamplerConfig()
    rc = reweight_config or ReweightConfig()
    if report is None:
        draws = sample_pseudo_posterior(spec, dataset, alphas, sampler_config)
        report = lipschitz_report(spec, draws, dataset, alphas, thresh)
    delta_before = report.overall
    if delta_before <= 0:
        raise ValueError("pre-reweight bound is zero; nothing to preserve")

    lo, hi = rc.k_bounds
    k = rc.k_init
    best = None
    trials = []
    converged = False
    for t in range(rc.max_iters):
        aw = reweight_formula(alphas, report, k)
        cfg = replace(sampler_config, rng_seed=_trial_seed(sampler_config.rng_seed, t))
        draws = sample_pseudo_posterior(spec, dataset, aw, cfg)
        rep = lipschitz_report(spec, draws, dataset, aw, report.thresh)
        rel = (rep.overall - delta_before) / delta_before
        trials.append({"k": k, "delta_after": rep.overall, "relative_error": rel,
                       "max_rhat": draws.max_rhat})
        logger.info("reweight trial %d: k=%.5f delta=%.5f rel=%+.4f", t, k, rep.overall, rel)
        if best is None or abs(rel) < abs(best[0]):
            best = (rel, k, aw, draws, rep, t + 1)
        if abs(rel) <= rc.tolerance:
            converged = True
            best = (rel, k, aw, draws, rep, t + 1)
            break
        if rel > 0:
            hi = k
        else:
            lo = k
        k = 0.5 * (lo + hi)

    rel, k_used, aw, draws, rep, _ = best
    return ReweightOutcome(
        alphas_w=aw,
        k_used=k_used,
        delta_before=delta_before,
        delta_after=rep.overall,
        iterations=len(trials),
        converged=converged,
        draws_after=draws,
        report_after=rep,
        trials=tuple(trials),
    )
