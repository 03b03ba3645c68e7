"""Lipschitz (sensitivity) accounting over sampled parameter draws.

For draws theta_1..theta_S and weights alpha, the S x n matrix
``|alpha_i * log p(x_i | theta_s)|`` gives by-record bounds (column
aggregates), the database bound (its maximum) and the local guarantee
``epsilon = 2 * bound``.  The leave-one-out route computes the same matrix
as ``|sum_j alpha_j f_j - sum_{j != i} alpha_j f_j|`` and serves as the
cross-check.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .model import Dataset, EvaluationError, ModelSpec, log_lik_matrix
from .sampler import ParameterDraws, weights_ident

__all__ = [
    "DEFAULT_MAX_ENTRIES",
    "LipschitzReport",
    "ProvenanceError",
    "lipschitz_report",
    "loglik_magnitude_matrix",
    "loo_ratio_matrix",
    "summarize",
]

DEFAULT_MAX_ENTRIES = 10**8


class ProvenanceError(ValueError):
    """Draws were produced under a different spec, dataset or weight vector."""


@dataclass(frozen=True)
class LipschitzReport:
    record_bounds: np.ndarray
    overall: float
    epsilon_local: float
    thresh: float
    row_max: np.ndarray
    matrix: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.record_bounds.size

    def to_dict(self) -> dict:
        return {
            "overall": self.overall,
            "epsilon_local": self.epsilon_local,
            "thresh": self.thresh,
            "n_records": self.n,
            "n_draws": int(self.row_max.size),
            "record_bounds": self.record_bounds.tolist(),
            "provenance": self.provenance,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    def matrix_to_csv(self, path) -> None:
        if self.matrix is None:
            raise ValueError("matrix was not materialised (streaming mode)")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            for row in self.matrix:
                w.writerow([repr(float(v)) for v in row])


def _alphas(weights) -> np.ndarray:
    return np.asarray(getattr(weights, "alphas", weights), dtype=float)


def _check_provenance(spec, draws, dataset, alphas):
    prov = draws.provenance
    expected = {"spec": spec.ident, "dataset": dataset.ident, "weights": weights_ident(alphas)}
    for key, want in expected.items():
        if key in prov and prov[key] != want:
            raise ProvenanceError(
                f"draws were generated under a different {key} "
                f"({prov[key]} != {want}); pass the weights the draws were fit with"
            )


def _weighted_block(spec, params, x, X, a, offset):
    out = np.zeros((params.shape[0], x.size))
    active = np.flatnonzero(a > 0)
    if active.size:
        with np.errstate(over="ignore", invalid="ignore"):
            ll = log_lik_matrix(spec, params, x[active], X[active])
        bad = ~np.isfinite(ll)
        if bad.any():
            i = int(active[np.argmax(bad.any(axis=0))]) + offset
            raise EvaluationError(f"non-finite log-likelihood for record {i}", record_index=i)
        out[:, active] = a[active] * ll
    return out


def _signed_matrix(spec, draws, dataset, alphas, strict):
    if alphas.shape != (dataset.n,):
        raise ValueError("weights length must match the dataset")
    if strict:
        _check_provenance(spec, draws, dataset, alphas)
    X = spec.design(dataset.n)
    return _weighted_block(spec, draws.params, dataset.records.astype(float), X, alphas, 0)


def loglik_magnitude_matrix(spec: ModelSpec, draws: ParameterDraws, dataset: Dataset,
                            weights, *, strict: bool = True) -> np.ndarray:
    """S x n matrix of ``|alpha_i * log p(x_i | theta_s)|``.

    With ``strict`` the draws must carry the same weights in their
    provenance; pass ``strict=False`` to evaluate new weights at old draws.
    """
    return np.abs(_signed_matrix(spec, draws, dataset, _alphas(weights), strict))


def loo_ratio_matrix(spec: ModelSpec, draws: ParameterDraws, dataset: Dataset,
                     weights, *, strict: bool = True) -> np.ndarray:
    """S x n matrix of ``|L(x) - L(x without record i)|`` per draw.

    ``L`` is the weighted log pseudo likelihood; the deleted-database sum is
    accumulated from the records that remain (prefix plus suffix sums), not
    by subtracting record i's own term.
    """
    F = _signed_matrix(spec, draws, dataset, _alphas(weights), strict)
    S, n = F.shape
    prefix = np.zeros((S, n + 1))
    np.cumsum(F, axis=1, out=prefix[:, 1:])
    suffix = np.zeros((S, n + 1))
    suffix[:, :n] = np.cumsum(F[:, ::-1], axis=1)[:, ::-1]
    deleted = prefix[:, :n] + suffix[:, 1:]
    full = (prefix[:, :n] + F) + suffix[:, 1:]
    return np.abs(full - deleted)


def summarize(matrix, thresh: float = 1.0) -> LipschitzReport:
    """Aggregate a magnitude matrix into by-record and overall bounds.

    ``thresh = 1`` takes column maxima and the global maximum.  For
    ``thresh < 1`` each record bound is the thresh-quantile of its column and
    the overall bound is the thresh-quantile of per-draw row maxima (the
    scalar used for the privacy guarantee).
    """
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.size == 0:
        raise ValueError("empty Lipschitz matrix")
    if not 0 < thresh <= 1:
        raise ValueError("thresh must lie in (0, 1]")
    return _report(_column_agg(m, thresh), m.max(axis=1), thresh, matrix=m)


def _column_agg(m, thresh):
    if thresh == 1.0:
        return m.max(axis=0)
    return np.quantile(m, thresh, axis=0)


def _report(record_bounds, row_max, thresh, matrix=None, provenance=None):
    if thresh == 1.0:
        overall = float(row_max.max())
    else:
        overall = float(np.quantile(row_max, thresh))
    return LipschitzReport(
        record_bounds=record_bounds,
        overall=overall,
        epsilon_local=2.0 * overall,
        thresh=float(thresh),
        row_max=row_max,
        matrix=matrix,
        provenance=provenance or {},
    )


def lipschitz_report(spec: ModelSpec, draws: ParameterDraws, dataset: Dataset, weights,
                     thresh: float = 1.0, *, strict: bool = True, keep_matrix: bool = False,
                     max_entries: int = DEFAULT_MAX_ENTRIES) -> LipschitzReport:
    """Lipschitz report computed in record blocks.

    The full matrix is only kept when ``keep_matrix`` is set and
    ``S * n <= max_entries``; otherwise column aggregates and row maxima are
    accumulated block by block.
    """
    alphas = _alphas(weights)
    if alphas.shape != (dataset.n,):
        raise ValueError("weights length must match the dataset")
    if not 0 < thresh <= 1:
        raise ValueError("thresh must lie in (0, 1]")
    if strict:
        _check_provenance(spec, draws, dataset, alphas)
    S, n = draws.S, dataset.n
    X = spec.design(n)
    x = dataset.records.astype(float)
    materialise = keep_matrix and S * n <= max_entries
    block = max(1, min(n, max_entries // max(S, 1), 2**22 // max(S, 1)))
    bounds = np.empty(n)
    row_max = np.zeros(S)
    full = np.empty((S, n)) if materialise else None
    for lo in range(0, n, block):
        hi = min(n, lo + block)
        m = np.abs(_weighted_block(spec, draws.params, x[lo:hi], X[lo:hi], alphas[lo:hi], lo))
        bounds[lo:hi] = _column_agg(m, thresh)
        np.maximum(row_max, m.max(axis=1), out=row_max)
        if full is not None:
            full[:, lo:hi] = m
    prov = {"draws": dict(draws.provenance), "weights": weights_ident(alphas)}
    return _report(bounds, row_max, thresh, matrix=full, provenance=prov)
