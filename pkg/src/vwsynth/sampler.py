"""Adaptive random-walk Metropolis for the alpha-weighted pseudo posterior.

The chain runs on ``(beta, log phi)``.  Warmup tunes, per chain, a diagonal
proposal scale (windowed sample variances) and a global log step size
(Robbins-Monro toward ``target_accept``); both are frozen afterwards so the
kept draws come from a fixed Metropolis kernel.  Chains advance in
lockstep for vectorised likelihood evaluation but each owns a private RNG
stream spawned from ``(rng_seed, chain)``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .model import Dataset, Family, ModelSpec, Theta, _digest, log_lik_matrix, log_prior_unconstrained

__all__ = [
    "ParameterDraws",
    "SamplerConfig",
    "effective_sample_size",
    "sample_pseudo_posterior",
    "split_rhat",
    "weights_ident",
]

logger = logging.getLogger(__name__)

RHAT_THRESHOLD = 1.05
_ADAPT_WINDOWS = (0.15, 0.4, 0.75)


@dataclass(frozen=True)
class SamplerConfig:
    n_chains: int = 4
    n_warmup: int = 500
    n_keep: int = 1000
    target_accept: float = 0.35
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("n_chains", "n_warmup", "n_keep"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if not 0.2 <= self.target_accept <= 0.5:
            raise ValueError("target_accept must lie in [0.2, 0.5]")
        if not 0 <= int(self.rng_seed) < 2**64:
            raise ValueError("rng_seed must be a 64-bit unsigned integer")

    @property
    def n_draws(self) -> int:
        return self.n_chains * self.n_keep

    def to_dict(self) -> dict:
        return asdict(self)


def weights_ident(alphas) -> str:
    return _digest(np.ascontiguousarray(alphas, dtype=float).tobytes())


@dataclass(frozen=True)
class ParameterDraws:
    """Post-warmup draws in natural coordinates, chain-major order."""

    params: np.ndarray            # S x P: beta..., phi...
    chain: np.ndarray             # S chain labels
    names: tuple[str, ...]
    rhat: dict[str, float]
    ess: dict[str, float]
    accept_rate: tuple[float, ...]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.params.setflags(write=False)

    @property
    def S(self) -> int:
        return self.params.shape[0]

    @property
    def max_rhat(self) -> float:
        return max(self.rhat.values())

    @property
    def converged(self) -> bool:
        return self.max_rhat <= RHAT_THRESHOLD

    def theta(self, s: int, spec: ModelSpec) -> Theta:
        return Theta.from_vector(spec, self.params[s])

    def diagnostics(self) -> dict:
        return {
            "rhat": dict(self.rhat),
            "ess": dict(self.ess),
            "accept_rate": list(self.accept_rate),
            "converged": self.converged,
        }

    def to_csv(self, path) -> None:
        iters = np.zeros(self.S, dtype=int)
        for c in np.unique(self.chain):
            idx = np.flatnonzero(self.chain == c)
            iters[idx] = np.arange(idx.size)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["chain", "iter", *self.names])
            for s in range(self.S):
                w.writerow([int(self.chain[s]), int(iters[s]), *(repr(float(v)) for v in self.params[s])])


def _autocov(x: np.ndarray) -> np.ndarray:
    n = x.size
    x = x - x.mean()
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, nfft)
    ac = np.fft.irfft(f * np.conj(f), nfft)[:n]
    return ac / n


def split_rhat(chains: np.ndarray) -> float:
    """Split-chain potential scale reduction for a C x N array."""
    chains = np.atleast_2d(chains)
    half = chains.shape[1] // 2
    if half < 2:
        return float("nan")
    parts = np.concatenate([chains[:, :half], chains[:, -half:]])
    n = parts.shape[1]
    W = parts.var(axis=1, ddof=1).mean()
    B = n * parts.mean(axis=1).var(ddof=1)
    if W <= 0:
        return 1.0 if B <= 0 else float("inf")
    var_plus = (n - 1) / n * W + B / n
    return float(math.sqrt(var_plus / W))


def effective_sample_size(chains: np.ndarray) -> float:
    """Multi-chain ESS with Geyer's initial monotone sequence truncation."""
    chains = np.atleast_2d(np.asarray(chains, dtype=float))
    m, n = chains.shape
    if n < 4:
        return float(m * n)
    acov = np.array([_autocov(c) for c in chains])
    chain_var = acov[:, 0] * n / (n - 1)
    W = chain_var.mean()
    if W <= 0:
        return float(m * n)
    var_plus = W * (n - 1) / n
    if m > 1:
        var_plus += chains.mean(axis=1).var(ddof=1)
    rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    tau = -1.0
    prev = math.inf
    for t in range(0, n - 1, 2):
        pair = rho[t] + rho[t + 1]
        if pair <= 0:
            break
        pair = min(pair, prev)
        tau += 2.0 * pair
        prev = pair
    tau = max(tau, 1.0 / math.log10(m * n + 10))
    return float(m * n / tau)


class _Target:
    """Log pseudo posterior on the unconstrained scale, over compressed records."""

    def __init__(self, spec: ModelSpec, dataset: Dataset, alphas: np.ndarray):
        self.spec = spec
        X = spec.design(dataset.n)
        keep = alphas > 0
        x = dataset.records[keep].astype(float)
        X = X[keep]
        a = alphas[keep]
        rows = np.column_stack([x, X])
        uniq, inv = np.unique(rows, axis=0, return_inverse=True)
        self.x = uniq[:, 0]
        self.X = uniq[:, 1:]
        self.w = np.bincount(inv.ravel(), weights=a, minlength=uniq.shape[0])
        self.K = spec.n_coef

    def natural(self, u: np.ndarray) -> np.ndarray:
        out = np.array(u, dtype=float)
        out[:, self.K:] = np.exp(out[:, self.K:])
        return out

    def __call__(self, u: np.ndarray) -> np.ndarray:
        u = np.atleast_2d(u)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            lp = log_prior_unconstrained(self.spec, u)
            if self.x.size:
                ll = log_lik_matrix(self.spec, self.natural(u), self.x, self.X)
                lp = lp + ll @ self.w
        return np.where(np.isfinite(lp), lp, -np.inf)


def _moment_init(spec: ModelSpec, dataset: Dataset, alphas: np.ndarray):
    """Weighted method-of-moments centre and rough proposal scales."""
    W = float(alphas.sum())
    x = dataset.records.astype(float)
    K = spec.n_coef
    beta = np.zeros(K)
    if W > 0:
        m = float(np.dot(alphas, x) / W)
        v = float(np.dot(alphas, (x - m) ** 2) / W)
    elif spec.prior.kind == "gamma_mean":
        m, v = spec.prior.gamma_shape / spec.prior.gamma_rate, 0.0
    else:
        m, v = 1.0, 0.0
    m = max(m, 0.5)
    if spec.covariates is None:
        beta[0] = math.log(m)
    else:
        X = spec.design(dataset.n)
        sw = np.sqrt(alphas if W > 0 else np.ones_like(alphas))
        beta = np.linalg.lstsq(X * sw[:, None], np.log(x + 0.5) * sw, rcond=None)[0]
    phi = m * m / (v - m) if v > 1.01 * m else 1e3
    phi = float(np.clip(phi, 1e-3, 1e6))
    centre = np.concatenate([beta, np.full(spec.n_dispersion, math.log(phi))])
    J = spec.n_dispersion
    if J > 1:
        centre[K:] += 0.5 * (np.arange(J) - (J - 1) / 2)
    info_beta = max(W, 1.0) * m * phi / (m + phi)
    scale = np.concatenate([
        np.full(K, 1.0 / math.sqrt(info_beta)),
        np.full(J, math.sqrt(2.0 / max(W, 1.0))),
    ])
    return centre, np.clip(scale, 1e-3, 2.5)


def _prior_beta_draw(spec: ModelSpec, rng: np.random.Generator) -> np.ndarray:
    pc = spec.prior
    if pc.kind == "gamma_mean":
        return np.log(rng.gamma(pc.gamma_shape, 1.0 / pc.gamma_rate, size=1)) - math.log(
            pc.gamma_shape / pc.gamma_rate)
    return pc.beta_scale * rng.standard_t(pc.beta_df, size=spec.n_coef)


def sample_pseudo_posterior(spec: ModelSpec, dataset: Dataset, weights,
                            config: SamplerConfig | None = None) -> ParameterDraws:
    """Draw from ``prod_i p(x_i|theta)^alpha_i * prior(theta)``.

    ``weights`` is a WeightVector or a plain array of alphas.  Non-convergence
    (split-Rhat above 1.05 for any parameter) is reported through
    ``ParameterDraws.converged``; it is never raised.
    """
    config = config or SamplerConfig()
    alphas = np.asarray(getattr(weights, "alphas", weights), dtype=float)
    if alphas.shape != (dataset.n,):
        raise ValueError("weights length must match the dataset")
    if np.any(alphas < 0) or np.any(alphas > 1):
        raise ValueError("weights must lie in [0, 1]")
    spec.design(dataset.n)

    target = _Target(spec, dataset, alphas)
    C, P = config.n_chains, spec.n_params
    rngs = [np.random.default_rng(np.random.SeedSequence([int(config.rng_seed), c]))
            for c in range(C)]
    centre, scale0 = _moment_init(spec, dataset, alphas)

    U = np.empty((C, P))
    for c, rng in enumerate(rngs):
        U[c] = centre
        U[c, :spec.n_coef] += 0.1 * _prior_beta_draw(spec, rng)
    logp = target(U)
    if not np.all(np.isfinite(logp)):
        U[~np.isfinite(logp)] = centre
        logp = target(U)

    scale = np.tile(scale0, (C, 1))
    log_step = np.full(C, math.log(2.38 / math.sqrt(P)))
    windows = sorted({max(1, int(f * config.n_warmup)) for f in _ADAPT_WINDOWS})
    win_start = 0
    win_draws: list[np.ndarray] = []
    t_adapt = 0

    kept = np.empty((config.n_keep, C, P))
    accepted = np.zeros(C)
    total = config.n_warmup + config.n_keep
    for it in range(total):
        z = np.stack([rng.standard_normal(P) for rng in rngs])
        log_u = np.log(np.array([rng.random() for rng in rngs]))
        prop = U + np.exp(log_step)[:, None] * scale * z
        lp_prop = target(prop)
        log_ratio = lp_prop - logp
        acc = log_u < log_ratio
        U[acc] = prop[acc]
        logp[acc] = lp_prop[acc]

        if it < config.n_warmup:
            t_adapt += 1
            a_prob = np.exp(np.minimum(np.nan_to_num(log_ratio, nan=-np.inf), 0.0))
            log_step += (a_prob - config.target_accept) / t_adapt ** 0.6
            win_draws.append(U.copy())
            if it + 1 in windows and len(win_draws) - win_start >= 10:
                block = np.asarray(win_draws[win_start:])
                sd = block.std(axis=0)
                ok = sd > 1e-12
                scale = np.where(ok, sd, scale)
                log_step[:] = math.log(2.38 / math.sqrt(P))
                t_adapt = 0
                win_start = len(win_draws)
        else:
            kept[it - config.n_warmup] = U
            accepted += acc

    chains_u = np.transpose(kept, (1, 0, 2))  # C x N x P
    names = tuple(spec.param_names())
    K = spec.n_coef
    rhat, ess = {}, {}
    for p, name in enumerate(names):
        rhat[name] = split_rhat(chains_u[:, :, p])
        ess[name] = effective_sample_size(chains_u[:, :, p])
    flat = chains_u.reshape(C * config.n_keep, P).copy()
    flat[:, K:] = np.exp(flat[:, K:])
    draws = ParameterDraws(
        params=flat,
        chain=np.repeat(np.arange(C), config.n_keep),
        names=names,
        rhat=rhat,
        ess=ess,
        accept_rate=tuple(float(a) for a in accepted / config.n_keep),
        provenance={
            "spec": spec.ident,
            "dataset": dataset.ident,
            "weights": weights_ident(alphas),
            "sampler": config.to_dict(),
        },
    )
    if not draws.converged:
        logger.warning("sampler did not converge: max split-Rhat %.3f", draws.max_rhat)
    return draws
