"""Count-data likelihood families, weighted log-likelihoods and priors.

All log-pmfs go through log-gamma/log-beta functions, so salary-scale
counts (~1e6) and very large dispersions are evaluated without overflow.
The negative binomial uses the mean/dispersion parameterisation
``Var = mu + mu**2 / phi`` with ``log(mu) = X @ beta``.
"""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

__all__ = [
    "Dataset",
    "EvaluationError",
    "Family",
    "ModelSpec",
    "PriorConfig",
    "Theta",
    "log_lik_record",
    "log_lik_matrix",
    "log_prior",
    "nb_logpmf",
    "poisson_logpmf",
    "pseudo_log_lik",
]


class EvaluationError(ArithmeticError):
    """A log-likelihood evaluated to a non-finite value."""

    def __init__(self, message, record_index=None, theta=None):
        super().__init__(message)
        self.record_index = record_index
        self.theta = theta


class Family(str, enum.Enum):
    POISSON = "poisson"
    NEGATIVE_BINOMIAL = "negbin"
    NEGATIVE_BINOMIAL_MIXTURE = "negbin_mixture"


def _digest(*chunks: bytes) -> str:
    h = hashlib.sha256()
    for c in chunks:
        h.update(c)
    return h.hexdigest()[:16]


@dataclass(frozen=True)
class Dataset:
    """Confidential count records ``x_1..x_n``."""

    records: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.records)
        if arr.ndim != 1:
            raise ValueError("records must be one-dimensional")
        if arr.size < 2:
            raise ValueError("a dataset needs at least 2 records")
        if not np.all(np.isfinite(arr)):
            raise ValueError("records must be finite")
        if np.any(arr < 0) or np.any(arr != np.round(arr)):
            raise ValueError("records must be non-negative integers")
        arr = arr.astype(np.int64)
        arr.setflags(write=False)
        object.__setattr__(self, "records", arr)

    @property
    def n(self) -> int:
        return int(self.records.size)

    @property
    def ident(self) -> str:
        return _digest(self.records.tobytes())

    def delete(self, i: int) -> "Dataset":
        return Dataset(np.delete(self.records, i))


@dataclass(frozen=True)
class PriorConfig:
    """Prior hyperparameters.

    ``kind="default"`` puts Student-t(beta_df, 0, beta_scale) on every
    coefficient and half-Cauchy(0, recip_phi_scale) on ``1/phi``.
    ``kind="gamma_mean"`` is a Poisson-only Gamma(gamma_shape, gamma_rate)
    prior on the mean, used to check the sampler against the conjugate
    answer.
    """

    kind: str = "default"
    beta_df: float = 3.0
    beta_scale: float = 2.5
    recip_phi_scale: float = 5.0
    gamma_shape: float = 2.0
    gamma_rate: float = 1.0

    def __post_init__(self):
        if self.kind not in ("default", "gamma_mean"):
            raise ValueError(f"unknown prior kind {self.kind!r}")
        if min(self.beta_df, self.beta_scale, self.recip_phi_scale,
               self.gamma_shape, self.gamma_rate) <= 0:
            raise ValueError("prior hyperparameters must be positive")


@dataclass(frozen=True)
class ModelSpec:
    family: Family = Family.NEGATIVE_BINOMIAL
    covariates: np.ndarray | None = None
    prior: PriorConfig = field(default_factory=PriorConfig)
    mixture_weights: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if self.covariates is not None:
            X = np.asarray(self.covariates, dtype=float)
            if X.ndim != 2:
                raise ValueError("covariates must be an n x K matrix")
            X.setflags(write=False)
            object.__setattr__(self, "covariates", X)
        if self.family is Family.NEGATIVE_BINOMIAL_MIXTURE:
            w = self.mixture_weights
            if w is None or len(w) < 2:
                raise ValueError("mixture family needs >= 2 component weights")
            if any(p <= 0 for p in w) or abs(sum(w) - 1.0) > 1e-9:
                raise ValueError("mixture weights must be positive and sum to 1")
            object.__setattr__(self, "mixture_weights", tuple(float(p) for p in w))
        elif self.mixture_weights is not None:
            raise ValueError("mixture_weights only apply to the mixture family")
        if self.prior.kind == "gamma_mean" and (
            self.family is not Family.POISSON or self.n_coef != 1
        ):
            raise ValueError("gamma_mean prior needs an intercept-only Poisson model")

    @property
    def n_coef(self) -> int:
        return 1 if self.covariates is None else self.covariates.shape[1]

    @property
    def n_dispersion(self) -> int:
        if self.family is Family.POISSON:
            return 0
        if self.family is Family.NEGATIVE_BINOMIAL:
            return 1
        return len(self.mixture_weights)

    @property
    def n_params(self) -> int:
        return self.n_coef + self.n_dispersion

    def param_names(self) -> list[str]:
        names = [f"beta{k}" for k in range(self.n_coef)]
        if self.n_dispersion == 1:
            names.append("phi")
        else:
            names += [f"phi{j}" for j in range(self.n_dispersion)]
        return names

    def design(self, n: int) -> np.ndarray:
        if self.covariates is None:
            return np.ones((n, 1))
        if self.covariates.shape[0] != n:
            raise ValueError(
                f"design matrix has {self.covariates.shape[0]} rows, data has {n}"
            )
        return self.covariates

    @property
    def ident(self) -> str:
        parts = [self.family.value, repr(self.prior), repr(self.mixture_weights)]
        cov = b"" if self.covariates is None else self.covariates.tobytes()
        return _digest("|".join(parts).encode(), cov)

    def to_dict(self) -> dict:
        return {
            "family": self.family.value,
            "prior": dict(self.prior.__dict__),
            "mixture_weights": None if self.mixture_weights is None else list(self.mixture_weights),
            "covariates": None if self.covariates is None else self.covariates.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        cov = d.get("covariates")
        mw = d.get("mixture_weights")
        return cls(
            family=Family(d["family"]),
            covariates=None if cov is None else np.asarray(cov, dtype=float),
            prior=PriorConfig(**d.get("prior", {})),
            mixture_weights=None if mw is None else tuple(mw),
        )


@dataclass(frozen=True)
class Theta:
    """One parameter value: log-mean coefficients and dispersion(s).

    ``phi`` holds one dispersion per NB component (empty for Poisson).
    """

    beta: np.ndarray
    phi: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        phi = np.atleast_1d(np.asarray(self.phi, dtype=float))
        if not (np.all(np.isfinite(beta)) and np.all(np.isfinite(phi))):
            raise ValueError("theta components must be finite")
        if np.any(phi <= 0):
            raise ValueError("phi must be positive")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "phi", phi)

    @classmethod
    def from_mean(cls, mu: float, *phi: float) -> "Theta":
        return cls(np.array([math.log(mu)]), np.array(phi, dtype=float))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.beta, self.phi])

    @classmethod
    def from_vector(cls, spec: ModelSpec, v) -> "Theta":
        v = np.asarray(v, dtype=float)
        return cls(v[: spec.n_coef], v[spec.n_coef:])


def poisson_logpmf(x, log_mu):
    x = np.asarray(x, dtype=float)
    return x * log_mu - np.exp(log_mu) - special.gammaln(x + 1.0)


def nb_logpmf(x, log_mu, phi):
    """NB log-pmf with mean ``exp(log_mu)`` and dispersion ``phi``.

    Uses ``log C(x+phi-1, x) = -betaln(x, phi) - log(x)`` which stays
    accurate when ``phi`` is huge (the Poisson limit).
    """
    x = np.asarray(x, dtype=float)
    phi = np.asarray(phi, dtype=float)
    xs = np.maximum(x, 1.0)
    coef = np.where(x > 0, -special.betaln(xs, phi) - np.log(xs), 0.0)
    log_phi = np.log(phi)
    # log(phi / (phi + mu)) and log(mu / (phi + mu)) without cancellation
    log_q = -np.logaddexp(0.0, log_mu - log_phi)
    log_p = -np.logaddexp(0.0, log_phi - log_mu)
    return coef + phi * log_q + x * log_p


def log_lik_matrix(spec: ModelSpec, params: np.ndarray, x: np.ndarray,
                   design: np.ndarray | None = None) -> np.ndarray:
    """``log p(x_i | theta_s)`` for parameter rows ``params`` (S x P, natural scale).

    Returns an S x n array.
    """
    params = np.atleast_2d(np.asarray(params, dtype=float))
    x = np.asarray(x, dtype=float)
    X = spec.design(x.size) if design is None else design
    K = spec.n_coef
    eta = params[:, :K] @ X.T  # S x n
    if spec.family is Family.POISSON:
        return poisson_logpmf(x[None, :], eta)
    phis = params[:, K:]
    if spec.family is Family.NEGATIVE_BINOMIAL:
        return nb_logpmf(x[None, :], eta, phis[:, :1])
    comps = [
        math.log(w) + nb_logpmf(x[None, :], eta, phis[:, j:j + 1])
        for j, w in enumerate(spec.mixture_weights)
    ]
    return special.logsumexp(np.stack(comps), axis=0)


def log_lik_record(spec: ModelSpec, theta: Theta, record_index: int,
                   dataset: Dataset) -> float:
    if not 0 <= record_index < dataset.n:
        raise IndexError(f"record_index {record_index} out of range")
    X = spec.design(dataset.n)[record_index:record_index + 1]
    v = theta.as_vector()[None, :]
    with np.errstate(over="ignore", invalid="ignore"):
        val = float(log_lik_matrix(spec, v, dataset.records[record_index:record_index + 1], X)[0, 0])
    if not math.isfinite(val):
        raise EvaluationError(
            f"non-finite log-likelihood for record {record_index}",
            record_index=record_index, theta=theta,
        )
    return val


def pseudo_log_lik(spec: ModelSpec, theta: Theta, dataset: Dataset, weights) -> float:
    """``sum_i alpha_i log p(x_i | theta)``; zero-weight records are skipped."""
    alphas = np.asarray(getattr(weights, "alphas", weights), dtype=float)
    if alphas.shape != (dataset.n,):
        raise ValueError("weights length must match the dataset")
    if np.any(alphas < 0) or np.any(alphas > 1):
        raise ValueError("weights must lie in [0, 1]")
    active = np.flatnonzero(alphas > 0)
    if active.size == 0:
        return 0.0
    X = spec.design(dataset.n)[active]
    with np.errstate(over="ignore", invalid="ignore"):
        ll = log_lik_matrix(spec, theta.as_vector()[None, :], dataset.records[active], X)[0]
    bad = ~np.isfinite(ll)
    if bad.any():
        i = int(active[np.argmax(bad)])
        raise EvaluationError(f"non-finite log-likelihood for record {i}",
                              record_index=i, theta=theta)
    return float(np.dot(alphas[active], ll))


def _student_t_logpdf(z, df, scale):
    return (special.gammaln((df + 1) / 2) - special.gammaln(df / 2)
            - 0.5 * math.log(df * math.pi) - math.log(scale)
            - (df + 1) / 2 * np.log1p((z / scale) ** 2 / df))


def log_prior_unconstrained(spec: ModelSpec, u: np.ndarray) -> np.ndarray:
    """Log prior density over ``(beta, log phi)`` rows, Jacobian included.

    ``u`` is S x P in the sampler's coordinates.
    """
    u = np.atleast_2d(u)
    K = spec.n_coef
    pc = spec.prior
    if pc.kind == "gamma_mean":
        b = u[:, 0]
        # Gamma(a, b) on mu = exp(beta) plus log-Jacobian beta
        return (pc.gamma_shape * math.log(pc.gamma_rate) - special.gammaln(pc.gamma_shape)
                + pc.gamma_shape * b - pc.gamma_rate * np.exp(b))
    lp = _student_t_logpdf(u[:, :K], pc.beta_df, pc.beta_scale).sum(axis=1)
    if spec.n_dispersion:
        log_phi = u[:, K:]
        s = pc.recip_phi_scale
        # half-Cauchy(0, s) on psi = 1/phi = exp(-log_phi), |dpsi/dlog_phi| = psi
        log_psi = -log_phi
        lhc = math.log(2.0 / (math.pi * s)) - np.logaddexp(0.0, 2.0 * (log_psi - math.log(s)))
        lp = lp + (lhc + log_psi).sum(axis=1)
    return lp


def log_prior(spec: ModelSpec, theta: Theta) -> float:
    """Log prior density of ``theta`` in the sampler's ``(beta, log phi)`` space."""
    u = np.concatenate([theta.beta, np.log(theta.phi)])
    with np.errstate(over="ignore"):
        return float(log_prior_unconstrained(spec, u[None, :])[0])
