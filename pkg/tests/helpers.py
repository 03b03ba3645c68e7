import numpy as np

from vwsynth.sampler import ParameterDraws, weights_ident


def make_draws(params, spec=None, dataset=None, weights=None):
    """Fixed draws (natural scale) with provenance filled where given."""
    params = np.atleast_2d(np.asarray(params, dtype=float)).copy()
    names = tuple(spec.param_names()) if spec is not None else tuple(
        f"p{j}" for j in range(params.shape[1]))
    prov = {}
    if spec is not None:
        prov["spec"] = spec.ident
    if dataset is not None:
        prov["dataset"] = dataset.ident
    if weights is not None:
        prov["weights"] = weights_ident(np.asarray(getattr(weights, "alphas", weights), dtype=float))
    return ParameterDraws(
        params=params,
        chain=np.zeros(params.shape[0], dtype=int),
        names=names,
        rhat={n: 1.0 for n in names},
        ess={n: float(params.shape[0]) for n in names},
        accept_rate=(0.35,),
        provenance=prov,
    )


ACCEPTANCE: dict[int, tuple[bool, str, str]] = {}


class criterion:
    """Record a pass/fail line for acceptance criterion ``number``."""

    def __init__(self, number: int, title: str):
        self.number, self.title = number, title
        self.detail = ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        ok = exc_type is None
        detail = self.detail if ok or not exc else f"{self.detail} {exc}".strip()
        ACCEPTANCE[self.number] = (ok, self.title, " ".join(detail.split())[:300])
        return False
