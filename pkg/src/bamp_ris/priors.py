"""Scalar priors over channel and signal entries, and their Gaussian projections.

Every prior is stored as a finite mixture of circularly-symmetric complex
Gaussians (or real Gaussians when ``real=True`` is passed to the moment
routines).  A zero-variance component is a point mass, so the
Bernoulli-Gaussian spike-and-slab is just a two-component mixture.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidDimensionError, InvalidParameterError  # noqa: F401


@dataclass(frozen=True)
class MixturePrior:
    """Finite Gaussian mixture ``sum_i w_i N(x; mean_i, var_i)``.

    ``var_i == 0`` denotes a point mass at ``mean_i``.
    """

    weights: tuple[float, ...]
    means: tuple[complex, ...]
    variances: tuple[float, ...]
    kind: str = field(default="mixture", compare=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if not (len(self.weights) == len(self.means) == len(self.variances)) or w.size == 0:
            raise InvalidParameterError("mixture needs equal-length, non-empty weights/means/variances")
        if np.any(w < 0) or not np.isfinite(w).all():
            raise InvalidParameterError("mixture weights must be finite and non-negative")
        if w.sum() <= 0:
            raise InvalidParameterError("degenerate mixture: all weights are zero")
        if abs(w.sum() - 1.0) > 1e-9:
            raise InvalidParameterError(f"mixture weights sum to {w.sum()}, expected 1")
        if np.any(np.asarray(self.variances, dtype=float) < 0):
            raise InvalidParameterError("mixture variances must be non-negative")

    @property
    def mean(self) -> complex:
        return complex(np.dot(self.weights, self.means))

    @property
    def var(self) -> float:
        w = np.asarray(self.weights)
        mu = np.asarray(self.means, dtype=complex)
        second = np.dot(w, np.asarray(self.variances) + np.abs(mu) ** 2)
        return float(second - abs(self.mean) ** 2)

    def sample(self, shape, rng: np.random.Generator, real: bool = False) -> np.ndarray:
        """Draw i.i.d. entries of the given shape."""
        comp = rng.choice(len(self.weights), size=shape, p=np.asarray(self.weights, dtype=float))
        mu = np.asarray(self.means, dtype=complex)[comp]
        sd = np.sqrt(np.asarray(self.variances, dtype=float)[comp])
        if real:
            return mu.real + sd * rng.standard_normal(shape)
        noise = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        return mu + sd * noise / np.sqrt(2.0)

    def to_dict(self) -> dict:
        means = [[float(np.real(m)), float(np.imag(m))] for m in self.means]
        return {"kind": self.kind, "weights": list(map(float, self.weights)),
                "means": means, "variances": list(map(float, self.variances))}

    @classmethod
    def from_dict(cls, d: dict) -> "MixturePrior":
        """Accepts the full component form or the short forms
        ``{kind: gaussian, mean, var}`` and
        ``{kind: bernoulli_gaussian, sparsity, slab_var}``."""
        kind = d.get("kind", "mixture")
        if "weights" not in d:
            if kind == "gaussian":
                return gaussian(_as_complex(d["mean"]), float(d["var"]))
            if kind == "bernoulli_gaussian":
                return bernoulli_gaussian(float(d["sparsity"]), float(d["slab_var"]))
        return cls(tuple(map(float, d["weights"])),
                   tuple(_as_complex(m) for m in d["means"]),
                   tuple(map(float, d["variances"])), kind=kind)


def _as_complex(v) -> complex:
    if isinstance(v, (list, tuple)):
        return complex(float(v[0]), float(v[1]))
    return complex(v)


def gaussian(mean: complex = 0.0, var: float = 1.0) -> MixturePrior:
    if var <= 0:
        raise InvalidParameterError("Gaussian prior variance must be > 0")
    return MixturePrior((1.0,), (complex(mean),), (float(var),), kind="gaussian")


def bernoulli_gaussian(sparsity: float, slab_var: float) -> MixturePrior:
    """Spike at zero with probability ``1 - sparsity``, zero-mean slab otherwise."""
    if not 0.0 < sparsity <= 1.0:
        raise InvalidParameterError(f"sparsity must lie in (0, 1], got {sparsity}")
    if slab_var <= 0:
        raise InvalidParameterError("slab variance must be > 0")
    if sparsity == 1.0:
        return MixturePrior((1.0,), (0j,), (float(slab_var),), kind="bernoulli_gaussian")
    return MixturePrior((1.0 - sparsity, sparsity), (0j, 0j), (0.0, float(slab_var)),
                        kind="bernoulli_gaussian")


def qpsk_mixture(power: float = 1.0, spread: float = 0.05) -> MixturePrior:
    """Four equal-weight components on the QPSK points, total power ``power``.

    ``spread`` is the fraction of power held by the per-component variance.
    """
    if not 0.0 < spread < 1.0:
        raise InvalidParameterError("spread must lie in (0, 1)")
    amp = np.sqrt(power * (1.0 - spread) / 2.0)
    pts = tuple(complex(amp * a, amp * b) for a in (1, -1) for b in (1, -1))
    return MixturePrior((0.25,) * 4, pts, (power * spread,) * 4)


def _log_normal(x, mean, var, real: bool):
    """Elementwise log N(x; mean, var) for real or circular complex variables."""
    d2 = np.abs(x - mean) ** 2
    if real:
        return -0.5 * d2 / var - 0.5 * np.log(2.0 * np.pi * var)
    return -d2 / var - np.log(np.pi * var)


def ep_project(prior: MixturePrior, r, sigma, real: bool = False):
    """Mean and variance of ``prior(x) * N(x; r, sigma)`` after normalisation.

    Works elementwise over arrays ``r`` (cavity mean) and ``sigma`` (cavity
    variance, > 0, may be ``inf`` for a flat cavity).  Returns ``(mean, var)``
    where ``var`` is the total variance ``E|x - mean|^2``.
    """
    r = np.asarray(r)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(~(sigma > 0)):
        raise InvalidParameterError("cavity variance must be > 0")
    w = np.asarray(prior.weights, dtype=float)
    mus = np.asarray(prior.means, dtype=complex)
    vs = np.asarray(prior.variances, dtype=float)
    if real:
        mus = mus.real

    flat = np.isinf(sigma)
    sig = np.where(flat, 1.0, sigma)

    if w.size == 1:
        v0, m0 = vs[0], mus[0]
        post_var = v0 * sig / (v0 + sig)
        post_mean = (m0 * sig + r * v0) / (v0 + sig)
        post_mean = np.where(flat, m0, post_mean)
        post_var = np.where(flat, v0, post_var)
        return post_mean, post_var

    logc = []
    means = []
    vars_ = []
    for wi, mi, vi in zip(w, mus, vs):
        if wi == 0:
            continue
        logc.append(np.log(wi) + _log_normal(r, mi, vi + sig, real))
        means.append((mi * sig + r * vi) / (vi + sig))
        vars_.append(vi * sig / (vi + sig))
    logc = np.stack(logc)
    logc -= logc.max(axis=0)
    pi = np.exp(logc)
    pi /= pi.sum(axis=0)
    means = np.stack(means)
    vars_ = np.stack(vars_)
    post_mean = np.sum(pi * means, axis=0)
    second = np.sum(pi * (vars_ + np.abs(means) ** 2), axis=0)
    post_var = np.maximum(second - np.abs(post_mean) ** 2, 0.0)
    if flat.any():
        post_mean = np.where(flat, prior.mean.real if real else prior.mean, post_mean)
        post_var = np.where(flat, prior.var, post_var)
    return post_mean, post_var
