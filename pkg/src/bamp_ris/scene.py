"""Synthetic ground truth for the RIS-assisted multi-user MISO link.

The received block is ``Y = Hr @ diag(phases) @ Hb @ X + W`` with both channels
given in the beam domain, where they are sparse.  ``Q = Hr @ diag(phases)``
and ``U = Hb @ X`` are the two intermediate products the estimators work on.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from .errors import InvalidDimensionError, InvalidParameterError
from .priors import MixturePrior, bernoulli_gaussian, qpsk_mixture

DEFAULT_SPARSITY = 0.2


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def dft_matrix(n: int) -> np.ndarray:
    """Unitary DFT matrix with entries ``exp(-2j*pi*a*b/n) / sqrt(n)``."""
    if n < 1:
        raise InvalidDimensionError(f"DFT size must be >= 1, got {n}")
    idx = np.arange(n)
    # reduce a*b mod n before scaling so large n keeps full phase precision
    phase = np.outer(idx, idx) % n
    return np.exp(-2j * np.pi * phase / n) / np.sqrt(n)


def to_beam_domain(h_b_antenna, h_r_antenna):
    """Map antenna-domain channels to the beam domain: ``(Hb F1, F2 Hr)``."""
    f1 = dft_matrix(h_b_antenna.shape[1])
    f2 = dft_matrix(h_r_antenna.shape[0])
    return h_b_antenna @ f1, f2 @ h_r_antenna


def to_antenna_domain(h_b, h_r):
    """Inverse of :func:`to_beam_domain`."""
    f1 = dft_matrix(h_b.shape[1])
    f2 = dft_matrix(h_r.shape[0])
    return h_b @ f1.conj().T, f2.conj().T @ h_r


def sample_sparse_channel(rows: int, cols: int, sparsity: float, slab_var: float,
                          rng_seed=None) -> np.ndarray:
    """Bernoulli-Gaussian matrix: each entry nonzero w.p. ``sparsity``."""
    if rows < 1 or cols < 1:
        raise InvalidDimensionError("channel dimensions must be >= 1")
    prior = bernoulli_gaussian(sparsity, slab_var)
    return prior.sample((rows, cols), _rng(rng_seed))


@dataclass(frozen=True)
class RisConfig:
    n_elements: int
    bits: int
    phases: np.ndarray

    def __post_init__(self):
        if self.phases.shape != (self.n_elements,):
            raise InvalidDimensionError("phase vector length must equal n_elements")


def build_ris_phases(n: int, bits: int, rng_seed=None) -> RisConfig:
    """Draw each RIS phase uniformly from the ``2**bits``-point unit-circle grid."""
    if bits < 1:
        raise InvalidParameterError(f"RIS phase resolution must be >= 1 bit, got {bits}")
    if n < 1:
        raise InvalidDimensionError("RIS needs at least one element")
    levels = 2 ** bits
    j = _rng(rng_seed).integers(0, levels, size=n)
    # exact values on the axes so that 1-bit phases are exactly +-1
    lut = np.exp(2j * np.pi * np.arange(levels) / levels)
    for k in range(levels):
        frac = k / levels
        if frac in (0.0, 0.25, 0.5, 0.75):
            lut[k] = {0.0: 1, 0.25: 1j, 0.5: -1, 0.75: -1j}[frac]
    return RisConfig(n, bits, lut[j])


def pilot_block(m: int, t_pilot: int) -> np.ndarray:
    """Unit-modulus DFT pilots with mutually orthogonal rows (or columns if t_pilot < m)."""
    if t_pilot >= m:
        return dft_matrix(t_pilot)[:m, :] * np.sqrt(t_pilot)
    return dft_matrix(m)[:, :t_pilot] * np.sqrt(m)


def design_signal(m: int, t: int, t_pilot: int, x_prior: MixturePrior, rng_seed=None) -> np.ndarray:
    """Transmit block ``[pilots | data]`` of shape ``(m, t)``."""
    if t_pilot > t:
        raise InvalidParameterError(f"t_pilot={t_pilot} exceeds block length t={t}")
    if m < 1 or t < 1 or t_pilot < 0:
        raise InvalidDimensionError("signal dimensions must be positive")
    x = np.empty((m, t), dtype=complex)
    if t_pilot:
        x[:, :t_pilot] = pilot_block(m, t_pilot)
    x[:, t_pilot:] = x_prior.sample((m, t - t_pilot), _rng(rng_seed))
    return x


@dataclass(frozen=True)
class Priors:
    x_prior: MixturePrior
    h_b_prior: MixturePrior
    q_prior: MixturePrior

    def to_dict(self) -> dict:
        return {"x_prior": self.x_prior.to_dict(), "h_b_prior": self.h_b_prior.to_dict(),
                "q_prior": self.q_prior.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "Priors":
        return cls(MixturePrior.from_dict(d["x_prior"]), MixturePrior.from_dict(d["h_b_prior"]),
                   MixturePrior.from_dict(d["q_prior"]))


def default_priors(sparsity: float = DEFAULT_SPARSITY, x_prior: MixturePrior | None = None) -> Priors:
    """Sparse channels with slab variance ``1/sparsity`` so ``E|h|^2 = 1``."""
    bg = bernoulli_gaussian(sparsity, 1.0 / sparsity)
    return Priors(x_prior or qpsk_mixture(), bg, bg)


@dataclass(frozen=True)
class SceneDims:
    m: int
    k: int
    n: int
    t: int
    t_pilot: int
    k_anchor: int

    def validate(self):
        for name in ("m", "k", "n", "t"):
            if getattr(self, name) < 1:
                raise InvalidDimensionError(f"{name} must be >= 1")
        if self.t_pilot < 0 or self.k_anchor < 0:
            raise InvalidDimensionError("t_pilot and k_anchor must be >= 0")
        if self.t_pilot > self.t:
            raise InvalidParameterError(f"t_pilot ({self.t_pilot}) must not exceed t ({self.t})")
        if self.k_anchor > self.k:
            raise InvalidParameterError(f"k_anchor ({self.k_anchor}) must not exceed k ({self.k})")


@dataclass
class Scene:
    dims: SceneDims
    h_b: np.ndarray
    h_r: np.ndarray
    ris: RisConfig
    x: np.ndarray
    y: np.ndarray
    noise_var: float
    snr_db: float
    priors: Priors
    seed: int | None = None
    q: np.ndarray = field(init=False)
    u: np.ndarray = field(init=False)

    def __post_init__(self):
        self.q = self.h_r * self.ris.phases[None, :]
        self.u = self.h_b @ self.x

    # short aliases matching the usual symbols
    m_bs = property(lambda self: self.dims.m)
    k_users = property(lambda self: self.dims.k)
    n_ris = property(lambda self: self.dims.n)
    t_slots = property(lambda self: self.dims.t)
    t_pilot = property(lambda self: self.dims.t_pilot)
    k_anchor = property(lambda self: self.dims.k_anchor)

    @property
    def pilots(self) -> np.ndarray:
        return self.x[:, : self.dims.t_pilot]

    @property
    def anchors(self) -> np.ndarray:
        return self.h_r[: self.dims.k_anchor]

    @property
    def phases(self) -> np.ndarray:
        return self.ris.phases


def make_scene(dims: SceneDims, priors: Priors, ris: RisConfig | int, snr_db: float,
               rng_seed: int = 0) -> Scene:
    """Draw channels, signal and noise for one channel realisation.

    ``ris`` is either a ready :class:`RisConfig` or the phase resolution in
    bits, in which case phases are drawn from the scene seed.  ``snr_db=inf``
    gives a noiseless observation.  The noise variance is set from the
    realised signal power ``||Q U||^2 / (K T)``.
    """
    dims.validate()
    ss = np.random.SeedSequence(rng_seed)
    s_hb, s_hr, s_ris, s_x, s_w = (np.random.default_rng(s) for s in ss.spawn(5))
    h_b = priors.h_b_prior.sample((dims.n, dims.m), s_hb)
    h_r = priors.q_prior.sample((dims.k, dims.n), s_hr)
    if not isinstance(ris, RisConfig):
        ris = build_ris_phases(dims.n, int(ris), s_ris)
    elif ris.n_elements != dims.n:
        raise InvalidDimensionError("RIS size does not match n")
    x = design_signal(dims.m, dims.t, dims.t_pilot, priors.x_prior, s_x)
    q = h_r * ris.phases[None, :]
    clean = q @ (h_b @ x)
    if math.isinf(snr_db) and snr_db > 0:
        noise_var = 0.0
        y = clean.copy()
    else:
        power = np.mean(np.abs(clean) ** 2)
        noise_var = float(power / 10.0 ** (snr_db / 10.0))
        w = s_w.standard_normal(clean.shape) + 1j * s_w.standard_normal(clean.shape)
        y = clean + np.sqrt(noise_var / 2.0) * w
    return Scene(dims, h_b, h_r, ris, x, y, noise_var, float(snr_db), priors,
                 seed=None if isinstance(rng_seed, np.random.Generator) else rng_seed)
