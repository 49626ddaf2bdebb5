"""Bidirectional two-layer approximate message passing.

Layer 1 factors ``U = Hb @ X``; layer 2 factors ``A = Q @ U`` observed through
AWGN as ``Y = A + W``.  Each layer runs a bilinear AMP sweep over scalar
Gaussian summaries; the layers talk through a Gaussian message on ``U``.

Messages on individual factor-graph edges are never stored.  Every edge
message collapses into per-entry cavity pairs ``(R, Sigma)`` for the inputs
and score pairs ``(s, v_s)`` for the outputs, which is what makes one sweep
cost a handful of matrix products.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
import logging
from typing import Callable

import numpy as np

from .errors import InvalidDimensionError, InvalidParameterError, NumericalError
from .priors import MixturePrior, ep_project
from .scene import Priors, RisConfig

logger = logging.getLogger(__name__)

NMSE_FLOOR_DB = -200.0


@dataclass
class GaussianField:
    """Elementwise Gaussian summary: a mean matrix and a variance matrix."""

    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        self.var = np.broadcast_to(np.asarray(self.var, dtype=float), np.shape(self.mean)).copy()
        if np.any(np.isnan(self.var)) or np.any(self.var < 0):
            raise InvalidParameterError("variances must be non-negative")

    @property
    def shape(self):
        return np.shape(self.mean)


@dataclass
class LayerState:
    """Plant estimates and output scores of one bilinear layer."""

    z_bar: np.ndarray
    v_bar: np.ndarray
    z_plant: np.ndarray
    v_plant: np.ndarray
    s_tilde: np.ndarray
    v_s: np.ndarray
    prev_s_tilde: np.ndarray

    @classmethod
    def empty(cls, shape) -> "LayerState":
        z = np.zeros(shape, dtype=complex)
        r = np.zeros(shape)
        return cls(z, r, z.copy(), r.copy(), z.copy(), r.copy(), z.copy())


@dataclass
class BampConfig:
    max_iters: int = 20
    damping: float = 0.3
    var_floor: float = 1e-12
    inner_iters: int = 1
    stop_tol: float = 1e-6
    # keep the product-of-variances term in the plant variance
    keep_cross_var: bool = True
    # feed damped belief means (rather than the raw ones) into the cavity updates
    damp_estimates: bool = True
    # include the peer-variance term in the cavity means
    cavity_correction: bool = True

    def __post_init__(self):
        if not 0.0 < self.damping <= 1.0:
            raise InvalidParameterError(f"damping must lie in (0, 1], got {self.damping}")
        if self.var_floor <= 0:
            raise InvalidParameterError("var_floor must be > 0")
        if self.max_iters < 1 or self.inner_iters < 1:
            raise InvalidParameterError("max_iters and inner_iters must be >= 1")
        if self.stop_tol < 0:
            raise InvalidParameterError("stop_tol must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BampConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise InvalidParameterError(f"unknown BAMP config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class IterationRecord:
    iteration: int
    residual: float
    nmse_db: dict = field(default_factory=dict)
    clamped: int = 0

    def to_dict(self) -> dict:
        return {"iteration": self.iteration, "residual": self.residual,
                "nmse_db": dict(self.nmse_db), "clamped": self.clamped}


@dataclass
class RunReport:
    x_hat: np.ndarray
    h_b_hat: np.ndarray
    q_hat: np.ndarray
    h_r_hat: np.ndarray
    per_iteration: list = field(default_factory=list)
    converged_at: int | None = None

    @property
    def iterations(self) -> int:
        return len(self.per_iteration)

    @property
    def final_residual(self) -> float:
        return self.per_iteration[-1].residual if self.per_iteration else float("nan")


# ---------------------------------------------------------------------------
# scalar kernels


def damp(new_value, old_value, beta: float):
    """Convex combination ``beta*new + (1-beta)*old``."""
    if not 0.0 < beta <= 1.0:
        raise InvalidParameterError(f"damping factor must lie in (0, 1], got {beta}")
    if beta == 1.0:
        return new_value
    return beta * new_value + (1.0 - beta) * old_value


def _scores(z_plant, v_plant, z_tilde, v_tilde):
    s_tilde = (z_tilde - z_plant) / v_plant
    v_s = (v_plant - v_tilde) / v_plant ** 2
    return s_tilde, v_s


def output_score_awgn(z_plant, v_plant, y, noise_var: float):
    """Posterior moments of ``N(a; Z, V) N(y; a, N0)`` and the derived scores.

    Returns ``(z_tilde, v_tilde, s_tilde, v_s)`` with ``s_tilde = (z_tilde - Z)/V``
    and ``v_s = -(v_tilde - V)/V**2``, the first and negated second derivative of
    ``log int N(a; Z, V) N(y; a, N0) da`` with respect to ``Z``.
    """
    if noise_var < 0:
        raise InvalidParameterError(f"noise variance must be >= 0, got {noise_var}")
    v_plant = np.asarray(v_plant, dtype=float)
    if np.any(v_plant <= 0):
        raise InvalidParameterError("plant variance must be > 0")
    denom = v_plant + noise_var
    z_tilde = z_plant + v_plant * (y - z_plant) / denom
    v_tilde = v_plant * noise_var / denom
    # closed forms of the score pair, free of cancellation in (V - v_tilde)
    s_tilde = (y - z_plant) / denom
    v_s = 1.0 / denom
    return z_tilde, v_tilde, s_tilde, v_s


def output_score_pseudo(z_plant, v_plant, incoming: GaussianField):
    """As :func:`output_score_awgn`, with a Gaussian message on ``U`` as likelihood.

    Entries whose incoming variance is ``inf`` carry no information: their
    posterior equals the plant and both scores are zero.
    """
    r = np.asarray(incoming.mean)
    sig = np.asarray(incoming.var, dtype=float)
    if np.shape(r) != np.shape(z_plant):
        raise InvalidDimensionError("incoming message and plant shapes differ")
    if np.any(np.isnan(sig)) or np.any(sig < 0):
        raise NumericalError("incoming message variance is not a valid variance")
    v_plant = np.asarray(v_plant, dtype=float)
    flat = np.isinf(sig)
    sig_f = np.where(flat, 1.0, sig)
    denom = v_plant + sig_f
    z_tilde = np.where(flat, z_plant, z_plant + v_plant * (r - z_plant) / denom)
    v_tilde = np.where(flat, v_plant, v_plant * sig_f / denom)
    s_tilde = np.where(flat, 0.0, (r - z_plant) / denom)
    v_s = np.where(flat, 0.0, 1.0 / denom)
    return z_tilde, v_tilde, s_tilde, v_s


def plant_estimates(a_belief: GaussianField, b_belief: GaussianField, prev: LayerState | None = None,
                    keep_cross_var: bool = True) -> LayerState:
    """Predicted mean/variance of ``a @ b`` with the Onsager correction.

    ``prev.s_tilde`` supplies the previous-iteration score used in the
    correction ``Z = Zbar - s_prev * Vbar``.
    """
    a, va = a_belief.mean, a_belief.var
    b, vb = b_belief.mean, b_belief.var
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise InvalidDimensionError(f"cannot multiply {a.shape} by {b.shape}")
    z_bar = a @ b
    v_bar = (np.abs(a) ** 2) @ vb + va @ (np.abs(b) ** 2)
    s_prev = prev.s_tilde if prev is not None else np.zeros_like(z_bar)
    z = z_bar - s_prev * v_bar
    v = v_bar + va @ vb if keep_cross_var else v_bar.copy()
    return LayerState(z_bar, v_bar, z, v, np.zeros_like(z_bar), np.zeros_like(v_bar), s_prev)


def input_update(peer_belief: GaussianField, scores, axis: str, estimate=None, var_floor: float = 1e-12,
                 correct: bool = False):
    """Cavity ``(R, Sigma)`` for the left or right factor of a bilinear layer.

    For ``C = A @ B`` with output scores ``(s, v_s)`` on ``C``:

    * ``axis="left"`` updates ``A`` given the peer belief on ``B``:
      ``1/Sigma = v_s @ |B|^T``, ``R = A_hat + Sigma * (s @ B^H)``.
    * ``axis="right"`` updates ``B`` given the peer belief on ``A``:
      ``1/Sigma = |A|^T @ v_s``, ``R = B_hat + Sigma * (A^H @ s)``.

    With ``correct=True`` the mean becomes ``A_hat * (1 - Sigma * v_s @ v_B^T)
    + Sigma * (s @ B^H)`` (and its mirror image), which accounts for the
    peer's own uncertainty.

    Entries with zero accumulated precision get ``Sigma = inf`` (a flat
    cavity).  Positive precisions below ``1/huge`` are left alone; negative
    ones cannot occur since ``v_s >= 0``.  Returns ``(cavity, n_clamped)``.
    """
    s_tilde, v_s = scores
    p = peer_belief.mean
    p2 = np.abs(p) ** 2
    if axis == "left":
        prec = v_s @ p2.T
        num = s_tilde @ p.conj().T
    elif axis == "right":
        prec = p2.T @ v_s
        num = p.conj().T @ s_tilde
    else:
        raise InvalidParameterError(f"axis must be 'left' or 'right', got {axis!r}")
    if estimate is None:
        estimate = np.zeros_like(num)
    if correct:
        if axis == "left":
            corr = v_s @ peer_belief.var.T
        else:
            corr = peer_belief.var.T @ v_s
    else:
        corr = None
    bad = ~(prec > 0)
    n_clamped = int(np.count_nonzero(bad & (prec != 0)))
    with np.errstate(divide="ignore"):
        sigma = np.where(bad, np.inf, 1.0 / np.where(bad, 1.0, prec))
    sigma = np.where(np.isfinite(sigma), np.maximum(sigma, var_floor), sigma)
    sig0 = np.where(bad, 0.0, sigma)
    base = estimate if corr is None else estimate * (1.0 - sig0 * corr)
    r = np.where(bad, estimate, base + sig0 * num)
    return GaussianField(r, sigma), n_clamped


def interlayer_message(messages: GaussianField, axis: int = 0) -> GaussianField:
    """Gaussian product of per-edge messages stacked along ``axis``.

    ``1/Sigma = sum_k 1/Sigma_k`` and ``R = Sigma * sum_k R_k/Sigma_k``.
    Flat messages (``Sigma_k = inf``) drop out; if every message is flat the
    result is flat with ``R = 0``.
    """
    r = np.asarray(messages.mean)
    sig = np.asarray(messages.var, dtype=float)
    with np.errstate(divide="ignore"):
        prec_k = np.where(np.isinf(sig), 0.0, 1.0 / sig)
    prec = prec_k.sum(axis=axis)
    num = (prec_k * r).sum(axis=axis)
    flat = prec == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        sigma = np.where(flat, np.inf, 1.0 / np.where(flat, 1.0, prec))
        mean = np.where(flat, 0.0, num * np.where(flat, 0.0, sigma))
    return GaussianField(mean, sigma)


def gaussian_product(a: GaussianField, b: GaussianField) -> GaussianField:
    """Normalised product of two elementwise Gaussians (``inf`` variance is flat)."""
    stacked = GaussianField(np.stack([a.mean, b.mean]), np.stack([a.var, b.var]))
    return interlayer_message(stacked, axis=0)


# ---------------------------------------------------------------------------
# priors with known entries


@dataclass
class EntryPrior:
    """A scalar prior shared by all entries, plus a mask of exactly known entries."""

    prior: MixturePrior
    known_mask: np.ndarray | None = None
    known_values: np.ndarray | None = None

    def project(self, cavity: GaussianField, var_floor: float):
        mean, var = ep_project(self.prior, cavity.mean, cavity.var)
        if self.known_mask is not None:
            mean = np.where(self.known_mask, self.known_values, mean)
            var = np.where(self.known_mask, var_floor, var)
        return mean, np.maximum(var, var_floor)

    def initial(self, shape, var_floor: float):
        mean = np.full(shape, self.prior.mean, dtype=complex)
        var = np.full(shape, max(self.prior.var, var_floor))
        if self.known_mask is not None:
            mean = np.where(self.known_mask, self.known_values, mean)
            var = np.where(self.known_mask, var_floor, var)
        return mean, var


def _known_columns(shape, values):
    mask = np.zeros(shape, dtype=bool)
    full = np.zeros(shape, dtype=complex)
    if values is not None and values.size:
        mask[:, : values.shape[1]] = True
        full[:, : values.shape[1]] = values
    return mask, full


def _known_rows(shape, values):
    mask = np.zeros(shape, dtype=bool)
    full = np.zeros(shape, dtype=complex)
    if values is not None and values.size:
        mask[: values.shape[0]] = True
        full[: values.shape[0]] = values
    return mask, full


def nmse_db(estimate, truth) -> float:
    """``10 log10(||truth - estimate||^2 / ||truth||^2)``, floored at -200 dB."""
    estimate = np.asarray(estimate)
    truth = np.asarray(truth)
    if estimate.shape != truth.shape:
        raise InvalidDimensionError(f"shape mismatch {estimate.shape} vs {truth.shape}")
    den = np.sum(np.abs(truth) ** 2)
    if den == 0:
        raise InvalidParameterError("NMSE undefined for an all-zero reference")
    num = np.sum(np.abs(truth - estimate) ** 2)
    if num == 0:
        return NMSE_FLOOR_DB
    return max(float(10.0 * np.log10(num / den)), NMSE_FLOOR_DB)


def _check_finite(iteration: int, **fields):
    for name, arr in fields.items():
        if not np.all(np.isfinite(arr)):
            raise NumericalError(f"non-finite values in {name} at iteration {iteration}")


class _BilinearLayer:
    """Bookkeeping for one bilinear AMP layer ``out = left @ right``."""

    def __init__(self, shape, beta: float, keep_cross_var: bool, var_floor: float):
        self.state = LayerState.empty(shape)
        self.beta = beta
        self.keep_cross_var = keep_cross_var
        self.var_floor = var_floor
        self.started = False

    def plant(self, left: GaussianField, right: GaussianField) -> LayerState:
        st = self.state
        new = plant_estimates(left, right, st, keep_cross_var=False)
        if self.started:
            new.z_bar = damp(new.z_bar, st.z_bar, self.beta)
            new.v_bar = damp(new.v_bar, st.v_bar, self.beta)
        new.z_plant = new.z_bar - st.s_tilde * new.v_bar
        new.v_plant = new.v_bar + (left.var @ right.var if self.keep_cross_var else 0.0)
        new.v_plant = np.maximum(new.v_plant, self.var_floor)
        new.s_tilde, new.v_s = st.s_tilde, st.v_s
        self.state = new
        return new

    def set_scores(self, s_tilde, v_s):
        st = self.state
        if self.started:
            s_tilde = damp(s_tilde, st.s_tilde, self.beta)
            v_s = damp(v_s, st.v_s, self.beta)
        st.s_tilde, st.v_s = s_tilde, v_s
        self.started = True


def _prepare(phases, pilots, anchors, y):
    ph = phases.phases if isinstance(phases, RisConfig) else np.asarray(phases, dtype=complex)
    y = np.asarray(y)
    if y.ndim != 2:
        raise InvalidDimensionError("y must be a (K, T) matrix")
    K, T = y.shape
    N = ph.shape[0]
    pilots = np.asarray(pilots, dtype=complex)
    if pilots.ndim != 2 or pilots.shape[1] < 1:
        raise InvalidDimensionError("at least one pilot column is required")
    if anchors is None:
        anchors = np.zeros((0, N), dtype=complex)
    anchors = np.asarray(anchors, dtype=complex).reshape(-1, N)
    if pilots.shape[1] > T or anchors.shape[0] > K:
        raise InvalidDimensionError("pilot/anchor shapes inconsistent with y")
    return y, ph, pilots, anchors


def run_bamp(y, phases, pilots, anchors, priors: Priors, config: BampConfig | None = None,
             noise_var: float = 0.0, truth=None, trace: Callable[[dict], None] | None = None) -> RunReport:
    """Jointly estimate ``X``, ``Hb`` and ``Hr`` from ``Y = Hr diag(phases) Hb X + W``.

    One outer iteration runs layer 1 against the current message on ``U``,
    updates ``X`` and ``Hb``, hands the resulting belief on ``U`` to layer 2,
    updates ``Q`` against ``Y`` (``inner_iters`` times) and sends the new
    ``U`` cavity back down.

    Parameters
    ----------
    y : (K, T) complex array
    phases : RisConfig or (N,) unit-modulus array
    pilots : (M, T_p) known leading columns of ``X``
    anchors : (K_p, N) known leading rows of ``Hr`` (may be empty)
    priors : priors on ``X``, ``Hb`` and ``Q``
    noise_var : AWGN variance ``N0``
    truth : optional object with ``x``, ``h_b``, ``h_r`` attributes; when given
        each iteration record carries the per-variable NMSE
    trace : optional callable receiving one dict per iteration
    """
    config = config or BampConfig()
    y, ph, pilots, anchors = _prepare(phases, pilots, anchors, y)
    K, T = y.shape
    N = ph.shape[0]
    M = pilots.shape[0]
    floor = config.var_floor
    beta = config.damping
    correct = config.cavity_correction

    x_prior = EntryPrior(priors.x_prior, *_known_columns((M, T), pilots))
    hb_prior = EntryPrior(priors.h_b_prior)
    q_prior = EntryPrior(priors.q_prior, *_known_rows((K, N), anchors * ph[None, :]))

    xh, vx = x_prior.initial((M, T), floor)
    hb, vb = hb_prior.initial((N, M), floor)
    qh, vq = q_prior.initial((K, N), floor)
    # damped copies of the belief means, used on the cavity side only
    x_bar, hb_bar, q_bar, u_bar = xh, hb, qh, None

    def smooth(new, old):
        if old is None or not config.damp_estimates:
            return new
        return damp(new, old, beta)

    layer1 = _BilinearLayer((N, T), beta, config.keep_cross_var, floor)
    layer2 = _BilinearLayer((K, T), beta, config.keep_cross_var, floor)
    msg_u = GaussianField(np.zeros((N, T), dtype=complex), np.full((N, T), np.inf))

    y_norm = max(float(np.sum(np.abs(y) ** 2)), np.finfo(float).tiny)
    report = RunReport(xh, hb, qh, _h_r_from_q(qh, ph, anchors))
    prev_zbar2 = None

    for it in range(config.max_iters):
        clamped = 0
        # layer 1: U = Hb @ X, observed through the message from layer 2
        st1 = layer1.plant(GaussianField(hb, vb), GaussianField(xh, vx))
        z1, v1 = st1.z_plant, st1.v_plant
        zt1, vt1, s1, vs1 = output_score_pseudo(z1, v1, msg_u)
        layer1.set_scores(s1, vs1)
        scores1 = (layer1.state.s_tilde, layer1.state.v_s)

        if it:
            x_bar, hb_bar = smooth(xh, x_bar), smooth(hb, hb_bar)
        cav_x, c1 = input_update(GaussianField(hb_bar, vb), scores1, "right", x_bar, floor, correct)
        cav_b, c2 = input_update(GaussianField(x_bar, vx), scores1, "left", hb_bar, floor, correct)
        xh, vx = x_prior.project(cav_x, floor)
        hb, vb = hb_prior.project(cav_b, floor)
        clamped += c1 + c2

        # layer 2: A = Q @ U with U's prior N(Z1, V1) coming from layer 1
        u_prior = GaussianField(z1, v1)
        uh, vu = zt1, np.maximum(vt1, floor)
        for inner in range(config.inner_iters):
            if inner:
                post_u = gaussian_product(u_prior, msg_u)
                uh, vu = post_u.mean, np.maximum(post_u.var, floor)
            st2 = layer2.plant(GaussianField(qh, vq), GaussianField(uh, vu))
            _, _, s2, vs2 = output_score_awgn(st2.z_plant, st2.v_plant, y, noise_var)
            layer2.set_scores(s2, vs2)
            scores2 = (layer2.state.s_tilde, layer2.state.v_s)

            if it or inner:
                q_bar, u_bar = smooth(qh, q_bar), smooth(uh, u_bar)
            else:
                u_bar = uh
            cav_q, c3 = input_update(GaussianField(u_bar, vu), scores2, "left", q_bar, floor, correct)
            msg_u, c4 = input_update(GaussianField(q_bar, vq), scores2, "right", u_bar, floor, correct)
            qh, vq = q_prior.project(cav_q, floor)
            clamped += c3 + c4

        _check_finite(it, x_hat=xh, h_b_hat=hb, q_hat=qh, u_hat=uh, x_var=vx, h_b_var=vb, q_var=vq)
        if np.any(np.isnan(msg_u.mean)) or np.any(np.isnan(msg_u.var)):
            raise NumericalError(f"non-finite values in u_message at iteration {it}")

        zbar2 = layer2.state.z_bar
        residual = float(np.sum(np.abs(y - zbar2) ** 2) / y_norm)
        h_r_hat = _h_r_from_q(qh, ph, anchors)
        rec = IterationRecord(it, residual, clamped=clamped)
        if truth is not None:
            rec.nmse_db = {"x": nmse_db(xh, truth.x), "h_b": nmse_db(hb, truth.h_b),
                           "h_r": nmse_db(h_r_hat, truth.h_r)}
        report.per_iteration.append(rec)
        report.x_hat, report.h_b_hat, report.q_hat, report.h_r_hat = xh, hb, qh, h_r_hat
        if trace is not None:
            trace(rec.to_dict())
        logger.debug("iter %d residual %.3e clamped %d", it, residual, clamped)

        if prev_zbar2 is not None:
            change = np.linalg.norm(zbar2 - prev_zbar2) / max(np.linalg.norm(prev_zbar2), 1e-300)
            if change < config.stop_tol:
                report.converged_at = it
                break
        prev_zbar2 = zbar2

    return report


def _h_r_from_q(q_hat, phases, anchors):
    """``Hr = Q diag(phases)^-1`` with the known rows copied in verbatim."""
    h_r = q_hat / phases[None, :]
    if anchors.shape[0]:
        h_r[: anchors.shape[0]] = anchors
    return h_r
