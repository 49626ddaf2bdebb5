"""Two-stage benchmark: bilinear AMP on the pilot block, then least squares.

Stage 1 factors the pilot observations ``Y_p = Q G + W`` with
``G = Hb X_p`` and recovers ``Hb = G X_p^+``.  Stage 2 solves the data
columns by least squares through the estimated effective channel
``Q Hb``.  Both stages reuse the message-passing kernels of
:mod:`bamp_ris.inference`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import IllConditionedPilotError, InvalidDimensionError, RankDeficiencyError
from .inference import (
    BampConfig,
    EntryPrior,
    GaussianField,
    _BilinearLayer,
    _check_finite,
    _h_r_from_q,
    _known_rows,
    _prepare,
    damp,
    input_update,
    output_score_awgn,
)
from .priors import gaussian
from .scene import Priors, RisConfig

# pilot blocks with a condition number above this are treated as singular
PILOT_COND_LIMIT = 1e10


@dataclass
class BaselineReport:
    h_b_hat: np.ndarray
    q_hat: np.ndarray
    h_r_hat: np.ndarray
    x_d_hat: np.ndarray
    pilots: np.ndarray
    stage1_residual: list = field(default_factory=list)

    @property
    def x_hat(self) -> np.ndarray:
        """Full signal estimate ``[pilots | recovered data]``."""
        return np.concatenate([self.pilots, self.x_d_hat], axis=1)

    @property
    def iterations(self) -> int:
        return len(self.stage1_residual)


def _check_pilots(x_pilot: np.ndarray):
    m, t_p = x_pilot.shape
    if t_p < m:
        raise IllConditionedPilotError(f"pilot block {m}x{t_p} has fewer columns than rows")
    sv = np.linalg.svd(x_pilot, compute_uv=False)
    if sv[-1] <= 0 or sv[0] / sv[-1] > PILOT_COND_LIMIT:
        raise IllConditionedPilotError(
            f"pilot block is rank deficient (condition number {sv[0] / max(sv[-1], 1e-300):.3g})")


def bigamp(y, left_prior: EntryPrior, right_prior: EntryPrior, inner_dim: int,
           config: BampConfig, noise_var: float = 0.0, residuals: list | None = None):
    """Single-layer bilinear AMP for ``y = A @ B + W``.

    Returns the posterior means and variances ``(A, v_A, B, v_B)``.  The
    damping and cavity options follow ``config`` exactly as in
    :func:`bamp_ris.inference.run_bamp`.
    """
    y = np.asarray(y)
    rows, cols = y.shape
    floor = config.var_floor
    beta = config.damping
    ah, va = left_prior.initial((rows, inner_dim), floor)
    bh, vb = right_prior.initial((inner_dim, cols), floor)
    a_bar, b_bar = ah, bh
    layer = _BilinearLayer((rows, cols), beta, config.keep_cross_var, floor)
    y_norm = max(float(np.sum(np.abs(y) ** 2)), np.finfo(float).tiny)
    prev_zbar = None
    for it in range(config.max_iters):
        st = layer.plant(GaussianField(ah, va), GaussianField(bh, vb))
        _, _, s, vs = output_score_awgn(st.z_plant, st.v_plant, y, noise_var)
        layer.set_scores(s, vs)
        scores = (layer.state.s_tilde, layer.state.v_s)
        if it and config.damp_estimates:
            a_bar, b_bar = damp(ah, a_bar, beta), damp(bh, b_bar, beta)
        else:
            a_bar, b_bar = ah, bh
        cav_a, _ = input_update(GaussianField(b_bar, vb), scores, "left", a_bar, floor,
                                config.cavity_correction)
        cav_b, _ = input_update(GaussianField(a_bar, va), scores, "right", b_bar, floor,
                                config.cavity_correction)
        ah, va = left_prior.project(cav_a, floor)
        bh, vb = right_prior.project(cav_b, floor)
        _check_finite(it, a_hat=ah, b_hat=bh, a_var=va, b_var=vb)

        zbar = layer.state.z_bar
        if residuals is not None:
            residuals.append(float(np.sum(np.abs(y - zbar) ** 2) / y_norm))
        if prev_zbar is not None:
            change = np.linalg.norm(zbar - prev_zbar) / max(np.linalg.norm(prev_zbar), 1e-300)
            if change < config.stop_tol:
                break
        prev_zbar = zbar
    return ah, va, bh, vb


def run_bigamp_pilot(y_pilot, phases, x_pilot, anchors, priors: Priors, config: BampConfig | None = None,
                     noise_var: float = 0.0, residuals: list | None = None):
    """Stage 1: estimate ``(Hb, Q)`` from the pilot block alone.

    ``G = Hb X_p`` gets a zero-mean Gaussian prior whose variance is the one
    induced by the ``Hb`` prior and the pilot energy.  Known rows of ``Hr``
    enter as exact rows of ``Q``.  Returns ``(h_b_hat, q_hat)``.
    """
    config = config or BampConfig()
    y_pilot, ph, x_pilot, anchors = _prepare(phases, x_pilot, anchors, y_pilot)
    if y_pilot.shape[1] != x_pilot.shape[1]:
        raise InvalidDimensionError("y_pilot and x_pilot must have the same number of columns")
    _check_pilots(x_pilot)
    k = y_pilot.shape[0]
    n = ph.shape[0]
    m, t_p = x_pilot.shape

    energy = float(np.sum(np.abs(x_pilot) ** 2)) / t_p
    g_prior = EntryPrior(gaussian(0.0, priors.h_b_prior.var * energy))
    q_prior = EntryPrior(priors.q_prior, *_known_rows((k, n), anchors * ph[None, :]))
    q_hat, _, g_hat, _ = bigamp(y_pilot, q_prior, g_prior, n, config, noise_var, residuals)
    h_b_hat = g_hat @ np.linalg.pinv(x_pilot)
    return h_b_hat, q_hat


def ls_recover(y_data, q_hat, h_b_hat) -> np.ndarray:
    """Least-squares data recovery ``X_d = (Q Hb)^+ Y_d``."""
    y_data = np.asarray(y_data)
    eff = np.asarray(q_hat) @ np.asarray(h_b_hat)
    k, m = eff.shape
    if y_data.shape[0] != k:
        raise InvalidDimensionError(f"y_data has {y_data.shape[0]} rows, effective channel has {k}")
    sv = np.linalg.svd(eff, compute_uv=False)
    tol = sv[0] * max(k, m) * np.finfo(float).eps if sv.size else 0.0
    rank = int(np.count_nonzero(sv > tol))
    if rank < m:
        raise RankDeficiencyError(f"effective channel Q*Hb has rank {rank} < M={m} (transmit dimension)")
    if y_data.shape[1] == 0:
        return np.zeros((m, 0), dtype=complex)
    x_d, *_ = np.linalg.lstsq(eff, y_data, rcond=None)
    return x_d


def run_baseline(y, phases, pilots, anchors, priors: Priors, config: BampConfig | None = None,
                 noise_var: float = 0.0) -> BaselineReport:
    """Both stages on a full received block ``y = [Y_p | Y_d]``."""
    config = config or BampConfig()
    y, ph, pilots, anchors = _prepare(phases, pilots, anchors, y)
    t_p = pilots.shape[1]
    residuals: list = []
    h_b_hat, q_hat = run_bigamp_pilot(y[:, :t_p], ph, pilots, anchors, priors, config, noise_var, residuals)
    x_d_hat = ls_recover(y[:, t_p:], q_hat, h_b_hat)
    return BaselineReport(h_b_hat, q_hat, _h_r_from_q(q_hat, ph, anchors), x_d_hat, pilots, residuals)


__all__ = ["BaselineReport", "bigamp", "ls_recover", "run_baseline", "run_bigamp_pilot", "RisConfig"]
