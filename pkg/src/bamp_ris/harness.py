"""Monte Carlo NMSE sweeps, ambiguity alignment and the figure presets.

Each trial draws a fresh scene from ``base_seed + trial`` (the same draw at
every SNR point, so curves share channel realisations), runs the requested
estimators, aligns the estimates and records one NMSE per variable.  The
result table keeps every per-trial value so that statistics can be
recomputed exactly and partial runs can be merged.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
import csv
from dataclasses import dataclass, field, replace
import io
import logging
import math
import os
from typing import Callable, Iterable

import numpy as np

from .baseline import run_baseline
from .errors import ConfigError, InvalidParameterError
from .inference import BampConfig, nmse_db, run_bamp
from .scene import Priors, SceneDims, default_priors, make_scene

logger = logging.getLogger(__name__)

ALGORITHMS = ("bamp", "bigamp_ls")
VARIABLES = ("X", "Hb", "Hr")
SWEEP_PARAMS = ("t_pilot", "k_anchor", "n")
AVERAGING = ("db", "linear")
DIVERGENCE_RESIDUAL = 1e3
WORKERS_ENV = "BAMP_RIS_WORKERS"
CSV_HEADER = ("snr_db", "algorithm", "variable", "nmse_db_mean", "nmse_db_std", "trials", "divergent")


@dataclass
class ExperimentSpec:
    """Everything needed to reproduce a sweep.

    ``sweep_param``/``sweep_values`` optionally vary one dimension; each value
    becomes its own curve, labelled ``algo[param=value]`` in the table.
    """

    dims: SceneDims
    snr_grid: tuple
    trials: int
    base_seed: int = 0
    algorithms: tuple = ALGORITHMS
    bamp: BampConfig = field(default_factory=BampConfig)
    priors: Priors = field(default_factory=default_priors)
    ris_bits: int = 1
    sweep_param: str | None = None
    sweep_values: tuple = ()
    averaging: str = "db"
    first_trial: int = 0
    name: str = "custom"

    def __post_init__(self):
        self.snr_grid = tuple(float(s) for s in self.snr_grid)
        self.algorithms = tuple(self.algorithms)
        self.sweep_values = tuple(int(v) for v in self.sweep_values)
        self.validate()

    def validate(self):
        if self.trials < 1:
            raise ConfigError("trials: must be >= 1")
        if not self.snr_grid:
            raise ConfigError("snr_grid: must not be empty")
        if self.first_trial < 0:
            raise ConfigError("first_trial: must be >= 0")
        bad = [a for a in self.algorithms if a not in ALGORITHMS]
        if bad or not self.algorithms:
            raise ConfigError(f"algorithms: unknown {bad}, valid names are {list(ALGORITHMS)}")
        if self.averaging not in AVERAGING:
            raise ConfigError(f"averaging: must be one of {list(AVERAGING)}")
        if self.ris_bits < 1:
            raise ConfigError("ris_bits: must be >= 1")
        if self.sweep_param is not None:
            if self.sweep_param not in SWEEP_PARAMS:
                raise ConfigError(f"sweep_param: must be one of {list(SWEEP_PARAMS)}")
            if not self.sweep_values:
                raise ConfigError("sweep_values: required when sweep_param is set")
        for d in self.variant_dims().values():
            try:
                d.validate()
            except ValueError as exc:
                raise ConfigError(f"dims: {exc}") from exc

    def variant_dims(self) -> dict:
        """Map curve suffix (``""`` when there is no sweep) to scene dimensions."""
        if self.sweep_param is None:
            return {"": self.dims}
        return {f"[{self.sweep_param}={v}]": replace(self.dims, **{self.sweep_param: v})
                for v in self.sweep_values}

    @property
    def trial_range(self) -> range:
        return range(self.first_trial, self.first_trial + self.trials)

    def to_dict(self) -> dict:
        d = self.dims
        return {
            "name": self.name,
            "dims": {"m": d.m, "k": d.k, "n": d.n, "t": d.t, "t_pilot": d.t_pilot, "k_anchor": d.k_anchor},
            "snr_grid": list(self.snr_grid),
            "trials": self.trials,
            "first_trial": self.first_trial,
            "base_seed": self.base_seed,
            "algorithms": list(self.algorithms),
            "bamp": self.bamp.to_dict(),
            "priors": self.priors.to_dict(),
            "ris_bits": self.ris_bits,
            "sweep_param": self.sweep_param,
            "sweep_values": list(self.sweep_values),
            "averaging": self.averaging,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        """Strict inverse of :meth:`to_dict`: every key must be present."""
        if not isinstance(d, dict):
            raise ConfigError("config must be a mapping of field names to values")
        required = set(cls.__dataclass_fields__)
        missing = sorted(required - set(d))
        unknown = sorted(set(d) - required)
        if missing:
            raise ConfigError(f"missing field(s): {', '.join(missing)}")
        if unknown:
            raise ConfigError(f"unknown field(s): {', '.join(unknown)}")
        try:
            dims = SceneDims(**{k: int(v) for k, v in d["dims"].items()})
        except TypeError as exc:
            raise ConfigError(f"dims: {exc}") from exc
        try:
            bamp = BampConfig.from_dict(d["bamp"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bamp: {exc}") from exc
        try:
            priors = Priors.from_dict(d["priors"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"priors: {exc}") from exc
        return cls(dims=dims, snr_grid=tuple(d["snr_grid"]), trials=int(d["trials"]),
                   base_seed=int(d["base_seed"]), algorithms=tuple(d["algorithms"]), bamp=bamp,
                   priors=priors, ris_bits=int(d["ris_bits"]), sweep_param=d["sweep_param"],
                   sweep_values=tuple(d["sweep_values"] or ()), averaging=d["averaging"],
                   first_trial=int(d["first_trial"]), name=str(d["name"]))


# ---------------------------------------------------------------------------
# alignment


@dataclass
class Alignment:
    h_b: np.ndarray
    h_r: np.ndarray
    x: np.ndarray | None
    ris_scale: np.ndarray
    bs_scale: np.ndarray | None
    skipped: list = field(default_factory=list)


def _fit_scales(est: np.ndarray, ref: np.ndarray, axis: int, label: str, skipped: list) -> np.ndarray:
    # per-index LS fit of c in  ref ~ c * est  along the given axis
    num = np.sum(np.conj(est) * ref, axis=axis)
    den = np.sum(np.abs(est) ** 2, axis=axis)
    ref_norm = np.sum(np.abs(ref) ** 2, axis=axis)
    scale = np.ones(num.shape, dtype=complex)
    for i in range(num.size):
        if ref_norm[i] == 0 or den[i] == 0:
            skipped.append((label, i))
            continue
        scale[i] = num[i] / den[i]
    return scale


def align_estimates(h_b_hat, h_r_hat, anchors, x_hat=None, pilots=None) -> Alignment:
    """Undo the diagonal scaling ambiguities before scoring.

    ``Hr D, D^-1 Hb`` is resolved per RIS element from the anchor rows of
    ``Hr``; ``Hb E, E^-1 X`` per BS antenna from the pilot columns of ``X``.
    Indices whose reference is all zero are left unscaled and reported in
    ``skipped``.
    """
    h_b = np.array(h_b_hat, dtype=complex)
    h_r = np.array(h_r_hat, dtype=complex)
    anchors = np.asarray(anchors if anchors is not None else np.zeros((0, h_r.shape[1])), dtype=complex)
    k_p = anchors.shape[0]
    t_p = 0 if pilots is None else np.asarray(pilots).shape[1]
    if k_p < 1 and t_p < 1:
        raise InvalidParameterError("alignment needs at least one anchor row or pilot column")
    skipped: list = []

    ris_scale = np.ones(h_r.shape[1], dtype=complex)
    if k_p:
        ris_scale = _fit_scales(h_r[:k_p], anchors, 0, "ris", skipped)
        h_r *= ris_scale[None, :]
        h_b /= ris_scale[:, None]

    x = None if x_hat is None else np.array(x_hat, dtype=complex)
    bs_scale = None
    if x is not None and t_p:
        bs_scale = _fit_scales(x[:, :t_p].T, np.asarray(pilots).T, 0, "bs", skipped)
        x *= bs_scale[:, None]
        h_b /= bs_scale[None, :]
    for label, i in skipped:
        logger.info("alignment skipped %s index %d: zero-norm reference", label, i)
    return Alignment(h_b, h_r, x, ris_scale, bs_scale, skipped)


# ---------------------------------------------------------------------------
# result table


def _summarise(values: list, averaging: str):
    if not values:
        return float("nan"), float("nan")
    arr = np.asarray(values, dtype=float)
    std = float(np.std(arr))
    if averaging == "linear":
        return float(10.0 * np.log10(np.mean(10.0 ** (arr / 10.0)))), std
    return float(np.mean(arr)), std


@dataclass
class ResultRow:
    snr_db: float
    algorithm: str
    variable: str
    nmse_db_mean: float
    nmse_db_std: float
    trials: int
    divergent: int


@dataclass
class ResultTable:
    """NMSE statistics per ``(snr, algorithm, variable)``.

    ``samples`` maps each key to ``{trial: nmse_db or None}``; ``None`` marks
    a divergent trial.  Rows are derived from samples, so a table read back
    from CSV (which only has rows) keeps them in ``_rows``.
    """

    samples: dict = field(default_factory=dict)
    averaging: str = "db"
    _rows: list | None = None

    def add(self, snr_db: float, algorithm: str, variable: str, trial: int, value):
        self.samples.setdefault((float(snr_db), algorithm, variable), {})[trial] = value

    @property
    def rows(self) -> list:
        if self._rows is not None:
            return list(self._rows)
        out = []
        for (snr, algo, var), per_trial in self.samples.items():
            ok = [per_trial[t] for t in sorted(per_trial) if per_trial[t] is not None]
            mean, std = _summarise(ok, self.averaging)
            out.append(ResultRow(snr, algo, var, mean, std, len(ok), len(per_trial) - len(ok)))
        out.sort(key=lambda r: (r.snr_db, r.algorithm, VARIABLES.index(r.variable)
                                if r.variable in VARIABLES else 99))
        return out

    def get(self, snr_db: float, algorithm: str, variable: str) -> ResultRow:
        for r in self.rows:
            if r.snr_db == float(snr_db) and r.algorithm == algorithm and r.variable == variable:
                return r
        raise KeyError((snr_db, algorithm, variable))

    def merge(self, other: "ResultTable") -> "ResultTable":
        """Combine two runs over disjoint trial indices."""
        if self._rows is not None or other._rows is not None:
            raise InvalidParameterError("tables read from CSV carry no per-trial samples and cannot be merged")
        merged = ResultTable(averaging=self.averaging)
        for src in (self, other):
            for key, per_trial in src.samples.items():
                dst = merged.samples.setdefault(key, {})
                overlap = set(dst) & set(per_trial)
                if overlap:
                    raise InvalidParameterError(f"trial indices {sorted(overlap)} appear in both tables")
                dst.update(per_trial)
        return merged

    def to_csv(self, fh=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow([repr(r.snr_db), r.algorithm, r.variable, repr(r.nmse_db_mean),
                        repr(r.nmse_db_std), r.trials, r.divergent])
        text = buf.getvalue()
        if fh is not None:
            fh.write(text)
        return text

    @classmethod
    def from_csv(cls, text: str) -> "ResultTable":
        lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
        reader = csv.reader(lines)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {header}")
        rows = [ResultRow(float(a), b, c, float(d), float(e), int(f), int(g))
                for a, b, c, d, e, f, g in reader]
        return cls(_rows=rows)


# ---------------------------------------------------------------------------
# trials


def _score(algo: str, spec: ExperimentSpec, scene) -> dict | None:
    """NMSE per variable, or ``None`` when the run diverged."""
    try:
        if algo == "bamp":
            rep = run_bamp(scene.y, scene.ris, scene.pilots, scene.anchors, spec.priors, spec.bamp,
                           scene.noise_var)
            residual = rep.final_residual
            est = (rep.h_b_hat, rep.h_r_hat, rep.x_hat)
        else:
            rep = run_baseline(scene.y, scene.ris, scene.pilots, scene.anchors, spec.priors, spec.bamp,
                               scene.noise_var)
            residual = rep.stage1_residual[-1] if rep.stage1_residual else 0.0
            est = (rep.h_b_hat, rep.h_r_hat, rep.x_hat)
    except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        logger.info("%s failed on seed %s: %s", algo, scene.seed, exc)
        return None
    if not np.isfinite(residual) or residual > DIVERGENCE_RESIDUAL:
        return None
    al = align_estimates(est[0], est[1], scene.anchors, est[2], scene.pilots)
    vals = {"X": nmse_db(al.x, scene.x), "Hb": nmse_db(al.h_b, scene.h_b), "Hr": nmse_db(al.h_r, scene.h_r)}
    if not all(math.isfinite(v) for v in vals.values()):
        return None
    return vals


def _run_task(args):
    spec, suffix, dims, snr, trial = args
    scene = make_scene(dims, spec.priors, spec.ris_bits, snr, spec.base_seed + trial)
    return (suffix, snr, trial), {algo: _score(algo, spec, scene) for algo in spec.algorithms}


def _tasks(spec: ExperimentSpec) -> list:
    return [(spec, suffix, dims, snr, trial)
            for suffix, dims in spec.variant_dims().items()
            for snr in spec.snr_grid
            for trial in spec.trial_range]


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None


def run_experiment(spec: ExperimentSpec, workers: int | None = None,
                   progress: Callable[[int, int], None] | None = None,
                   into: ResultTable | None = None) -> ResultTable:
    """Run every (curve, snr, trial) task and collect NMSE statistics.

    Results are inserted by trial index, so the table does not depend on the
    completion order of a process pool.  Passing ``into`` lets a caller keep
    the partially filled table if the run is interrupted.
    """
    table = into if into is not None else ResultTable(averaging=spec.averaging)
    table.averaging = spec.averaging
    tasks = _tasks(spec)
    workers = default_workers() if workers is None else max(1, int(workers))

    def record(result, done):
        (suffix, snr, trial), per_algo = result
        for algo, vals in per_algo.items():
            for var in VARIABLES:
                table.add(snr, algo + suffix, var, trial, None if vals is None else vals[var])
        if progress is not None:
            progress(done, len(tasks))

    if workers == 1:
        for i, task in enumerate(tasks, 1):
            record(_run_task(task), i)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for i, result in enumerate(pool.map(_run_task, tasks), 1):
                record(result, i)
    return table


# ---------------------------------------------------------------------------
# presets

DESK_FACTOR = 5
PAPER_TRIALS = 500
DESK_TRIALS = 50
SNR_GRID = (0.0, 10.0, 20.0, 30.0)

# full-size settings; a sweep entry is (param, values)
_PRESETS = {
    "fig3": (dict(m=100, k=500, n=200, t=200, t_pilot=100, k_anchor=150), None, ALGORITHMS),
    "fig4": (dict(m=100, k=500, n=100, t=600, t_pilot=180, k_anchor=150), ("t_pilot", (180, 200, 240)), ("bamp",)),
    "fig5": (dict(m=100, k=500, n=200, t=200, t_pilot=100, k_anchor=150), ("k_anchor", (120, 150, 180)), ("bamp",)),
    "fig6": (dict(m=100, k=500, n=200, t=200, t_pilot=100, k_anchor=150), ("n", (150, 200, 300)), ("bamp",)),
}
SCALES = ("paper", "desk")


def preset_names() -> list:
    return [f"{name}/{scale}" for name in _PRESETS for scale in SCALES]


def preset(name: str, scale: str = "desk") -> ExperimentSpec:
    """Experiment settings for one of the figure sweeps.

    ``desk`` divides every dimension by :data:`DESK_FACTOR` and uses
    :data:`DESK_TRIALS` trials; ``paper`` keeps the full sizes.
    """
    if name not in _PRESETS:
        raise ConfigError(f"unknown preset {name!r}; valid presets: {', '.join(sorted(_PRESETS))}")
    if scale not in SCALES:
        raise ConfigError(f"unknown scale {scale!r}; valid scales: {', '.join(SCALES)}")
    dims, sweep, algos = _PRESETS[name]
    div = DESK_FACTOR if scale == "desk" else 1
    dims = SceneDims(**{k: v // div for k, v in dims.items()})
    sweep_param, sweep_values = (None, ()) if sweep is None else (sweep[0], tuple(v // div for v in sweep[1]))
    return ExperimentSpec(
        dims=dims, snr_grid=SNR_GRID, trials=PAPER_TRIALS if scale == "paper" else DESK_TRIALS,
        algorithms=algos, bamp=BampConfig(max_iters=20, damping=0.3), priors=default_priors(),
        sweep_param=sweep_param, sweep_values=sweep_values, name=f"{name}/{scale}")


def iter_presets() -> Iterable[ExperimentSpec]:
    for name in _PRESETS:
        for scale in SCALES:
            yield preset(name, scale)
