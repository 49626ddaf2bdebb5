"""On-disk formats: binary scenes, JSON reports and YAML configs.

Scene file layout (all integers little-endian)::

    bytes 0..7    magic  b"BAMPSCN1"
    bytes 8..11   uint32 header length H
    next H bytes  UTF-8 JSON header
    rest          payload: the arrays listed in header["arrays"], in that
                  order, each row-major with float64 (re, im) pairs

The header holds ``dims``, ``seed``, ``snr_db`` (a number or ``"inf"``),
``noise_var``, ``ris_bits``, ``priors``, ``arrays`` (name and shape list) and
``crc32`` of the payload.  Every write goes to a temporary file in the target
directory and is renamed into place, so a failed run never leaves a partial
file behind.
"""
from __future__ import annotations

import json
import math
import os
import struct
import tempfile
import zlib

import numpy as np
import yaml

from .errors import ConfigError, FormatError
from .scene import Priors, RisConfig, Scene, SceneDims

MAGIC = b"BAMPSCN1"
SCENE_ARRAYS = ("phases", "h_b", "h_r", "x", "y")


def atomic_write(path, data: bytes | str, force: bool = False):
    """Write ``data`` to ``path`` via a temp file and rename."""
    path = os.fspath(path)
    if os.path.exists(path) and not force:
        raise FileExistsError(f"{path} exists; pass --force to overwrite")
    if isinstance(data, str):
        data = data.encode("utf-8")
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _encode_float(v: float):
    return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")


def _decode_float(v) -> float:
    return float(v)


def _pack(arr: np.ndarray) -> bytes:
    c = np.ascontiguousarray(arr, dtype="<c16")
    return c.view("<f8").tobytes()


def scene_to_bytes(scene: Scene) -> bytes:
    arrays = {"phases": scene.ris.phases, "h_b": scene.h_b, "h_r": scene.h_r, "x": scene.x, "y": scene.y}
    payload = b"".join(_pack(arrays[name]) for name in SCENE_ARRAYS)
    d = scene.dims
    header = {
        "format": 1,
        "dims": {"m": d.m, "k": d.k, "n": d.n, "t": d.t, "t_pilot": d.t_pilot, "k_anchor": d.k_anchor},
        "seed": scene.seed,
        "snr_db": _encode_float(scene.snr_db),
        "noise_var": scene.noise_var,
        "ris_bits": scene.ris.bits,
        "priors": scene.priors.to_dict(),
        "arrays": [[name, list(np.shape(arrays[name]))] for name in SCENE_ARRAYS],
        "crc32": zlib.crc32(payload),
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<I", len(raw)) + raw + payload


def scene_from_bytes(blob: bytes) -> Scene:
    if len(blob) < 12 or blob[:8] != MAGIC:
        raise FormatError("not a scene file (bad magic)")
    (hlen,) = struct.unpack("<I", blob[8:12])
    try:
        header = json.loads(blob[12:12 + hlen].decode("utf-8"))
        dims = SceneDims(**header["dims"])
        layout = [(name, tuple(shape)) for name, shape in header["arrays"]]
        crc = int(header["crc32"])
    except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
        raise FormatError(f"corrupt scene header: {exc}") from exc
    payload = blob[12 + hlen:]
    expected = sum(16 * int(np.prod(shape)) for _, shape in layout)
    if len(payload) != expected:
        raise FormatError(f"scene payload is {len(payload)} bytes, header implies {expected}")
    if zlib.crc32(payload) != crc:
        raise FormatError("scene payload checksum mismatch")
    arrays, off = {}, 0
    for name, shape in layout:
        n = 16 * int(np.prod(shape))
        arrays[name] = np.frombuffer(payload[off:off + n], dtype="<c16").reshape(shape).astype(complex)
        off += n
    try:
        ris = RisConfig(dims.n, int(header["ris_bits"]), arrays["phases"])
        return Scene(dims, arrays["h_b"], arrays["h_r"], ris, arrays["x"], arrays["y"],
                     float(header["noise_var"]), _decode_float(header["snr_db"]),
                     Priors.from_dict(header["priors"]), seed=header["seed"])
    except (ValueError, KeyError) as exc:
        raise FormatError(f"inconsistent scene file: {exc}") from exc


def save_scene(scene: Scene, path, force: bool = False):
    atomic_write(path, scene_to_bytes(scene), force)


def load_scene(path) -> Scene:
    with open(path, "rb") as fh:
        return scene_from_bytes(fh.read())


def _matrix_json(a: np.ndarray) -> dict:
    a = np.asarray(a)
    return {"shape": list(a.shape), "re": a.real.ravel().tolist(), "im": a.imag.ravel().tolist()}


def report_to_json(algorithm: str, report, nmse: dict, extra: dict | None = None) -> str:
    """Serialise a BAMP or baseline report, with its scored NMSE values."""
    out = {"algorithm": algorithm, "nmse_db": nmse}
    if hasattr(report, "per_iteration"):
        out["iterations"] = report.iterations
        out["converged_at"] = report.converged_at
        out["per_iteration"] = [r.to_dict() for r in report.per_iteration]
    else:
        out["iterations"] = report.iterations
        out["stage1_residual"] = list(report.stage1_residual)
    for name in ("x_hat", "h_b_hat", "q_hat", "h_r_hat"):
        out[name] = _matrix_json(getattr(report, name))
    if extra:
        out.update(extra)
    return json.dumps(out, sort_keys=True, indent=1) + "\n"


def read_yaml(path) -> dict:
    """Parse a YAML mapping, reporting the line of any syntax error."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigError(f"{path}: YAML syntax error at {where}: {exc.problem}") from exc
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


SCENE_KEYS = ("dims", "snr_db", "seed", "ris_bits", "priors")


def scene_config(d: dict) -> dict:
    """Validate a scene config mapping; every key in :data:`SCENE_KEYS` is required."""
    missing = [k for k in SCENE_KEYS if k not in d]
    unknown = sorted(set(d) - set(SCENE_KEYS))
    if missing:
        raise ConfigError(f"missing field(s): {', '.join(missing)}")
    if unknown:
        raise ConfigError(f"unknown field(s): {', '.join(unknown)}")
    try:
        dims = SceneDims(**{k: int(v) for k, v in d["dims"].items()})
    except (TypeError, AttributeError) as exc:
        raise ConfigError(f"dims: {exc}") from exc
    try:
        dims.validate()
    except ValueError as exc:
        raise ConfigError(f"dims: {exc}") from exc
    try:
        priors = Priors.from_dict(d["priors"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"priors: {exc}") from exc
    try:
        snr = float(d["snr_db"])
    except (TypeError, ValueError):
        raise ConfigError("snr_db: must be a number or 'inf'") from None
    if not isinstance(d["seed"], int) or d["seed"] < 0:
        raise ConfigError("seed: must be a non-negative integer")
    if not isinstance(d["ris_bits"], int) or d["ris_bits"] < 1:
        raise ConfigError("ris_bits: must be an integer >= 1")
    return {"dims": dims, "snr_db": snr, "seed": d["seed"], "ris_bits": d["ris_bits"], "priors": priors}
