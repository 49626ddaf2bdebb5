import csv
import io
import os
import subprocess
import sys

import numpy as np
import pytest
import yaml

from bamp_ris import cli, default_priors, storage
from bamp_ris.harness import CSV_HEADER, ResultTable, preset


def scene_cfg(**dims):
    d = dict(m=2, k=2, n=2, t=4, t_pilot=2, k_anchor=1)
    d.update(dims)
    return {
        "dims": d,
        "snr_db": 20.0,
        "seed": 5,
        "ris_bits": 1,
        "priors": {
            "x_prior": {"kind": "gaussian", "mean": 0.0, "var": 1.0},
            "h_b_prior": {"kind": "bernoulli_gaussian", "sparsity": 0.2, "slab_var": 5.0},
            "q_prior": {"kind": "bernoulli_gaussian", "sparsity": 0.2, "slab_var": 5.0},
        },
    }


def write_yaml(path, data):
    path.write_text(yaml.safe_dump(data))
    return str(path)


def test_gen_scene_round_trip(tmp_path):
    cfg = write_yaml(tmp_path / "s.yaml", scene_cfg())
    out = tmp_path / "s.bin"
    assert cli.main(["gen-scene", "--config", cfg, "--out", str(out), "--quiet"]) == 0
    sc = storage.load_scene(out)
    assert sc.y.shape == (2, 4) and sc.seed == 5
    assert storage.scene_to_bytes(sc) == out.read_bytes()
    again = tmp_path / "s2.bin"
    cli.main(["gen-scene", "--config", cfg, "--out", str(again), "--quiet"])
    assert again.read_bytes() == out.read_bytes()
    other = tmp_path / "s3.bin"
    cli.main(["gen-scene", "--config", cfg, "--out", str(other), "--seed", "6", "--quiet"])
    assert storage.load_scene(other).seed == 6


def test_gen_scene_validation(tmp_path, capsys):
    cfg = write_yaml(tmp_path / "bad.yaml", scene_cfg(t_pilot=5))
    assert cli.main(["gen-scene", "--config", cfg, "--out", str(tmp_path / "x.bin")]) == 2
    assert "t_pilot" in capsys.readouterr().err
    assert not (tmp_path / "x.bin").exists()

    missing = scene_cfg()
    del missing["ris_bits"]
    cfg = write_yaml(tmp_path / "missing.yaml", missing)
    assert cli.main(["gen-scene", "--config", cfg, "--out", str(tmp_path / "x.bin")]) == 2
    assert "ris_bits" in capsys.readouterr().err

    broken = tmp_path / "broken.yaml"
    broken.write_text("dims:\n  m: 2\n   k: [\n")
    assert cli.main(["gen-scene", "--config", str(broken), "--out", str(tmp_path / "x.bin")]) == 2
    assert "line" in capsys.readouterr().err


def test_overwrite_protection(tmp_path):
    cfg = write_yaml(tmp_path / "s.yaml", scene_cfg())
    out = tmp_path / "s.bin"
    out.write_bytes(b"keep")
    assert cli.main(["gen-scene", "--config", cfg, "--out", str(out), "--quiet"]) == 2
    assert out.read_bytes() == b"keep"
    assert cli.main(["gen-scene", "--config", cfg, "--out", str(out), "--force", "--quiet"]) == 0
    assert out.read_bytes() != b"keep"


@pytest.fixture
def scene_file(tmp_path):
    cfg = write_yaml(tmp_path / "s.yaml", scene_cfg(m=4, k=16, n=8, t=24, t_pilot=12, k_anchor=8))
    out = tmp_path / "scene.bin"
    cli.main(["gen-scene", "--config", cfg, "--out", str(out), "--quiet"])
    return out


@pytest.mark.parametrize("algo", ["bamp", "bigamp_ls"])
def test_run_summary_and_report(scene_file, tmp_path, capsys, algo):
    rep = tmp_path / f"{algo}.json"
    code = cli.main(["run", str(scene_file), "--algorithm", algo, "--out", str(rep)])
    line = capsys.readouterr().out.strip()
    assert code == 0
    keys = [kv.split("=")[0] for kv in line.split()]
    assert keys == ["algo", "nmse_x", "nmse_hb", "nmse_hr", "iters"]
    first = rep.read_bytes()
    cli.main(["run", str(scene_file), "--algorithm", algo, "--out", str(rep), "--force"])
    assert rep.read_bytes() == first


def test_run_errors(scene_file, tmp_path, capsys):
    assert cli.main(["run", str(scene_file), "--algorithm", "em"]) == 2
    assert "bamp, bigamp_ls" in capsys.readouterr().err
    bad = tmp_path / "corrupt.bin"
    data = bytearray(scene_file.read_bytes())
    data[-20] ^= 0xFF
    bad.write_bytes(bytes(data))
    out = tmp_path / "r.json"
    assert cli.main(["run", str(bad), "--out", str(out)]) == 1
    assert not out.exists()
    bad.write_bytes(scene_file.read_bytes()[:100])
    assert cli.main(["run", str(bad), "--out", str(out)]) == 1
    assert not out.exists()
    assert [p.name for p in tmp_path.iterdir() if p.name.startswith(".tmp-")] == []


def test_run_config_must_be_complete(scene_file, tmp_path):
    cfg = write_yaml(tmp_path / "b.yaml", {"damping": 0.5})
    assert cli.main(["run", str(scene_file), "--config", cfg]) == 2


def test_presets_listing(capsys):
    assert cli.main(["presets"]) == 0
    out = capsys.readouterr().out
    for name in ("fig3", "fig4", "fig5", "fig6"):
        for scale in ("paper", "desk"):
            assert f"{name}/{scale}:" in out


def test_sweep_stdout_is_csv():
    # the real entry point, so stdout/stderr separation is exercised end to end
    proc = subprocess.run([sys.executable, "-m", "bamp_ris", "sweep", "fig3", "--scale", "desk", "--trials", "1"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0, proc.stderr
    rows = list(csv.reader(io.StringIO(proc.stdout)))
    assert tuple(rows[0]) == CSV_HEADER and len(rows) == 1 + 24
    assert "tasks" in proc.stderr
    table = ResultTable.from_csv(proc.stdout)
    assert {r.snr_db for r in table.rows} == {0.0, 10.0, 20.0, 30.0}


def test_sweep_from_config_and_out(tmp_path):
    spec = preset("fig5", "desk").to_dict()
    spec.update(trials=1, snr_grid=[20.0])
    cfg = write_yaml(tmp_path / "exp.yaml", spec)
    out = tmp_path / "r.csv"
    assert cli.main(["sweep", "--config", cfg, "--out", str(out), "--quiet"]) == 0
    assert len(ResultTable.from_csv(out.read_text()).rows) == 9
    assert cli.main(["sweep", "--config", cfg, "--out", str(out), "--quiet"]) == 2
    spec["trials"] = 0
    cfg = write_yaml(tmp_path / "bad.yaml", spec)
    assert cli.main(["sweep", "--config", cfg, "--quiet"]) == 2
    assert cli.main(["sweep", "fig9", "--quiet"]) == 2
    assert cli.main(["sweep", "--quiet"]) == 2


def test_sweep_interrupt_writes_partial(monkeypatch, capsys):
    def fake_run(spec, workers=None, progress=None, into=None):
        into.add(0.0, "bamp", "X", 0, -3.0)
        raise KeyboardInterrupt

    monkeypatch.setattr(cli, "run_experiment", fake_run)
    assert cli.main(["sweep", "fig3", "--quiet"]) == 1
    out = capsys.readouterr().out
    assert out.rstrip().endswith("# incomplete")
    assert len(ResultTable.from_csv(out).rows) == 1


def test_scene_file_layout(scene_file):
    blob = scene_file.read_bytes()
    assert blob[:8] == storage.MAGIC
    sc = storage.load_scene(scene_file)
    tail = np.frombuffer(blob[-16 * sc.y.size:], dtype="<f8")
    assert np.array_equal(tail[0::2] + 1j * tail[1::2], sc.y.ravel())


def test_workers_env(monkeypatch):
    from bamp_ris.harness import WORKERS_ENV, default_workers
    monkeypatch.setenv(WORKERS_ENV, "3")
    assert default_workers() == 3
    monkeypatch.delenv(WORKERS_ENV)
    assert default_workers() == 1
    assert os.environ.get(WORKERS_ENV) is None


def test_run_oracle_scene_summary(tmp_path, capsys):
    cfg = scene_cfg(m=4, k=16, n=8, t=24, t_pilot=12, k_anchor=8)
    cfg.update(snr_db=float("inf"), seed=0)
    cfg["priors"] = default_priors(0.3).to_dict()
    path = write_yaml(tmp_path / "oracle.yaml", cfg)
    scene = tmp_path / "oracle.bin"
    assert cli.main(["gen-scene", "--config", path, "--out", str(scene), "--quiet"]) == 0
    assert cli.main(["run", str(scene), "--algorithm", "bamp"]) == 0
    fields = dict(kv.split("=") for kv in capsys.readouterr().out.split())
    assert all(float(fields[k]) <= -30.0 for k in ("nmse_x", "nmse_hb", "nmse_hr")), fields
