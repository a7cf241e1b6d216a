import csv
import os
import subprocess
import sys

import numpy as np
import pytest
import yaml

from placekit import cli
from placekit.config import reference_path
from placekit.lob_ingest import synthetic_events, write_events
from placekit.numerics import NumericsError
from placekit.rho_engine import TABLE1

REF = reference_path()
QREF = os.path.join(os.path.dirname(REF), "queue_reference.yaml")


def read(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_config(tmp_path, **changes):
    with open(REF) as fh:
        d = yaml.safe_load(fh)
    for k, v in changes.items():
        if isinstance(v, dict) and isinstance(d.get(k), dict):
            d[k].update(v)
        else:
            d[k] = v
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(d))
    return str(path)


def run(tmp_path, *argv):
    return cli.main(["--out", str(tmp_path), *argv])


# ---------------------------------------------------------------- config errors

def test_missing_config_exits_2(tmp_path, capsys):
    assert run(tmp_path, "--config", str(tmp_path / "nope.yaml"), "optimal") == 2
    assert "error" in capsys.readouterr().err


def test_unknown_key_exits_2(tmp_path):
    cfg = write_config(tmp_path, colour="blue")
    assert run(tmp_path, "--config", cfg, "optimal") == 2


def test_empty_grid_exits_2(tmp_path):
    assert run(tmp_path, "cost", "--x-grid", "") == 2
    assert run(tmp_path, "cost", "--x-grid", "0:1:0") == 2


def test_zero_penalty_critical_time_exits_2(tmp_path):
    cfg = write_config(tmp_path, market={"rebate": 0.0, "fee": 0.0})
    assert run(tmp_path, "--config", cfg, "critical-time") == 2


def test_bad_seed_exits_2(tmp_path):
    assert run(tmp_path, "--seed", str(2 ** 64), "optimal") == 2


def test_numerical_failure_exits_3(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise NumericsError("no bracket")
    monkeypatch.setattr(cli, "optimal_x_bm", boom)
    assert run(tmp_path, "optimal") == 3


def test_failed_validation_exits_4(tmp_path):
    assert run(tmp_path, "--tol", "1e-30", "validate", "--only", "derivatives") == 4
    header, rows = read(tmp_path / "validate.csv")
    assert header == ["name", "value", "reference", "tolerance", "passed", "detail"]
    assert all(r[3] == "1e-30" for r in rows)


def test_unknown_validate_group_exits_2(tmp_path):
    assert run(tmp_path, "validate", "--only", "nope") == 2


# ---------------------------------------------------------------- placement verbs

def test_cost_curves_reference_config(tmp_path):
    assert run(tmp_path, "cost") == 0
    interior = {}
    for t in (0.0184, 0.0234, 0.0334, 0.0384):
        header, rows = read(tmp_path / f"cost_t{cli.fmt(t)}.csv")
        assert header == ["x", "cost"]
        assert len(rows) == 61
        cost = np.array([float(r[1]) for r in rows])
        interior[t] = int(np.argmin(cost)) > 0
    # the reference horizons straddle the critical time 0.0284
    assert interior == {0.0184: False, 0.0234: False, 0.0334: True, 0.0384: True}


def test_single_point_grid_gives_one_row(tmp_path):
    assert run(tmp_path, "cost", "--x-grid", "0.01", "--t", "0.03") == 0
    _, rows = read(tmp_path / "cost_t0.03.csv")
    assert len(rows) == 1


def test_values_use_twelve_significant_digits(tmp_path):
    assert run(tmp_path, "cost", "--x-grid", "0.01", "--t", "0.03") == 0
    _, rows = read(tmp_path / "cost_t0.03.csv")
    digits = rows[0][1].lstrip("-").replace(".", "").split("e")[0].lstrip("0")
    assert len(digits) <= 12


def test_optimal_positive_drift_is_all_trivial(tmp_path):
    cfg = write_config(tmp_path, market={"mu": 0.1})
    assert run(tmp_path, "--config", cfg, "optimal") == 0
    header, rows = read(tmp_path / "optimal.csv")
    assert header == ["t", "x_star", "cost", "boundary_case"]
    assert all(r[1] == "0" and r[3] == "trivial_zero" for r in rows)


def test_optimal_black_scholes_price_level_decreases(tmp_path):
    cfg = write_config(tmp_path, model="black-scholes",
                       market={"mu": -0.1, "sigma": 0.2, "s0": 50.0, "rebate": 0.006})
    assert run(tmp_path, "--config", cfg, "optimal", "--t", "0.1,0.2,0.3,0.5") == 0
    header, rows = read(tmp_path / "optimal.csv")
    assert header == ["t", "y_star", "price_level", "cost", "boundary_case"]
    levels = [float(r[2]) for r in rows]
    assert all(b < a for a, b in zip(levels, levels[1:]))


def test_critical_time_reference(tmp_path):
    assert run(tmp_path, "critical-time") == 0
    header, rows = read(tmp_path / "critical_time.csv")
    assert header == ["t0", "bar_t0", "kappa1", "kappa2"]
    assert float(rows[0][0]) == pytest.approx(0.0284, abs=5e-4)


def test_critical_time_s0_sweep(tmp_path):
    cfg = write_config(tmp_path, model="black-scholes",
                       market={"mu": -0.1, "sigma": 0.2, "s0": 50.0, "rebate": 0.006})
    assert run(tmp_path, "--config", cfg, "critical-time", "--s0-grid", "20:100:5") == 0
    header, rows = read(tmp_path / "critical_time.csv")
    assert header[:3] == ["s0", "t0_star", "bar_t"]
    for r in rows:
        s0, t0, bar = map(float, r[:3])
        assert bar == pytest.approx(0.006 / (2 * 0.1 * s0), rel=1e-9)
        assert abs(t0 - bar) / bar <= 0.10


@pytest.mark.parametrize("regime", ["near-t0", "large-t"])
def test_approx_regimes(tmp_path, regime):
    extra = ["--t", "1,2,5"] if regime == "large-t" else []
    assert run(tmp_path, "approx", "--regime", regime, *extra) == 0
    name = "approx_near_t0.csv" if regime == "near-t0" else "approx_large_t.csv"
    header, rows = read(tmp_path / name)
    assert header[0] == "t" and len(rows) == 3


# ---------------------------------------------------------------- queue verbs

def test_rho_surface_orders_first_three_ticks(tmp_path):
    assert run(tmp_path, "--config", QREF, "rho", "--depth-grid", "0.01,0.02,0.03") == 0
    header, rows = read(tmp_path / "rho.csv")
    assert header == ["depth", "t", "rho"]
    for t in ("30", "60", "90"):
        vals = [float(r[2]) for r in rows if r[1] == t]
        assert vals[0] < vals[1] < vals[2], (t, vals)


def test_rho_needs_queue_config(tmp_path):
    assert run(tmp_path, "rho") == 2


def test_rho_report(tmp_path):
    assert run(tmp_path, "--config", QREF, "rho-report", "--t", "60") == 0
    header, rows = read(tmp_path / "rho_report.csv")
    assert header == ["t", "key", "value"] and rows


def test_estimate_writes_queue_document(tmp_path):
    log = tmp_path / "events.csv"
    write_events(log, synthetic_events(20_000, TABLE1, seed=2))
    out = tmp_path / "queue.yaml"
    assert run(tmp_path, "estimate", "--input", str(log), "--output", str(out),
               "--theta-k", "0.81,0.68") == 0
    doc = yaml.safe_load(out.read_text())["queue"]
    assert doc["theta_k"] == [0.81, 0.68]
    for k, v in TABLE1.items():
        assert doc["rates"][k] == pytest.approx(v, rel=0.1)


def test_estimate_errors(tmp_path):
    assert run(tmp_path, "estimate") == 2
    log = tmp_path / "short.csv"
    write_events(log, synthetic_events(100, TABLE1, seed=2))
    assert run(tmp_path, "estimate", "--input", str(log)) == 2


# ---------------------------------------------------------------- simulate, determinism

def test_simulate_continuous_seed_override(tmp_path):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    argv = ["simulate", "--x-grid", "0.01", "--t", "0.04", "--paths", "20000"]
    assert cli.main(["--out", str(a), "--seed", "7", *argv]) == 0
    assert cli.main(["--out", str(b), "--seed", "7", *argv]) == 0
    assert cli.main(["--out", str(c), "--seed", "8", *argv]) == 0
    ra, rb, rc = (read(d / "simulate_continuous.csv")[1] for d in (a, b, c))
    assert ra == rb and ra != rc
    mean, se, _, ref = map(float, ra[0][2:])
    assert abs(mean - ref) <= 4 * se


def test_simulate_race(tmp_path):
    assert run(tmp_path, "--config", QREF, "simulate", "--kind", "race", "--t", "5",
               "--paths", "20000", "--i", "6", "--ell", "6") == 0
    header, rows = read(tmp_path / "simulate_race.csv")
    assert header == ["u", "i", "ell", "mean", "std_error", "n", "analytic"]
    mean, ref = float(rows[0][3]), float(rows[0][6])
    assert abs(mean - ref) <= 4 * np.sqrt(ref * (1 - ref) / 20000)


def test_simulate_discrete(tmp_path):
    assert run(tmp_path, "simulate", "--kind", "discrete", "--x-grid", "0.02", "--t", "0.04",
               "--paths", "5000") == 0
    header, rows = read(tmp_path / "simulate_discrete.csv")
    assert len(rows) == 1


def test_cost_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["--out", str(a), "cost"]) == 0
    assert cli.main(["--out", str(b), "cost"]) == 0
    for name in os.listdir(a):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "placekit.cli", "--out", str(tmp_path),
                           "critical-time"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "critical_time.csv").exists()
