"""Acceptance suite: two independent ``slowssep verify full`` runs, one test per criterion.

Each test prints and logs a single ``[PASS]``/``[FAIL]`` line. The whole
module takes roughly twice the duration of one full verification run.
"""

import json
import subprocess
import sys
from pathlib import Path

import pytest

pytestmark = pytest.mark.slow

BUDGET_SECONDS = {1: 30, 2: 120, 3: 900, 4: 1200, 5: 900, 6: 600, 7: 300, 8: 60}
CHECKS = {
    1: ("exact_profile",),
    2: ("correlation_envelope",),
    3: ("hydrostatic",),
    4: ("mass_relaxation",),
    5: ("martingale",),
    6: ("replacement",),
    7: ("functional_inequalities",),
    8: ("pde_convergence", "pde_longtime"),
}


def _verify_full(out: Path) -> subprocess.CompletedProcess:
    return subprocess.run([sys.executable, "-m", "slowssep", "verify", "full", "--quiet",
                           "--out", str(out)], capture_output=True, text=True)


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    first, second = root / "A", root / "B"
    proc = _verify_full(first)
    _verify_full(second)
    report = json.loads((first / "report.json").read_text())
    info = json.loads((first / "run_info.json").read_text())
    return {"dirs": (first, second), "returncode": proc.returncode, "report": report,
            "info": info, "checks": {c["name"]: c for c in report["checks"]}}


def _record(log, number, passed, detail, seconds=None):
    status = "PASS" if passed else "FAIL"
    line = f"[{status}] criterion {number}: {detail}"
    if seconds is not None:
        line += f" ({seconds:.0f}s, budget {BUDGET_SECONDS[number]}s)"
    print(line)
    log.append(line)
    return passed


def _criterion(runs, number):
    names = CHECKS[number]
    checks = [runs["checks"][n] for n in names]
    seconds = sum(runs["info"]["check_seconds"][n] for n in names)
    return checks, seconds


def test_criterion_1_exact_mean_profile(runs, acceptance_log):
    (chk,), sec = _criterion(runs, 1)
    s = chk["summary"]
    ok = chk["passed"] and s["max_error"] <= 1e-10 and s["points"] == 192
    assert _record(acceptance_log, 1,
                   ok and sec < BUDGET_SECONDS[1],
                   f"exact profile = a_N x + b_N on {s['points']} points, "
                   f"max error {s['max_error']:.1e} (tol 1e-10)", sec)


def test_criterion_2_correlation_envelope(runs, acceptance_log):
    (chk,), sec = _criterion(runs, 2)
    env = {th: v["envelope"] for th, v in chk["summary"]["thetas"].items()}
    text = ", ".join(f"theta={th}: {v:.4f}" for th, v in env.items())
    assert _record(acceptance_log, 2, chk["passed"] and sec < BUDGET_SECONDS[2],
                   f"(N^theta+N) max|phi| bounded over N=4..12, envelopes {text}", sec)


def test_criterion_3_hydrostatic_profiles(runs, acceptance_log):
    (chk,), sec = _criterion(runs, 3)
    s = chk["summary"]
    parts = [f"theta={th}: max|z|={s[f'theta={th}']['max_abs_z']:.2f}"
             for th in ("0.0", "1.0", "2.0")]
    parts.append(f"weak distance {s['theta=2.0']['weak_distance']:.4f} (< 0.02)")
    assert s["n_samples"] >= 10_000
    assert _record(acceptance_log, 3, chk["passed"] and sec < BUDGET_SECONDS[3],
                   "N=64 profiles within 3 SE; " + "; ".join(parts), sec)


def test_criterion_4_mass_relaxation(runs, acceptance_log):
    (chk,), sec = _criterion(runs, 4)
    worst = max(abs(r["mean"] - r["target"]) / r["se"] for r in chk["rows"])
    spread = chk["summary"]["sup_deviation_plus_3se"]
    assert _record(acceptance_log, 4, chk["passed"] and sec < BUDGET_SECONDS[4],
                   f"mass tracks 0.5(1 - e^(-2t)) within 3 SE: worst |z|={worst:.2f}; "
                   f"tightening {spread['32']:.4f} -> {spread['64']:.4f}", sec)


def test_criterion_5_martingale(runs, acceptance_log):
    (chk,), sec = _criterion(runs, 5)
    s = chk["summary"]
    assert _record(acceptance_log, 5, chk["passed"] and sec < BUDGET_SECONDS[5],
                   f"residual centred at all times: {s['all_centred']}; "
                   f"variance slope {s['slope']:.3f} in [-1.3, -0.7]", sec)


def test_criterion_6_replacement_trend(runs, acceptance_log):
    (chk,), sec = _criterion(runs, 6)
    trend = " > ".join(f"{r['mean_abs_V_integral']:.4f}+-{r['se']:.4f}" for r in chk["rows"])
    assert _record(acceptance_log, 6, chk["passed"] and sec < BUDGET_SECONDS[6],
                   f"E|int V| separated beyond 3 SE across N=16,32,64: {trend}", sec)


def test_criterion_7_functional_inequalities(runs, acceptance_log):
    (chk,), sec = _criterion(runs, 7)
    rows = chk["rows"]
    gap = min(r["min_gap"] for r in rows)
    ent = max(r["max_entropy_over_bound"] for r in rows)
    env = ", ".join(f"N={r['N']}: {r['envelope']:.4f}" for r in rows)
    assert chk["summary"]["n_random_per_N"] >= 10_000
    assert _record(acceptance_log, 7, chk["passed"] and sec < BUDGET_SECONDS[7],
                   f"min gap {gap:.3g} (>= -1e-10); max H/((N-1)C0) {ent:.3f}; "
                   f"envelope {env}", sec)


def test_criterion_8_pde_limits(runs, acceptance_log):
    (conv, longtime), sec = _criterion(runs, 8)
    ratios = ", ".join(f"{r['family']}: {r['ratios'][0]:.2f}/{r['ratios'][1]:.2f}"
                       for r in conv["rows"])
    dist = ", ".join(f"{r['family']}: {r['distance']:.1e}"
                     for r in longtime["rows"] if "distance" in r)
    drift = next(r["mass_drift"] for r in longtime["rows"] if "mass_drift" in r)
    ok = conv["passed"] and longtime["passed"] and runs["checks"]["pde_stationary"]["passed"]
    assert _record(acceptance_log, 8, ok and sec < BUDGET_SECONDS[8],
                   f"ratios {ratios}; long-time {dist}; Neumann mass drift {drift:.1e}", sec)


def test_criterion_9_determinism(runs, acceptance_log):
    first, second = runs["dirs"]
    names = sorted(p.name for p in first.iterdir() if p.name != "run_info.json")
    other = sorted(p.name for p in second.iterdir() if p.name != "run_info.json")
    differing = [n for n in names if (first / n).read_bytes() != (second / n).read_bytes()]
    ok = names == other and not differing
    total = runs["info"]["wall_clock_seconds"]
    detail = (f"{len(names)} artifacts byte-identical across two runs"
              if ok else f"differing artifacts: {differing or 'file sets differ'}")
    assert _record(acceptance_log, 9, ok, f"{detail}; one full run {total:.0f}s (budget 3600s)")


def test_full_run_exit_status_matches_report(runs):
    assert runs["returncode"] == (0 if runs["report"]["passed"] else 1)
