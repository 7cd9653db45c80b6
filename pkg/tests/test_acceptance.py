"""The nine acceptance criteria at their stated tolerances.

Each test prints (and records for the terminal summary) one PASS/FAIL line.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor

import pytest

from blochrte.oracle import GoldenRuleSetup, golden_rule_report
from blochrte import validation as V


@pytest.fixture
def report(acceptance_log):
    def emit(n: int, title: str, checks: list[V.Check], seconds: float):
        ok = all(c.passed for c in checks)
        line = f"{'PASS' if ok else 'FAIL'} criterion {n} ({title}, {seconds:.1f} s)"
        print(line)
        for c in checks:
            print("    " + c.line())
        acceptance_log(line)
        assert ok, "\n".join(c.line() for c in checks if not c.passed)
    return emit


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


def test_1_geometry(lat1, lat2, report):
    c, s = _timed(lambda: V.check_geometry([lat1, lat2], tol=1e-12))
    report(1, "geometry identities", [c], s)
    assert s < 1.0


def test_2_free_particle(lat1, lat2, report):
    cs, s = _timed(lambda: [V.check_free_particle(lat1, tol=1e-12),
                            V.check_free_particle(lat2, n_q=6, n_pw=19, tol=1e-12)])
    report(2, "free-particle exactness", cs, s)


def test_3_orthogonality(lat1, cosine, report):
    cs, s = _timed(lambda: V.check_orthogonality(lat1, cosine, n_pw=21))
    report(3, "orthogonality suite", cs, s)
    assert s < 60


def test_4_hellmann_feynman(lat1, cosine, report):
    c, s = _timed(lambda: V.check_hellmann_feynman(lat1, cosine, 21))
    report(4, "Hellmann-Feynman", [c], s)


def test_5_kernel(desk_table, gauss_model, report):
    cs, s = _timed(lambda: V.check_kernel(desk_table, gauss_model))
    report(5, "kernel consistency", cs, s)
    assert s < 60


def test_6_conservation(desk_table, gauss_model, report):
    cs, s = _timed(lambda: V.check_conservation(desk_table, gauss_model, n_steps=1000))
    report(6, "transport conservation", cs, s)
    assert s < 300


def test_7_relaxation(desk_table, gauss_model, report):
    cs, s = _timed(lambda: V.check_relaxation(desk_table, gauss_model))
    report(7, "relaxation", cs, s)
    assert s < 300


@pytest.mark.slow
def test_8_oracle(report):
    setup = GoldenRuleSetup()
    assert len(setup.seeds) >= 32

    def run():
        with ThreadPoolExecutor(max_workers=os.cpu_count() or 1) as ex:
            return [golden_rule_report(setup, s2, ex) for s2 in (0.05, 0.1)]

    runs, s = _timed(run)
    checks = []
    for r in runs:
        checks.append(V._check(
            f"decay rate vs kernel Gamma, sigma^2={r['strength']}", abs(r["ratio"] - 1.0), 0.2,
            f"measured {r['mean_rate']:.5f} +- {r['standard_error']:.5f}, Gamma {r['kernel_gamma']:.5f}, {len(r['rates'])} seeds",
        ))
    born = runs[1]["mean_rate"] / runs[0]["mean_rate"]
    checks.append(V._check("Born scaling ratio for doubled sigma^2", abs(born - 2.0), 0.3, f"ratio {born:.4f}"))
    report(8, "end-to-end oracle", checks, s)
    assert s < 900


def test_9_two_point(report):
    c, s = _timed(V.check_two_point)
    report(9, "two-point analytic evolution", [c], s)
