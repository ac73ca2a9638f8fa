"""Acceptance suite: one test per criterion, printing a pass/fail line each.

The expensive studies are session fixtures shared across criteria; the
determinism criterion reruns them from scratch and compares payloads.

Criteria 6 and 7 contain sub-checks that are documented as unattainable at
the configured scales (see the README): the corrected-gradient and
layer slopes saturate pre-asymptotically for this coefficient.  Those tests
assert the stated tolerances anyway and fail honestly, printing the measured
values.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from homog.cell import homogenized_tensor, solve_correctors, unit_cell_mesh
from homog.coeff import Checkerboard, Laminate, ScalarCosine, from_config
from homog.grid import build_mesh, gauss_rule, integrate_field
from homog.harness import load_config, run_operator_checks, run_study
from homog.metrics import error_report
from homog.solve import (
    BoundaryCondition,
    ProblemInstance,
    reconstruct,
    solve_fine,
    solve_homogenized,
)
from homog.unfold import build_cell_map

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"
SQRT3 = np.sqrt(3.0)


def announce(num, ok, detail):
    print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {num}: {detail}")


def timed_study(name):
    cfg = load_config(CONFIG_DIR / name)
    t0 = time.perf_counter()
    result = run_study(cfg)
    return result, time.perf_counter() - t0


@pytest.fixture(scope="session")
def constant_study():
    return timed_study("constant_2d.json")


@pytest.fixture(scope="session")
def study_1d():
    return timed_study("cosine_1d.json")


@pytest.fixture(scope="session")
def convex_study():
    return timed_study("convex_square.json")


@pytest.fixture(scope="session")
def lshape_study():
    return timed_study("lshape.json")


@pytest.fixture(scope="session")
def richardson_reports():
    """Criterion 6 guard: reports at eps = 1/16 for m = 32 and m = 64."""
    coeff = ScalarCosine(2.0, 1.0, axis=0)
    bc = BoundaryCondition("dirichlet_full")
    rhs = lambda p: np.ones(len(p))
    tensor = homogenized_tensor(coeff, solve_correctors(coeff, unit_cell_mesh(2, 256)))
    out = {}
    for m in (32, 64):
        mesh = build_mesh((0, 0), (1, 1), (16 * m, 16 * m), "box")
        cmap = build_cell_map(mesh, 16)
        corr = solve_correctors(coeff, unit_cell_mesh(2, m))
        fine = solve_fine(ProblemInstance(mesh, coeff, rhs, bc, 16), m)
        phi = solve_homogenized(tensor, rhs, bc, mesh)
        out[m] = error_report(fine, reconstruct(phi, corr, cmap), cmap,
                              ((0.25, 0.75), (0.25, 0.75)))
    return out


ERROR_FUNCTIONALS = ("e_l2", "e_h1_corr", "e_weighted", "e_interior")


def test_criterion_1_constant_degeneracy(constant_study):
    result, wall = constant_study
    coeff = from_config(result.config.coefficient)
    correctors = solve_correctors(coeff, unit_cell_mesh(2, result.config.cell_divisions))
    rule = gauss_rule(2)
    h1 = 0.0
    for chi in correctors.chi:
        from homog.grid import element_gradients_at, element_values_at

        mesh = correctors.cell_mesh
        elems = mesh.active_elements()
        v = element_values_at(chi, rule, elems)
        g = element_gradients_at(chi, rule, elems)
        vol = float(np.prod(mesh.h))
        h1 = max(h1, np.sqrt(vol * float(
            np.einsum("eq,q->", v**2 + (g**2).sum(axis=2), rule.weights))))
    tensor_dev = np.abs(result.tensor - np.asarray(result.config.coefficient["matrix"])).max()
    worst = max(
        getattr(rep, name) for rep in result.reports for name in ERROR_FUNCTIONALS
    )
    ok = h1 <= 1e-9 and tensor_dev <= 1e-12 and worst <= 1e-10 and wall < 10.0
    announce(1, ok, f"chi H1 = {h1:.2e}, tensor dev = {tensor_dev:.2e}, "
                    f"worst error functional = {worst:.2e}, runtime {wall:.1f}s")
    assert h1 <= 1e-9
    assert tensor_dev <= 1e-12
    assert worst <= 1e-10
    assert all(c.status == "inconclusive" for c in result.checks)
    assert wall < 10.0


def test_criterion_2_laminate_tensor():
    t0 = time.perf_counter()
    field = Laminate(axis=0, alpha=1.0, beta=4.0, fraction=0.5)
    cs = solve_correctors(field, unit_cell_mesh(2, 64))
    tensor = homogenized_tensor(field, cs)
    wall = time.perf_counter() - t0
    dev = np.abs(tensor.matrix - np.diag([1.6, 2.5])).max()
    ok = dev <= 1e-8 and wall < 10.0
    announce(2, ok, f"|tensor - diag(1.6, 2.5)|_max = {dev:.2e}, runtime {wall:.1f}s")
    assert dev <= 1e-8
    assert wall < 10.0


def test_criterion_3_checkerboard_tensor():
    t0 = time.perf_counter()
    field = Checkerboard(1.0, 4.0)
    devs = {}
    for div in (64, 128):
        cs = solve_correctors(field, unit_cell_mesh(2, div))
        devs[div] = np.abs(homogenized_tensor(field, cs).matrix - 2.0 * np.eye(2)).max()
    wall = time.perf_counter() - t0
    ok = devs[128] <= 0.05 and devs[128] < devs[64] and wall < 120.0
    announce(3, ok, f"dev@64 = {devs[64]:.4f}, dev@128 = {devs[128]:.4f}, runtime {wall:.1f}s")
    assert devs[128] <= 0.05
    assert devs[128] < devs[64]
    assert wall < 120.0


def test_criterion_4_operator_suite():
    t0 = time.perf_counter()
    report = run_operator_checks(divisions=256, epsilons=(4, 8, 16, 32))
    wall = time.perf_counter() - t0
    slope = next(r.measured for r in report.results if r.name == "r_decay_slope")
    ok = report.all_passed and wall < 60.0
    announce(4, ok, f"all operator checks passed = {report.all_passed}, "
                    f"R slope = {slope:.4f}, runtime {wall:.1f}s")
    for r in report.results:
        assert r.passed, f"operator check {r.name} failed: measured {r.measured:.3e}"
    assert abs(slope - 1.0) <= 0.1
    assert wall < 60.0


def test_criterion_5_1d_pipeline(study_1d):
    result, wall = study_1d
    abar_err = abs(result.tensor[0, 0] - SQRT3)
    slopes = {name: fit.slope for name, fit in result.fits.items() if fit}
    ok = (abar_err <= 1e-8 and abs(slopes["e_l2"] - 1.0) <= 0.1
          and abs(slopes["e_h1_corr"] - 1.0) <= 0.15 and wall < 60.0)
    announce(5, ok, f"|abar - sqrt(3)| = {abar_err:.2e}, e_l2 slope = {slopes['e_l2']:.3f}, "
                    f"e_h1_corr slope = {slopes['e_h1_corr']:.3f}, runtime {wall:.1f}s")
    assert abar_err <= 1e-8
    assert abs(slopes["e_l2"] - 1.0) <= 0.1
    assert abs(slopes["e_h1_corr"] - 1.0) <= 0.15
    assert wall < 60.0


def test_criterion_6_convex_rates(convex_study, richardson_reports):
    result, wall = convex_study
    slopes = {name: fit.slope for name, fit in result.fits.items() if fit}
    expected = {
        "e_l2": (1.0, 0.25),
        "e_weighted": (1.0, 0.25),
        "e_interior": (1.0, 0.25),
        "e_h1_corr": (0.5, 0.2),
        "e_layer": (0.5, 0.2),
    }
    failures = []
    for name, (target, tol) in expected.items():
        if abs(slopes[name] - target) > tol:
            failures.append(f"{name} slope {slopes[name]:.3f} not in {target}+-{tol}")
    richardson_worst = 0.0
    for name in ("e_l2", "e_h1_corr", "e_weighted", "e_interior", "e_layer"):
        a = getattr(richardson_reports[32], name)
        b = getattr(richardson_reports[64], name)
        richardson_worst = max(richardson_worst, abs(a - b) / max(a, b))
    if richardson_worst >= 0.15:
        failures.append(f"Richardson guard {100 * richardson_worst:.1f}% >= 15%")
    if wall >= 600.0:
        failures.append(f"runtime {wall:.0f}s over 10 min")
    ok = not failures
    announce(6, ok, f"slopes {{{', '.join(f'{k}={v:.3f}' for k, v in sorted(slopes.items()))}}}, "
                    f"Richardson worst diff {100 * richardson_worst:.2f}%, runtime {wall:.0f}s"
                    + ("" if ok else f"; FAILING: {failures}"))
    assert not failures, (
        "documented pre-asymptotic saturation (see README): " + "; ".join(failures)
    )


def test_criterion_7_polygonal_degradation(convex_study, lshape_study):
    convex_result, _ = convex_study
    result, wall = lshape_study
    slopes = {name: fit.slope for name, fit in result.fits.items() if fit}
    convex_l2 = convex_result.fits["e_l2"].slope
    failures = []
    if not 0.5 <= slopes["e_l2"] <= 1.05:
        failures.append(f"e_l2 slope {slopes['e_l2']:.3f} outside [0.5, 1.05]")
    if slopes["e_l2"] > convex_l2 + 0.05:
        failures.append(
            f"e_l2 slope {slopes['e_l2']:.3f} exceeds convex slope {convex_l2:.3f} + 0.05"
        )
    if not 0.25 <= slopes["e_h1_corr"] <= 0.6:
        failures.append(f"e_h1_corr slope {slopes['e_h1_corr']:.3f} outside [0.25, 0.6]")
    if wall >= 600.0:
        failures.append(f"runtime {wall:.0f}s over 10 min")
    ok = not failures
    announce(7, ok, f"e_l2 = {slopes['e_l2']:.3f} (convex {convex_l2:.3f}), "
                    f"e_h1_corr = {slopes['e_h1_corr']:.3f}, runtime {wall:.0f}s"
                    + ("" if ok else f"; FAILING: {failures}"))
    assert not failures, (
        "documented pre-asymptotic saturation (see README): " + "; ".join(failures)
    )


def test_criterion_8_determinism(constant_study, study_1d, convex_study, lshape_study):
    t0 = time.perf_counter()
    mism = []

    for name, (first, _) in [
        ("constant_2d.json", constant_study),
        ("cosine_1d.json", study_1d),
        ("convex_square.json", convex_study),
        ("lshape.json", lshape_study),
    ]:
        again = run_study(load_config(CONFIG_DIR / name))
        if json.dumps(first.payload(), sort_keys=True) != json.dumps(
            again.payload(), sort_keys=True
        ):
            mism.append(name)

    lam = Laminate(axis=0, alpha=1.0, beta=4.0, fraction=0.5)
    t1 = homogenized_tensor(lam, solve_correctors(lam, unit_cell_mesh(2, 64))).matrix
    t2 = homogenized_tensor(lam, solve_correctors(lam, unit_cell_mesh(2, 64))).matrix
    if not np.array_equal(t1, t2):
        mism.append("laminate tensor")

    chk = Checkerboard(1.0, 4.0)
    c1 = homogenized_tensor(chk, solve_correctors(chk, unit_cell_mesh(2, 128))).matrix
    c2 = homogenized_tensor(chk, solve_correctors(chk, unit_cell_mesh(2, 128))).matrix
    if not np.array_equal(c1, c2):
        mism.append("checkerboard tensor")

    r1 = run_operator_checks(divisions=256).as_dict()
    r2 = run_operator_checks(divisions=256).as_dict()
    if json.dumps(r1, sort_keys=True) != json.dumps(r2, sort_keys=True):
        mism.append("operator checks")

    wall = time.perf_counter() - t0
    ok = not mism
    announce(8, ok, f"bitwise-identical reruns for studies, tensors, and operator "
                    f"checks ({wall:.0f}s)" + ("" if ok else f"; mismatches: {mism}"))
    assert not mism
