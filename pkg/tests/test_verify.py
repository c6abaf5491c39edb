"""Invariant suite: green path, corrupted inputs, trivial-controller note."""

import numpy as np
import pytest
import scipy.sparse as sp

from xsdre.bench import BenchmarkSpec, make_benchmark
from xsdre.config import PipelineConfig
from xsdre.verify import check_mass_matrix, run_verify


def make_config(kind="burgers", resolution=32, reynolds=20.0, **kwargs):
    defaults = dict(
        benchmark=BenchmarkSpec(kind, resolution, reynolds),
        out_dir="unused",
        dt=0.01, t_end=5.0, t_c_list=(1.0,),
        snapshot_count=41, snapshot_window=0.4,
        r_max=2, mateq_tol=1e-8,
    )
    defaults.update(kwargs)
    return PipelineConfig(**defaults)


def names(results):
    return [r.name for r in results]


def test_burgers_suite_passes():
    results = run_verify(make_config(), log=lambda *_: None)
    assert all(r.passed for r in results), [r.line() for r in results
                                            if not r.passed]
    got = names(results)
    for expected in ("mass-symmetry", "mass-spd", "convection-bilinearity",
                     "coefficient-blend-identity", "steady-state-residual",
                     "pod-orthonormality", "pod-tail-identity",
                     "riccati-residual", "lyapunov-residual",
                     "lqr-equals-order-zero"):
        assert expected in got
    # unconstrained problem: no projector checks
    assert not any(n.startswith("projector") for n in got)


def test_constrained_suite_includes_projector():
    cfg = make_config(kind="cylinder_fd", resolution=(48, 12), reynolds=40.0,
                      snapshot_count=21, snapshot_window=0.2, r_max=1,
                      mateq_tol=1e-7)
    results = run_verify(cfg, log=lambda *_: None)
    assert all(r.passed for r in results), [r.line() for r in results
                                            if not r.passed]
    got = names(results)
    assert "projector-idempotent" in got
    assert "projector-annihilates-J" in got
    assert "projector-m-selfadjoint" in got


def test_corrupted_mass_matrix_is_named():
    rng = np.random.default_rng(0)
    bad = sp.csr_matrix(rng.standard_normal((20, 20)))
    results = check_mass_matrix(bad)
    by_name = {r.name: r for r in results}
    assert not by_name["mass-symmetry"].passed
    assert by_name["mass-symmetry"].measured > by_name[
        "mass-symmetry"].tolerance


def test_indefinite_mass_matrix_is_named():
    d = np.ones(15)
    d[7] = -0.5
    results = check_mass_matrix(sp.diags(d))
    by_name = {r.name: r for r in results}
    assert by_name["mass-symmetry"].passed
    assert not by_name["mass-spd"].passed
    assert by_name["mass-spd"].measured == pytest.approx(-0.5)


def test_corrupted_system_fails_through_suite():
    """End to end: a study whose mass matrix was tampered with must surface
    exactly the spd check, not a crash."""
    cfg = make_config()
    system = make_benchmark(cfg.benchmark)
    M_bad = system.M.tolil()
    M_bad[0, 1] = 0.3  # asymmetric entry
    object.__setattr__(system, "M", M_bad.tocsr())
    results = run_verify(cfg, log=lambda *_: None, system=system)
    failed = [r.name for r in results if not r.passed]
    assert "mass-symmetry" in failed


def test_zero_output_map_notes_trivial_controller():
    cfg = make_config()
    system = make_benchmark(cfg.benchmark)
    object.__setattr__(system, "C", np.zeros_like(system.C))
    results = run_verify(cfg, log=lambda *_: None, system=system)
    by_name = {r.name: r for r in results}
    assert "trivial-controller" in by_name
    assert by_name["trivial-controller"].passed
    assert "zero" in by_name["trivial-controller"].note
    # the degenerate study is otherwise healthy
    assert by_name["riccati-residual"].passed
    assert by_name["lqr-equals-order-zero"].passed
