"""Scenario builders, run orchestration, manifests, comparison metrics."""

import json

import numpy as np
import pytest

from moment_glioma.config import RunConfig, parse_config
from moment_glioma.fields_io import read_field, write_tensor_field
from moment_glioma.grid import GridSpec
from moment_glioma.metrics import MetricsError, relative_difference
from moment_glioma.scenarios import (
    build_fiber_strand_scenario,
    build_file_scenario,
    run_scenario,
    scenario_from_config,
)
from moment_glioma.tissue import WaterTensorField


def small_cfg(**kw):
    base = dict(nx=16, ny=16, model="K1F", eps=0.5, times=(2.0,))
    base.update(kw)
    return RunConfig(**base)


# ---------------------------------------------------------------------------
# relative difference
# ---------------------------------------------------------------------------

def test_relative_difference_basics():
    g = GridSpec(nx=4, ny=4, dx=0.5, dy=0.5)
    h2 = np.linspace(0.1, 2.0, 16).reshape(4, 4)
    rep = relative_difference(h2, h2, g)
    assert rep.max == 0.0 and rep.mean == 0.0
    shift = h2 + 0.05 * np.max(np.abs(h2))
    rep = relative_difference(shift, h2, g)
    assert rep.max == pytest.approx(0.05, rel=1e-12)
    assert rep.mean == pytest.approx(0.05, rel=1e-12)
    assert set(rep.areas) == {0.1, 0.05, 0.02, 0.01}
    assert rep.areas[0.01] == pytest.approx(16 * 0.25)
    assert rep.areas[0.1] == 0.0
    with pytest.raises(MetricsError):
        relative_difference(h2, np.zeros_like(h2), g)
    with pytest.raises(MetricsError):
        relative_difference(h2[:2], h2, g)


# ---------------------------------------------------------------------------
# fiber strand scenario
# ---------------------------------------------------------------------------

def test_strand_scenario_resolved_numbers():
    sc = build_fiber_strand_scenario(0.25, config=small_cfg(eps=0.25))
    assert sc.params.r == pytest.approx(1.0, rel=1e-12)
    assert sc.params.eta == pytest.approx(1.0, rel=1e-12)
    assert sc.params.eps == pytest.approx(0.25, rel=1e-12)
    # initial condition: density 1 inside the square, 1e-4 outside, |q|=0
    assert sc.rho0.max() == 1.0
    assert sc.rho0.min() == 1e-4
    assert np.count_nonzero(sc.rho0 == 1.0) >= 1
    # nondimensional grid covers the unit square
    assert sc.grid.nx * sc.grid.dx == pytest.approx(1.0)
    assert sc.t_end == pytest.approx(1.0)


def test_strand_initial_square_is_symmetric():
    for n in (60, 90):
        sc = build_fiber_strand_scenario(0.25, config=small_cfg(nx=n, ny=n))
        mask = sc.rho0 == 1.0
        assert np.array_equal(mask, mask[::-1, :])  # mirror about the strand axis
        cols = np.nonzero(mask.any(axis=0))[0]
        rows = np.nonzero(mask.any(axis=1))[0]
        # square: contiguous block, roughly (0.1/3)/dy cells wide
        assert np.all(np.diff(cols) == 1) and np.all(np.diff(rows) == 1)


def test_run_scenario_diffusion_and_kinetic_manifest(tmp_path):
    cfg = small_cfg(model="diffusion")
    sc = build_fiber_strand_scenario(0.5, config=cfg)
    out = run_scenario(sc, out_dir=tmp_path, write=True)
    m = out.manifest
    assert m["scaling"]["R"] == pytest.approx(1.0)
    assert m["conservation"]["mass_drift_rel"] < 1e-10
    assert m["notes"] == []  # x0 equals the strand extent: no mismatch
    files = [w for w in out.written if w.endswith(".txt")]
    assert files
    back = read_field(files[0])
    assert back.grid.close_to(sc.scen_grid)
    assert back.time == pytest.approx(2.0)
    mpath = [w for w in out.written if w.endswith(".json")][0]
    with open(mpath) as fh:
        assert json.load(fh)["model"] == "diffusion"


def test_run_scenario_kinetic_short(tmp_path):
    cfg = small_cfg(model="K1F", times=(0.2,))
    sc = build_fiber_strand_scenario(0.5, config=cfg)
    out = run_scenario(sc, out_dir=tmp_path, write=True)
    assert out.manifest["conservation"]["mass_drift_rel"] < 1e-11
    assert out.manifest["realizability"]["max_qhat"] <= 1 + 1e-12
    assert out.final_rho.min() > 0


# ---------------------------------------------------------------------------
# tensor-file scenario
# ---------------------------------------------------------------------------

def brain_like_file(tmp_path, nx=8, ny=8, extent=100.0):
    grid = GridSpec(nx=nx, ny=ny, x0=50.0, y0=110.0, dx=extent / nx, dy=extent / ny)
    rng = np.random.default_rng(2)
    tensors = np.empty((ny, nx, 3, 3))
    for iy in range(ny):
        for ix in range(nx):
            a = rng.normal(size=(3, 3)) * 1e-4
            tensors[iy, ix] = a @ a.T + 2e-4 * np.eye(3)
    path = tmp_path / "tensors.txt"
    write_tensor_field(path, WaterTensorField(grid, tensors))
    return path


def test_file_scenario_surfaces_x0_mismatch(tmp_path):
    path = brain_like_file(tmp_path)
    text = f"""
[scenario]
name = tensor_file
tensor_file = {path}
estimator = CL

[model]
kind = diffusion

[initial]
center_x = 100.0
center_y = 160.0
half_width = 2.5
density = 1.0
background = 1e-4

[output]
times = 1.5768e7

[physics]
preset = brain_dti
"""
    cfg = parse_config(text)
    sc = scenario_from_config(cfg)
    assert sc.notes and "x0_domain_mismatch" in sc.notes[0]
    note = sc.notes[0]["x0_domain_mismatch"]
    assert note["x0_mm"] == pytest.approx(1000.0)
    assert note["domain_extent_mm"] == pytest.approx(100.0)
    # Table parameters resolve to the published characteristic numbers
    assert sc.params.kn == pytest.approx(6.34e-3, rel=5e-3)
    assert sc.params.eta == pytest.approx(25.0)


def test_file_scenario_runs_diffusion(tmp_path):
    path = brain_like_file(tmp_path)
    cfg = RunConfig(
        scenario="tensor_file",
        tensor_file=str(path),
        model="diffusion",
        estimator="CL",
        center_x=100.0,
        center_y=160.0,
        half_width=12.5,
        times=(1.5768e7,),
    )
    from moment_glioma.config import PhysicsConfig, PHYSICS_PRESETS

    cfg.physics = PhysicsConfig(**PHYSICS_PRESETS["brain_dti"])
    sc = build_file_scenario(cfg)
    out = run_scenario(sc)
    assert out.manifest["conservation"]["mass_drift_rel"] < 1e-10
    assert out.manifest["notes"]
