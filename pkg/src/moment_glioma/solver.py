"""Realizability-preserving finite-volume scheme on a 2D Cartesian grid.

One time step Strang-splits the scaled moment system into

* a flux step: unsplit dimension-by-dimension finite-volume update with
  second-order central-WENO reconstruction in characteristic variables,
  a realizability limiter toward the cell mean, the global Lax-Friedrichs
  flux with viscosity C = 1/eps, and SSP-RK2 (Heun) with reconstruction
  and limiting re-applied in every stage;
* a source step: per-cell ODE solved with a discontinuous-Galerkin-in-time
  scheme on a quadratic nodal basis (stiffly A-stable, right-endpoint
  order 5), solved directly for linear sources and by Newton otherwise.

Boundaries are either periodic or "thermal": outgoing particles are
absorbed and re-emitted with the local fiber distribution, renormalized so
the boundary mass flux is exactly zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import GridSpec
from .reconstruct import weno2_slope  # noqa: F401  (re-exported scheme op)


class SolverError(RuntimeError):
    pass


@dataclass
class SolverConfig:
    t_end: float
    cfl: float = 0.5
    weno_theta: float = 1e-6
    weno_z: int = 2
    realizability_floor: float = 1e-12
    dg_newton_tol: float = 1e-10
    dg_newton_maxit: int = 50

    def __post_init__(self):
        if self.t_end <= 0 or not (0 < self.cfl <= 1):
            raise SolverError(f"need t_end > 0 and cfl in (0, 1], got {self.t_end}, {self.cfl}")
        if min(self.weno_theta, self.realizability_floor, self.dg_newton_tol) <= 0:
            raise SolverError("weno_theta, realizability_floor, dg_newton_tol must be positive")


def new_diagnostics() -> dict:
    return {
        "limiter_activations": 0,
        "char_fallback_cells": 0,
        "mass_flux_out": 0.0,
        "steps": 0,
    }


# ---------------------------------------------------------------------------
# reconstruction building blocks
# ---------------------------------------------------------------------------

def lax_friedrichs_flux(u_left, u_right, flux_fn, c: float):
    """Global Lax-Friedrichs flux 0.5*(F(uL) + F(uR) - C*(uR - uL))."""
    u_left = np.asarray(u_left, dtype=float)
    u_right = np.asarray(u_right, dtype=float)
    return 0.5 * (flux_fn(u_left) + flux_fn(u_right) - c * (u_right - u_left))


def realizability_limit(u_mean, u_face, floor, realizable_fn=None, iters: int = 40):
    """Largest theta in [0,1] scaling u_face toward u_mean into realizability.

    Default predicate is first-order realizability rho >= floor and
    |q| <= rho; bisection to ~1e-12. The cell mean itself must be
    realizable (scheme invariant).
    """
    from .systems import first_order_realizable

    u_mean = np.asarray(u_mean, dtype=float)
    u_face = np.asarray(u_face, dtype=float)
    pred = realizable_fn or (lambda u: first_order_realizable(u, floor))
    if not np.all(pred(u_mean[None, :])):
        raise SolverError("realizability limiter: cell mean itself is not realizable")
    if np.all(pred(u_face[None, :])):
        return u_face.copy()
    lo, hi = 0.0, 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if np.all(pred((u_mean + mid * (u_face - u_mean))[None, :])):
            lo = mid
        else:
            hi = mid
    return u_mean + lo * (u_face - u_mean)


def _limit_theta_pair(U, f_lo, f_hi, floor, system, iters: int = 40):
    """Common scaling factor per cell keeping both face values realizable."""
    ok = system.realizable_mask(f_lo, floor) & system.realizable_mask(f_hi, floor)
    theta = np.ones(U.shape[:-1])
    if np.all(ok):
        return theta, 0
    bad = ~ok
    Ub, flob, fhib = U[bad], f_lo[bad], f_hi[bad]
    lo = np.zeros(Ub.shape[0])
    hi = np.ones(Ub.shape[0])
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        cand_lo = Ub + mid[:, None] * (flob - Ub)
        cand_hi = Ub + mid[:, None] * (fhib - Ub)
        good = system.realizable_mask(cand_lo, floor) & system.realizable_mask(
            cand_hi, floor
        )
        lo = np.where(good, mid, lo)
        hi = np.where(good, hi, mid)
    theta[bad] = lo
    return theta, int(np.count_nonzero(bad))


def characteristic_reconstruct(u_left, u_center, u_right, axis, system, cfg=None,
                               cell=(0, 0)):
    """Face values of one cell from its two neighbors (standalone op).

    Transforms the one-sided differences into the eigenvector coordinates
    of the flux Jacobian at u_center and limits each characteristic field
    with the central-WENO slope (wave families with near-equal speeds are
    limited through their basis-invariant spectral projection). Falls back
    (continuously) to componentwise reconstruction when the Jacobian
    approaches the defective degenerate configurations. Returns
    (u at low face, u at high face, used_fallback).
    """
    theta = cfg.weno_theta if cfg else 1e-6
    z = cfg.weno_z if cfg else 2
    iy, ix = cell
    grid = system.cells.grid
    h = grid.dx if axis == 0 else grid.dy
    shape = system.cells.lamH.shape
    U = np.zeros(shape + (system.nvars,))
    U[iy, ix] = u_center
    data = system.char_data(U, axis)
    d_minus = np.zeros_like(U)
    d_plus = np.zeros_like(U)
    d_minus[iy, ix] = (np.asarray(u_center, dtype=float) - np.asarray(u_left, dtype=float)) / h
    d_plus[iy, ix] = (np.asarray(u_right, dtype=float) - np.asarray(u_center, dtype=float)) / h
    slope_field, _ = system.char_slopes(data, d_minus, d_plus, h, theta, z)
    slope = slope_field[iy, ix]
    fb = bool(system.char_weight(data)[iy, ix] < 1.0)
    return u_center - 0.5 * h * slope, u_center + 0.5 * h * slope, fb


# ---------------------------------------------------------------------------
# flux step
# ---------------------------------------------------------------------------

def _reconstruct_axis(U, axis, grid, system, cfg, diag, bc, char=None):
    arr_ax = 1 - axis  # x varies along array axis 1, y along axis 0
    h = grid.dx if axis == 0 else grid.dy
    d_minus = np.zeros_like(U)
    d_plus = np.zeros_like(U)
    if bc == "periodic":
        d_minus[...] = (U - np.roll(U, 1, axis=arr_ax)) / h
        d_plus[...] = (np.roll(U, -1, axis=arr_ax) - U) / h
    else:
        sl_hi = (slice(None),) * arr_ax + (slice(1, None),)
        sl_lo = (slice(None),) * arr_ax + (slice(None, -1),)
        diff = (U[sl_hi] - U[sl_lo]) / h
        d_minus[sl_hi] = diff
        d_plus[sl_lo] = diff
    data = char if char is not None else system.char_data(U, axis)
    slope, n_blended = system.char_slopes(
        data, d_minus, d_plus, h, cfg.weno_theta, cfg.weno_z
    )
    diag["char_fallback_cells"] += n_blended
    f_lo = U - 0.5 * h * slope
    f_hi = U + 0.5 * h * slope
    if getattr(system, "limit_realizability", False):
        theta, nbad = _limit_theta_pair(
            U, f_lo, f_hi, cfg.realizability_floor, system
        )
        if nbad:
            diag["limiter_activations"] += nbad
            slope = slope * theta[..., None]
            f_lo = U - 0.5 * h * slope
            f_hi = U + 0.5 * h * slope
    return f_lo, f_hi


def _flux_divergence(U, system, grid, cfg, diag, bc, char=None):
    C = system.wave_speed
    rhs = np.zeros_like(U)
    boundary_mass_rate = 0.0
    for axis in (0, 1):
        arr_ax = 1 - axis
        h = grid.dx if axis == 0 else grid.dy
        f_lo, f_hi = _reconstruct_axis(
            U, axis, grid, system, cfg, diag, bc,
            char=None if char is None else char[axis],
        )
        F_lo = system.flux(f_lo, axis)
        F_hi = system.flux(f_hi, axis)
        if bc == "periodic":
            f_lo_next = np.roll(f_lo, -1, axis=arr_ax)
            F_lo_next = np.roll(F_lo, -1, axis=arr_ax)
            fhat_hi = 0.5 * (F_hi + F_lo_next - C * (f_lo_next - f_hi))
            fhat_lo = np.roll(fhat_hi, 1, axis=arr_ax)
        else:
            sl_hi = (slice(None),) * arr_ax + (slice(1, None),)
            sl_lo = (slice(None),) * arr_ax + (slice(None, -1),)
            interior = 0.5 * (F_hi[sl_lo] + F_lo[sl_hi] - C * (f_lo[sl_hi] - f_hi[sl_lo]))
            fhat_hi = np.empty_like(U)
            fhat_lo = np.empty_like(U)
            fhat_hi[sl_lo] = interior
            fhat_lo[sl_hi] = interior
            if axis == 0:
                out_hi = system.boundary_flux("right", U[:, -1])
                out_lo = system.boundary_flux("left", U[:, 0])
                fhat_hi[:, -1] = out_hi
                fhat_lo[:, 0] = -out_lo
                face_len = grid.dy
            else:
                out_hi = system.boundary_flux("top", U[-1, :])
                out_lo = system.boundary_flux("bottom", U[0, :])
                fhat_hi[-1, :] = out_hi
                fhat_lo[0, :] = -out_lo
                face_len = grid.dx
            boundary_mass_rate += float(
                (out_hi[:, 0].sum() + out_lo[:, 0].sum()) * face_len
            )
        rhs -= (fhat_hi - fhat_lo) / h
    return rhs, boundary_mass_rate


def _require_realizable(U, system, floor, where):
    if not getattr(system, "limit_realizability", False):
        return
    # roundoff slack: provably-realizable updates may sit on the boundary
    rho = U[..., 0]
    qn = np.linalg.norm(U[..., 1:4], axis=-1)
    ok = (rho >= floor * (1.0 - 1e-12) - 1e-300) & (qn <= rho * (1.0 + 1e-12) + 1e-300)
    if not np.all(ok):
        iy, ix = np.argwhere(~ok)[0]
        raise SolverError(
            f"realizability violated after {where} at cell (ix={ix}, iy={iy}): "
            f"rho={rho[iy, ix]:.6e}, |q|={qn[iy, ix]:.6e}"
        )


def flux_step(U, dt, system, grid, cfg, diag=None, bc="thermal"):
    """One SSP-RK2 (Heun) step of the semidiscrete finite-volume update.

    Reconstruction and limiting run in both stages; the characteristic
    basis is evaluated once at the step state and reused for the inner
    stage (the basis enters only the limiter, not the formal order).
    """
    diag = diag if diag is not None else new_diagnostics()
    hmin = min(grid.dx, grid.dy)
    bound = cfg.cfl * hmin / system.wave_speed
    if dt > bound * (1.0 + 1e-12):
        raise SolverError(f"dt={dt:.6e} exceeds the CFL bound {bound:.6e}")
    mass0 = float(U[..., 0].sum())
    char = (system.char_data(U, 0), system.char_data(U, 1))
    L0, b0 = _flux_divergence(U, system, grid, cfg, diag, bc, char)
    U1 = U + dt * L0
    _require_realizable(U1, system, cfg.realizability_floor, "flux stage 1")
    L1, b1 = _flux_divergence(U1, system, grid, cfg, diag, bc, char)
    U2 = 0.5 * (U + U1 + dt * L1)
    _require_realizable(U2, system, cfg.realizability_floor, "flux stage 2")
    outflow = 0.5 * dt * (b0 + b1)
    diag["mass_flux_out"] += outflow
    diag["mass_balance_residual"] = (
        (float(U2[..., 0].sum()) - mass0) * grid.cell_area + outflow
    )
    return U2


# ---------------------------------------------------------------------------
# DG(2) source integrator
# ---------------------------------------------------------------------------

# stiffness of the nodal basis phi_i(tau) at tau = (-1, 0, 1):
# A[i, j] = integral of phi_j' phi_i over [-1, 1]
_DG_A = np.array([
    [-0.5, 2.0 / 3.0, -1.0 / 6.0],
    [-2.0 / 3.0, 0.0, 2.0 / 3.0],
    [1.0 / 6.0, -2.0 / 3.0, 0.5],
])
_DG_M = _DG_A.copy()
_DG_M[0, 0] += 1.0  # + upwind coupling phi_i(-1) phi_j(-1)
# mass matrix integral of phi_i phi_j
_DG_B = np.array([[4.0, 2.0, -1.0], [2.0, 16.0, 2.0], [-1.0, 2.0, 4.0]]) / 15.0
_TAU_G = np.array([-math.sqrt(3.0 / 5.0), 0.0, math.sqrt(3.0 / 5.0)])
_W_G = np.array([5.0, 8.0, 5.0]) / 9.0


def _phi(tau):
    return np.array([0.5 * tau * tau - 0.5 * tau, 1.0 - tau * tau, 0.5 * tau * tau + 0.5 * tau])


_PHI_G = np.stack([_phi(t) for t in _TAU_G])  # (gauss, basis)


def dg_linear_propagator(source_matrix, dt):
    """Map u_old -> u(t+dt) of u' = S u under the quadratic DG scheme.

    source_matrix: (..., m, m). The DG system matrix is
    kron(M, I) - (dt/2) kron(B, S); the propagator is the (2, 0) block of
    its inverse applied to e0 (x) u_old.
    """
    S = np.asarray(source_matrix, dtype=float)
    m = S.shape[-1]
    lead = S.shape[:-2]
    big = np.zeros(lead + (3, m, 3, m))
    eye = np.eye(m)
    for i in range(3):
        for j in range(3):
            big[..., i, :, j, :] = _DG_M[i, j] * eye - 0.5 * dt * _DG_B[i, j] * S
    big = big.reshape(lead + (3 * m, 3 * m))
    inv = np.linalg.inv(big)
    return inv[..., 2 * m :, :m]


def _fd_jacobian(source_fn, u, h=1e-7):
    m = u.shape[-1]
    J = np.empty(u.shape + (m,))
    base = np.maximum(1.0, np.abs(u))
    for k in range(m):
        du = np.zeros_like(u)
        du[..., k] = h * base[..., k]
        J[..., :, k] = (source_fn(u + du) - source_fn(u - du)) / (2 * h * base[..., k:k + 1])
    return J


def dg_source_step(u_old, dt, source_fn, cfg, jacobian=None, source_matrix=None,
                   chord_cache=None):
    """Advance u' = s(u) over dt with the quadratic nodal DG scheme.

    Solves for the three internal values at tau = (-1, 0, 1) and returns
    the right endpoint. Linear sources (source_matrix given, s = S u) are
    solved directly; otherwise chord Newton with `jacobian` (finite
    differences if omitted): the assembled system Jacobian is reused while
    the residual contracts and rebuilt when convergence stalls. Passing a
    `chord_cache` dict carries the factorization across consecutive steps.
    Batched over all leading axes of u_old.
    """
    u_old = np.asarray(u_old, dtype=float)
    if source_matrix is not None:
        prop = dg_linear_propagator(source_matrix, dt)
        return np.einsum("...ij,...j->...i", prop, u_old)

    m = u_old.shape[-1]
    jac = jacobian or (lambda u: _fd_jacobian(source_fn, u))
    Unodes = np.repeat(u_old[..., None, :], 3, axis=-2)  # (..., 3, m)
    scale = np.maximum(1.0, np.max(np.abs(u_old), axis=-1))
    history = []
    inv_big = None
    if chord_cache is not None:
        cached = chord_cache.get("inv")
        if cached is not None and cached.shape[:-2] == u_old.shape[:-1]:
            inv_big = cached
    rebuilds = 0
    for it in range(cfg.dg_newton_maxit):
        u_g = np.einsum("gi,...im->...gm", _PHI_G, Unodes)
        s_g = np.stack([source_fn(u_g[..., g, :]) for g in range(3)], axis=-2)
        res = np.einsum("ij,...jm->...im", _DG_M, Unodes)
        res -= 0.5 * dt * np.einsum("g,gi,...gm->...im", _W_G, _PHI_G, s_g)
        res[..., 0, :] -= u_old
        rmax = float(np.max(np.abs(res) / scale[..., None, None]))
        history.append(rmax)
        if rmax <= cfg.dg_newton_tol:
            if chord_cache is not None:
                chord_cache["inv"] = inv_big
            return Unodes[..., 2, :]
        stalled = len(history) >= 2 and history[-1] > 0.5 * history[-2]
        if inv_big is None or (stalled and rebuilds < 8):
            J_g = np.stack([jac(u_g[..., g, :]) for g in range(3)], axis=-3)
            big = np.zeros(u_old.shape[:-1] + (3, m, 3, m))
            eye = np.eye(m)
            for i in range(3):
                for j in range(3):
                    big[..., i, :, j, :] = _DG_M[i, j] * eye - 0.5 * dt * np.einsum(
                        "g,...gkl->...kl", _W_G * _PHI_G[:, i] * _PHI_G[:, j], J_g
                    )
            big = big.reshape(u_old.shape[:-1] + (3 * m, 3 * m))
            inv_big = np.linalg.inv(big)
            rebuilds += 1
        delta = np.einsum(
            "...ij,...j->...i", inv_big, res.reshape(u_old.shape[:-1] + (3 * m,))
        )
        Unodes = Unodes - delta.reshape(Unodes.shape)
    raise SolverError(
        f"DG source Newton did not converge in {cfg.dg_newton_maxit} iterations; "
        f"residual history {['%.3e' % r for r in history]}"
    )


# ---------------------------------------------------------------------------
# Strang splitting and the run driver
# ---------------------------------------------------------------------------

def _source_half_step(U, half_dt, system, cfg, diag, propagator=None, chord_cache=None):
    if propagator is not None:
        U = np.einsum("yxij,yxj->yxi", propagator, U)
    elif system.source_matrix is not None:
        U = dg_source_step(U, half_dt, system.source, cfg, source_matrix=system.source_matrix)
    else:
        U = dg_source_step(
            U, half_dt, system.source, cfg, jacobian=system.source_jacobian,
            chord_cache=chord_cache,
        )
    _require_realizable(U, system, cfg.realizability_floor, "source step")
    return U


def strang_step(U, dt, system, grid, cfg, diag=None, bc="thermal", propagator=None,
                chord_cache=None):
    """source(dt/2) then flux(dt) then source(dt/2)."""
    diag = diag if diag is not None else new_diagnostics()
    U = _source_half_step(U, 0.5 * dt, system, cfg, diag, propagator, chord_cache)
    U = flux_step(U, dt, system, grid, cfg, diag, bc)
    U = _source_half_step(U, 0.5 * dt, system, cfg, diag, propagator, chord_cache)
    diag["steps"] += 1
    return U


def thermal_boundary_flux(u_interior, n, system, edge_index: int = 0):
    """Thermal flux vector at one boundary cell (outward direction).

    `n` must be an outward axis normal (+-e1 or +-e2); the anchor at the
    addressed boundary cell is the one the system was built with.
    """
    n = np.asarray(n, dtype=float)
    sides = {(-1, 0): "left", (1, 0): "right", (0, -1): "bottom", (0, 1): "top"}
    key = (int(round(n[0])), int(round(n[1])))
    if key not in sides or abs(np.linalg.norm(n) - 1) > 1e-12:
        raise SolverError(f"thermal boundary normal must be an axis unit vector, got {n}")
    side = sides[key]
    shape = system.cells.lamH.shape
    ne = shape[0] if side in ("left", "right") else shape[1]
    U_edge = np.zeros((ne, system.nvars))
    U_edge[edge_index] = u_interior
    return system.boundary_flux(side, U_edge)[edge_index]


@dataclass
class KineticRunResult:
    grid: GridSpec
    times: list
    snapshots: list          # rho fields at `times`
    final_state: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def run_kinetic(
    system,
    grid: GridSpec,
    rho0: np.ndarray,
    cfg: SolverConfig,
    bc: str = "thermal",
    output_times=(),
    cfl_2d_factor: float = 0.5,
) -> KineticRunResult:
    """Advance to t_end with a fixed step below the two-dimensional CFL bound.

    dt = cfl * cfl_2d_factor * min(dx, dy) / C, rounded down so the steps
    tile [0, t_end] exactly; the extra factor accounts for the unsplit
    x+y update (stricter than the flux_step precondition).
    """
    U = system.initial_state(np.asarray(rho0, dtype=float))
    dt_target = cfg.cfl * cfl_2d_factor * min(grid.dx, grid.dy) / system.wave_speed
    nsteps = max(1, math.ceil(cfg.t_end / dt_target - 1e-12))
    dt = cfg.t_end / nsteps
    propagator = None
    if system.source_matrix is not None:
        propagator = dg_linear_propagator(system.source_matrix, 0.5 * dt)
    diag = new_diagnostics()
    diag["dt"] = dt
    diag["nsteps"] = nsteps
    diag["mass_initial"] = float(U[..., 0].sum()) * grid.cell_area

    want = sorted(set(min(nsteps, max(1, round(t / dt))) for t in output_times if t > 0))
    times, snapshots = [], []
    if any(t <= 0 for t in output_times):
        times.append(0.0)
        snapshots.append(system.rho(U).copy())
    chord_cache: dict = {}
    for step in range(1, nsteps + 1):
        U = strang_step(U, dt, system, grid, cfg, diag, bc, propagator, chord_cache)
        if want and step == want[0]:
            times.append(step * dt)
            snapshots.append(system.rho(U).copy())
            want.pop(0)
    diag["mass_final"] = float(U[..., 0].sum()) * grid.cell_area
    denom = max(abs(diag["mass_initial"]), 1e-300)
    diag["mass_drift_rel"] = abs(
        diag["mass_final"] - diag["mass_initial"] + diag["mass_flux_out"]
    ) / denom
    if hasattr(system, "fallback_count"):
        diag["closure_fallbacks"] = system.fallback_count
    rho = system.rho(U)
    diag["min_rho"] = float(rho.min())
    qn = np.linalg.norm(U[..., 1:4], axis=-1)
    diag["max_qhat"] = float(np.max(qn / np.maximum(rho, 1e-300)))
    return KineticRunResult(
        grid=grid, times=times, snapshots=snapshots, final_state=U, diagnostics=diag
    )
