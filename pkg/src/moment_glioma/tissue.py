"""Tissue fields derived from water-diffusion tensors.

The directional fiber distribution is the quadratic "peanut"

    Qhat(x, v) = 3 / (4*pi*tr(D_W)) * v^T D_W(x) v,

whose normalization, first-moment symmetry <v Qhat> = 0 and pressure tensor

    D_F = <v (x) v Qhat> = (2 D_W + tr(D_W) I) / (5 tr(D_W))

are all available in closed form. The tissue volume fraction Q is estimated
from D_W either by fractional anisotropy (FA) or by the characteristic
length (CL); the haptotactic coefficient couples Q to the receptor-binding
steady state g(Q) = k+ Q / (k+ Q + k-).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import GridSpec


class TissueError(ValueError):
    pass


# ---------------------------------------------------------------------------
# pointwise tensor quantities
# ---------------------------------------------------------------------------

def peanut_density(d_w: np.ndarray, v: np.ndarray) -> float:
    """Peanut fiber distribution 3/(4*pi*tr D_W) * v^T D_W v."""
    d_w = np.asarray(d_w, dtype=float)
    tr = np.trace(d_w)
    if tr <= 0:
        raise TissueError(f"peanut density needs tr(D_W) > 0, got {tr}")
    v = np.asarray(v, dtype=float)
    return float(3.0 / (4.0 * np.pi * tr) * (v @ d_w @ v))


def peanut_pressure_tensor(d_w: np.ndarray) -> np.ndarray:
    """Closed form of <v (x) v Qhat>; symmetric with unit trace."""
    d_w = np.asarray(d_w, dtype=float)
    tr = np.trace(d_w)
    if tr <= 0:
        raise TissueError(f"peanut pressure tensor needs tr(D_W) > 0, got {tr}")
    return (2.0 * d_w + tr * np.eye(3)) / (5.0 * tr)


def fractional_anisotropy(d_w: np.ndarray) -> float:
    """FA(D_W) = sqrt(3/2 * sum (lam_i - mean)^2 / sum lam_i^2)."""
    lam = np.linalg.eigvalsh(np.asarray(d_w, dtype=float))
    sq = np.sum(lam**2)
    if sq <= 0:
        raise TissueError("fractional anisotropy of the zero tensor is undefined")
    dev = lam - lam.mean()
    return float(np.sqrt(1.5 * np.sum(dev**2) / sq))


def characteristic_length(d_w: np.ndarray) -> float:
    """CL(D_W) = 1 - (tr(D_W) / (4 lam_max))^(3/2)."""
    d_w = np.asarray(d_w, dtype=float)
    lam = np.linalg.eigvalsh(d_w)
    lam_max = lam[-1]
    if lam_max <= 0:
        raise TissueError(f"characteristic length needs a positive max eigenvalue, got {lam_max}")
    return float(1.0 - (np.trace(d_w) / (4.0 * lam_max)) ** 1.5)


def haptotactic_coefficient(q: float, lam0: float, kplus: float, kminus: float) -> float:
    """lamH_hat(Q) = g'(Q) / (1 + alpha(Q)/lam0).

    alpha(Q) = k+ Q + k-,  g(Q) = k+ Q / (k+ Q + k-)  so
    g'(Q) = k+ k- / (k+ Q + k-)^2.
    """
    if not (0.0 <= q < 1.0):
        raise TissueError(f"volume fraction must lie in [0, 1), got {q}")
    if min(lam0, kplus, kminus) <= 0:
        raise TissueError("rates lam0, k+, k- must be positive")
    alpha = kplus * q + kminus
    gprime = kplus * kminus / (kplus * q + kminus) ** 2
    return gprime / (1.0 + alpha / lam0)


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------

@dataclass
class WaterTensorField:
    """Per-cell symmetric water-diffusion tensors on a 2D grid."""

    grid: GridSpec
    tensors: np.ndarray  # (ny, nx, 3, 3)

    def validate(self) -> None:
        t = self.tensors
        if t.shape != (self.grid.ny, self.grid.nx, 3, 3):
            raise TissueError(f"tensor array shape {t.shape} does not match grid")
        asym = np.max(np.abs(t - np.swapaxes(t, -1, -2)))
        if asym > 1e-12:
            raise TissueError(f"tensors not symmetric (max asymmetry {asym:.2e})")
        lam = np.linalg.eigvalsh(t)
        if np.min(lam) < -1e-12:
            iy, ix = np.unravel_index(int(np.argmin(lam[..., 0])), lam[..., 0].shape)
            raise TissueError(
                f"negative eigenvalue {lam[iy, ix, 0]:.3e} at cell "
                f"(ix={ix}, iy={iy}), x={self.grid.cell_x(ix):.6g}, y={self.grid.cell_y(iy):.6g}"
            )
        tr = np.trace(t, axis1=-2, axis2=-1)
        if np.min(tr) <= 0:
            iy, ix = np.unravel_index(int(np.argmin(tr)), tr.shape)
            raise TissueError(
                f"non-positive trace at cell (ix={ix}, iy={iy}), "
                f"x={self.grid.cell_x(ix):.6g}, y={self.grid.cell_y(iy):.6g}"
            )


@dataclass
class TissueFields:
    """Everything the moment systems need from the tissue."""

    grid: GridSpec
    Q: np.ndarray        # (ny, nx) volume fraction in [0, 1)
    gradQ: np.ndarray    # (ny, nx, 2) gradient on the grid spacing
    DF: np.ndarray       # (ny, nx, 3, 3) peanut pressure tensor, unit trace
    lamH: np.ndarray     # (ny, nx) haptotactic coefficient lamH_hat(Q)


def gradient_2d(field: np.ndarray, dx: float, dy: float) -> np.ndarray:
    """Second-order central gradient, first-order one-sided at edges.

    Returns (ny, nx, 2) with components (d/dx, d/dy); exact on fields that
    are linear in x and y, edges included.
    """
    gy, gx = np.gradient(field, dy, dx, edge_order=1)
    return np.stack([gx, gy], axis=-1)


_ESTIMATORS = {
    "FA": fractional_anisotropy,
    "CL": characteristic_length,
}


def derive_tissue_fields(water: WaterTensorField, estimator: str, params) -> TissueFields:
    """Volume fraction, gradient, peanut tensor and lamH_hat per cell.

    `estimator` is "FA" or "CL"; `params` supplies lambda0, kplus, kminus.
    Per-cell failures are re-raised with the cell coordinates attached.
    """
    if estimator not in _ESTIMATORS:
        raise TissueError(f"unknown volume-fraction estimator {estimator!r} (use FA or CL)")
    water.validate()
    est = _ESTIMATORS[estimator]
    g = water.grid
    Q = np.empty((g.ny, g.nx))
    DF = np.empty((g.ny, g.nx, 3, 3))
    lamH = np.empty((g.ny, g.nx))
    for iy in range(g.ny):
        for ix in range(g.nx):
            try:
                d_w = water.tensors[iy, ix]
                q = est(d_w)
                if not (0.0 <= q < 1.0):
                    raise TissueError(f"estimated volume fraction {q} outside [0, 1)")
                Q[iy, ix] = q
                DF[iy, ix] = peanut_pressure_tensor(d_w)
                lamH[iy, ix] = haptotactic_coefficient(
                    q, params.lambda0, params.kplus, params.kminus
                )
            except TissueError as err:
                raise TissueError(
                    f"cell (ix={ix}, iy={iy}) at x={g.cell_x(ix):.6g}, "
                    f"y={g.cell_y(iy):.6g}: {err}"
                ) from err
    gradQ = gradient_2d(Q, g.dx, g.dy)
    return TissueFields(grid=g, Q=Q, gradQ=gradQ, DF=DF, lamH=lamH)


def strand_d00(x1: np.ndarray, x2: np.ndarray, X: float, sigma: float) -> np.ndarray:
    """Leading eigenvalue of the fiber-strand tensor.

    D00 = 1 + 5 exp(-nu/(2 sigma^2)) with
    nu = max{0, x1 - X/2, |x2 - X/2| - 0.1}: a strand of half-width 0.1
    along x2 = X/2 that ends abruptly at x1 = X/2.
    """
    nu = np.maximum(0.0, np.maximum(x1 - X / 2.0, np.abs(x2 - X / 2.0) - 0.1))
    return 1.0 + 5.0 * np.exp(-nu / (2.0 * sigma * sigma))


def synth_fiber_strand(
    X: float, sigma: float, grid: GridSpec, d33: float = 1.0
) -> WaterTensorField:
    """Abruptly ending fiber strand, embedded 3x3 as diag(D00, 1, d33).

    Cell centers are taken in the strand's own coordinates; pass a grid
    whose spacings already include any nondimensionalization.
    """
    if sigma <= 0:
        raise TissueError(f"strand width sigma must be positive, got {sigma}")
    Xc, Yc = grid.cell_centers()
    d00 = strand_d00(Xc, Yc, X, sigma)
    tensors = np.zeros((grid.ny, grid.nx, 3, 3))
    tensors[..., 0, 0] = d00
    tensors[..., 1, 1] = 1.0
    tensors[..., 2, 2] = d33
    return WaterTensorField(grid=grid, tensors=tensors)


def peanut_node_values(tensors: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    """Peanut density evaluated at quadrature nodes for a tensor field.

    tensors: (..., 3, 3), nodes: (n, 3) -> values (..., n).
    """
    tr = np.trace(tensors, axis1=-2, axis2=-1)
    quad_form = np.einsum("ni,...ij,nj->...n", nodes, tensors, nodes)
    return 3.0 / (4.0 * np.pi) * quad_form / tr[..., None]
