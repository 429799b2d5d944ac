"""Reconstruction primitives shared by the solver and the moment systems.

The scalar central-WENO limiter, its norm-weighted vector variant for wave
families with (near-)multiple speeds, and the batched canonical
eigendecomposition used by systems without a closed-form characteristic
structure.
"""

from __future__ import annotations

import numpy as np


def weno2_slope(d_minus, d_plus, dx, theta: float = 1e-6, z: int = 2):
    """Central-WENO limited slope from the two one-sided slopes.

    Weights w(d) = (theta + |dx*d|)^(-z); evaluated in the product form
    (p_plus*d_minus + p_minus*d_plus)/(p_minus + p_plus) with
    p = (theta + |dx*d|)^z, which avoids the reciprocal overflow and keeps
    the exact antisymmetry slope(-d_plus, -d_minus) = -slope(d_minus, d_plus).
    """
    d_minus = np.asarray(d_minus, dtype=float)
    d_plus = np.asarray(d_plus, dtype=float)
    p_minus = (theta + np.abs(dx * d_minus)) ** z
    p_plus = (theta + np.abs(dx * d_plus)) ** z
    return (p_plus * d_minus + p_minus * d_plus) / (p_minus + p_plus)


def vector_weno_slope(a, b, h, theta, z):
    """Central-WENO combination of two slope vectors, weighted by norms.

    Reduces to the scalar limiter for one-dimensional families; for a wave
    family's projected differences it is invariant under the arbitrary
    basis of the family's eigenspace.
    """
    pa = (theta + h * np.linalg.norm(a, axis=-1)) ** z
    pb = (theta + h * np.linalg.norm(b, axis=-1)) ** z
    return (pb[..., None] * a + pa[..., None] * b) / (pa + pb)[..., None]


def canonical_eig(J: np.ndarray, cond_threshold: float = 1e8, imag_tol: float = 1e-9):
    """Batched eigendecomposition with a deterministic canonical form.

    Eigenvalues are sorted ascending (eigenvector columns reordered to
    match) and each eigenvector is scaled so its largest-magnitude
    component is positive. Returns (lam, R, Rinv, weight): `weight` in
    [0, 1] ramps to 0 (componentwise fallback, R = I) over the last decade
    before the eigenvector conditioning fails the 1e-8
    smallest-singular-value threshold (sigma_min estimated through the
    Frobenius norm of the inverse, exact up to sqrt(m)) or when the
    spectrum stops being real to `imag_tol`.
    """
    m = J.shape[-1]
    eye = np.eye(m)
    ev, V = np.linalg.eig(J)
    scale = np.maximum(1.0, np.max(np.abs(ev.real), axis=-1))
    imag_bad = np.max(np.abs(ev.imag), axis=-1) > imag_tol * scale
    order = np.argsort(ev.real, axis=-1, kind="stable")
    lam = np.take_along_axis(ev.real, order, axis=-1)
    V = np.take_along_axis(V.real, order[..., None, :], axis=-1)
    idx = np.argmax(np.abs(V), axis=-2)
    lead = np.take_along_axis(V, idx[..., None, :], axis=-2)[..., 0, :]
    V = V * np.where(lead >= 0, 1.0, -1.0)[..., None, :]
    norms = np.linalg.norm(V, axis=-2)
    V = V / np.where(norms > 0, norms, 1.0)[..., None, :]
    # |det| <= 8*sigma_min for unit columns: screen singular cells so the
    # batched inverse cannot fail, then estimate the conditioning
    singular = np.abs(np.linalg.det(V)) < 8.0 / cond_threshold
    R = np.where(singular[..., None, None], eye, V)
    Rinv = np.linalg.inv(R)
    inv_fro = np.sqrt(np.sum(Rinv * Rinv, axis=(-2, -1)))
    with np.errstate(divide="ignore", invalid="ignore"):
        w_cond = np.clip(np.log10(cond_threshold / np.maximum(inv_fro, 1.0)), 0.0, 1.0)
    weight = np.where(singular | imag_bad | ~np.isfinite(inv_fro), 0.0, w_cond)
    off = weight <= 0.0
    R = np.where(off[..., None, None], eye, R)
    Rinv = np.where(off[..., None, None], eye, Rinv)
    return lam, R, Rinv, weight


def _groups_from_pattern(pattern: int, m: int) -> list[list[int]]:
    """Segment indices 0..m-1: bit k of `pattern` joins k and k+1."""
    groups = [[0]]
    for k in range(m - 1):
        if (pattern >> k) & 1:
            groups[-1].append(k + 1)
        else:
            groups.append([k + 1])
    return groups


def _pattern_slope(pattern, m, Rm, Rim, dm, dp, h, theta, z):
    """Projector-group WENO slope for one fixed grouping pattern."""
    groups = _groups_from_pattern(pattern, m)
    eye = np.eye(m)
    big = max(range(len(groups)), key=lambda g: len(groups[g]))
    projs = {}
    total = 0.0
    for gi, g in enumerate(groups):
        if gi == big:
            continue
        P = np.einsum("cik,ckj->cij", Rm[:, :, g], Rim[:, g, :])
        projs[gi] = P
        total = total + P
    # the largest family's projector as the complement of the others stays
    # accurate when its eigenvectors are nearly parallel
    projs[big] = eye - total
    s = np.zeros_like(dm)
    for gi in range(len(groups)):
        P = projs[gi]
        a = np.einsum("cij,cj->ci", P, dm)
        b = np.einsum("cij,cj->ci", P, dp)
        s = s + vector_weno_slope(a, b, h, theta, z)
    return s


def group_characteristic_slopes(
    lam, R, Rinv, d_minus, d_plus, h, theta, z,
    merge_lo: float = 1e-2, merge_hi: float = 2e-2,
):
    """Limited slopes in characteristic variables, invariant under the
    arbitrary eigenbasis of (near-)multiple eigenvalues.

    Wave families whose speeds sit within `merge_lo` (relative) of each
    other are limited jointly through their spectral projector (a
    basis-invariant object, unlike the individual eigenvectors LAPACK
    returns for a multiple eigenvalue); for well-separated simple
    eigenvalues this reduces exactly to the per-characteristic-field
    limiter. Merged and separate treatments are blended multilinearly over
    the gap window [merge_lo, merge_hi] so the slope stays a continuous
    function of the state.
    """
    m = lam.shape[-1]
    scale = np.maximum(1.0, np.max(np.abs(lam), axis=-1))
    gaps = np.diff(lam, axis=-1) / scale[..., None]
    beta = np.clip((merge_hi - gaps) / (merge_hi - merge_lo), 0.0, 1.0)  # (..., m-1)
    bits = 1 << np.arange(m - 1)
    merged_pat = ((beta >= 1.0) * bits).sum(axis=-1)
    frac_pat = (((beta > 0.0) & (beta < 1.0)) * bits).sum(axis=-1)
    combo = merged_pat * (1 << (m - 1)) + frac_pat
    slope = np.zeros_like(d_minus)
    for c in np.unique(combo):
        mask = combo == c
        base = int(c) >> (m - 1)
        frac_bits = [k for k in range(m - 1) if (int(c) & (1 << k))]
        Rm, Rim = R[mask], Rinv[mask]
        dm, dp = d_minus[mask], d_plus[mask]
        if not frac_bits:
            slope[mask] = _pattern_slope(base, m, Rm, Rim, dm, dp, h, theta, z)
            continue
        beta_m = beta[mask]
        s = np.zeros_like(dm)
        for sub in range(1 << len(frac_bits)):
            pat = base
            w = np.ones(dm.shape[0])
            for j, k in enumerate(frac_bits):
                if (sub >> j) & 1:
                    pat |= 1 << k
                    w = w * beta_m[:, k]
                else:
                    w = w * (1.0 - beta_m[:, k])
            s = s + w[:, None] * _pattern_slope(pat, m, Rm, Rim, dm, dp, h, theta, z)
        slope[mask] = s
    return slope
