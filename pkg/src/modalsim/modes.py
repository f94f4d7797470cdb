"""Analytical eigenpairs for fixed strings, fixed membranes, and simply
supported plates, plus projection/readout between physical and modal space.

All bases solve  laplacian(Phi) = -lambda * Phi  with sine shapes:

    string    Phi_m(x)    = sin(m pi x / L),                lambda_m  = (m pi / L)^2
    rectangle Phi_mn(x,y) = sin(m pi x / Lx) sin(n pi y/Ly), lambda_mn = (m pi/Lx)^2 + (n pi/Ly)^2

The biharmonic eigenvalue of a simply supported plate is lambda^2, so the same
basis serves membranes and plates. Modes are ordered by ascending eigenvalue
with lexicographic tie-break on the index label. Unit L2 normalisation is on
by default (shape values scaled so ||Phi|| = 1); raw norms stay available.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np


def _sinpi(t):
    """sin(pi*t) with exact zeros at integer t (and full accuracy for large t)."""
    t = np.asarray(t, dtype=float)
    n = np.floor(t)
    f = t - n
    s = np.where(f == 0.0, 0.0, np.sin(np.pi * f))
    return np.where(np.mod(n, 2) == 0, s, -s)


def _cospi(t):
    """cos(pi*t) with exact zeros at half-integer t."""
    t = np.asarray(t, dtype=float)
    n = np.floor(t)
    f = t - n
    c = np.where(f == 0.5, 0.0, np.cos(np.pi * f))
    return np.where(np.mod(n, 2) == 0, c, -c)


@dataclass(frozen=True)
class ModeBasis:
    """Ordered eigenpairs of one domain.

    labels      : tuple of (m,) or (m, n) integer indices, 1-based
    eigenvalues : ascending Laplacian eigenvalues (1/m^2)
    norms_sq    : ||Phi||^2 per mode (all 1.0 when unit_normalized)
    """

    kind: str  # "string" | "rect"
    lengths: Tuple[float, ...]
    labels: Tuple[Tuple[int, ...], ...]
    eigenvalues: np.ndarray
    norms_sq: np.ndarray
    unit_normalized: bool

    @property
    def count(self) -> int:
        return len(self.labels)

    @property
    def raw_norms_sq(self) -> np.ndarray:
        """||Phi||^2 of the unscaled sine shapes (L/2 or Lx*Ly/4)."""
        if self.kind == "string":
            return np.full(self.count, self.lengths[0] / 2.0)
        return np.full(self.count, self.lengths[0] * self.lengths[1] / 4.0)

    @property
    def shape_scale(self) -> float:
        """Factor applied to the raw sine shapes."""
        if not self.unit_normalized:
            return 1.0
        return 1.0 / math.sqrt(self.raw_norms_sq[0])

    def same_domain(self, other: "ModeBasis") -> bool:
        return self.kind == other.kind and self.lengths == other.lengths


def string_basis(L: float, count: int, unit_norm: bool = True) -> ModeBasis:
    """First `count` modes of a fixed-fixed string of length L."""
    if L <= 0:
        raise ValueError("L must be positive")
    if count < 1:
        raise ValueError("count must be >= 1")
    m = np.arange(1, count + 1)
    lam = (m * np.pi / L) ** 2
    norms = np.ones(count) if unit_norm else np.full(count, L / 2.0)
    return ModeBasis(
        kind="string",
        lengths=(L,),
        labels=tuple((int(k),) for k in m),
        eigenvalues=lam,
        norms_sq=norms,
        unit_normalized=unit_norm,
    )


def rect_basis(Lx: float, Ly: float, count: int, unit_norm: bool = True) -> ModeBasis:
    """The `count` smallest-eigenvalue sine-product modes of an Lx x Ly rectangle.

    Serves fixed membranes and simply supported plates alike (the plate's
    biharmonic eigenvalue is the square of the reported Laplacian eigenvalue).
    """
    if Lx <= 0 or Ly <= 0:
        raise ValueError("Lx and Ly must be positive")
    if count < 1:
        raise ValueError("count must be >= 1")

    def lam_of(m, n):
        return (m * np.pi / Lx) ** 2 + (n * np.pi / Ly) ** 2

    K = max(2, int(math.ceil(math.sqrt(count))) + 1)
    while True:
        cand = [((m, n), lam_of(m, n)) for m in range(1, K + 1) for n in range(1, K + 1)]
        cand.sort(key=lambda it: (it[1], it[0]))
        if len(cand) >= count:
            cutoff = cand[count - 1][1]
            # every unexplored lattice point has m > K or n > K
            boundary = min(lam_of(K + 1, 1), lam_of(1, K + 1))
            if boundary > cutoff:
                break
        K *= 2

    chosen = cand[:count]
    norms = np.ones(count) if unit_norm else np.full(count, Lx * Ly / 4.0)
    return ModeBasis(
        kind="rect",
        lengths=(Lx, Ly),
        labels=tuple((int(m), int(n)) for (m, n), _ in chosen),
        eigenvalues=np.array([l for _, l in chosen]),
        norms_sq=norms,
        unit_normalized=unit_norm,
    )


def basis_for(geometry, count: int, unit_norm: bool = True) -> ModeBasis:
    """Build the analytical basis matching a geometry object from model.py."""
    from .model import RectMembrane, RectPlate, String

    if isinstance(geometry, String):
        return string_basis(geometry.L, count, unit_norm)
    if isinstance(geometry, (RectMembrane, RectPlate)):
        return rect_basis(geometry.Lx, geometry.Ly, count, unit_norm)
    raise TypeError(f"unsupported geometry {type(geometry).__name__}")


def airy_eigenvalues(basis: ModeBasis) -> np.ndarray:
    """zeta^4 of the in-plane (Airy) modes: the biharmonic eigenvalues lambda^2."""
    return basis.eigenvalues**2


def _check_point(basis: ModeBasis, point) -> Tuple[float, ...]:
    p = np.atleast_1d(np.asarray(point, dtype=float))
    if basis.kind == "string":
        if p.shape != (1,):
            raise ValueError("string domain expects a scalar point")
        if not (0.0 <= p[0] <= basis.lengths[0]):
            raise ValueError(f"point {p[0]} outside domain [0, {basis.lengths[0]}]")
    else:
        if p.shape != (2,):
            raise ValueError("rectangular domain expects an (x, y) point")
        for c, L, name in zip(p, basis.lengths, "xy"):
            if not (0.0 <= c <= L):
                raise ValueError(f"point {name}={c} outside domain [0, {L}]")
    return tuple(p)


def evaluate_mode(basis: ModeBasis, idx: int, point) -> float:
    """Shape value Phi_idx at a point (normalisation scaling included)."""
    p = _check_point(basis, point)
    lab = basis.labels[idx]
    if basis.kind == "string":
        val = _sinpi(lab[0] * (p[0] / basis.lengths[0]))
    else:
        val = _sinpi(lab[0] * (p[0] / basis.lengths[0])) * _sinpi(
            lab[1] * (p[1] / basis.lengths[1])
        )
    return float(val) * basis.shape_scale


def evaluate_all_modes(basis: ModeBasis, point) -> np.ndarray:
    """Vector of all shape values at one point."""
    p = _check_point(basis, point)
    labs = np.asarray(basis.labels, dtype=float)
    if basis.kind == "string":
        vals = _sinpi(labs[:, 0] * (p[0] / basis.lengths[0]))
    else:
        vals = _sinpi(labs[:, 0] * (p[0] / basis.lengths[0])) * _sinpi(
            labs[:, 1] * (p[1] / basis.lengths[1])
        )
    return vals * basis.shape_scale


@dataclass(frozen=True)
class PointReadout:
    """Per-mode weights mapping modal amplitudes to displacement at one point."""

    weights: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("readout weights must be finite")

    def __call__(self, q: np.ndarray) -> np.ndarray:
        return np.asarray(q) @ self.weights


def point_readout(basis: ModeBasis, point) -> PointReadout:
    """Physical displacement readout: weights Phi_mu(p)."""
    return PointReadout(weights=evaluate_all_modes(basis, point))


def project_point_excitation(basis: ModeBasis, point) -> np.ndarray:
    """Modal gains of a point force at p: Phi_mu(p) / ||Phi_mu||^2."""
    return evaluate_all_modes(basis, point) / basis.norms_sq


def _max_axis_indices(basis: ModeBasis) -> Tuple[int, ...]:
    labs = np.asarray(basis.labels)
    return tuple(int(v) for v in labs.max(axis=0))


def required_grid_points(basis: ModeBasis, points_per_halfwave: int = 8) -> Tuple[int, ...]:
    """Minimum uniform grid points per axis: ppw points per shortest half-wavelength."""
    return tuple(points_per_halfwave * m + 1 for m in _max_axis_indices(basis))


def _check_grid_resolution(basis: ModeBasis, axes: Sequence[np.ndarray], ppw: int = 8):
    need = required_grid_points(basis, ppw)
    for ax, n_need, name in zip(axes, need, "xy"):
        if len(ax) < n_need:
            raise ValueError(
                f"grid too coarse along {name}: {len(ax)} points, "
                f"requires at least {n_need} ({ppw} per shortest mode half-wavelength)"
            )


def sample_modes(basis: ModeBasis, axes: Sequence[np.ndarray]) -> np.ndarray:
    """Shape values on a uniform grid.

    Returns [n_modes, nx] for strings or [n_modes, ny, nx] for rectangles.
    """
    labs = np.asarray(basis.labels, dtype=float)
    if basis.kind == "string":
        (x,) = axes
        vals = _sinpi(np.outer(labs[:, 0], x / basis.lengths[0]))
    else:
        x, y = axes
        sx = _sinpi(labs[:, 0][:, None] * (x / basis.lengths[0])[None, :])  # [M, nx]
        sy = _sinpi(labs[:, 1][:, None] * (y / basis.lengths[1])[None, :])  # [M, ny]
        vals = sy[:, :, None] * sx[:, None, :]  # [M, ny, nx]
    return vals * basis.shape_scale


def _trapezoid_weights(ax: np.ndarray) -> np.ndarray:
    dx = ax[1] - ax[0]
    w = np.full(len(ax), dx)
    w[0] = w[-1] = dx / 2.0
    return w


def project_function(basis: ModeBasis, values: np.ndarray, axes: Sequence[np.ndarray],
                     ppw: int = 8) -> np.ndarray:
    """Modal coordinates <f, Phi_mu> / ||Phi_mu||^2 by trapezoidal quadrature.

    `values` is sampled on the uniform grid given by `axes` ((x,) for strings,
    (x, y) for rectangles with values indexed [y, x]). Rejects grids with fewer
    than `ppw` points per shortest mode half-wavelength.
    """
    axes = [np.asarray(a, dtype=float) for a in axes]
    _check_grid_resolution(basis, axes, ppw)
    shapes = sample_modes(basis, axes)
    if basis.kind == "string":
        w = _trapezoid_weights(axes[0])
        inner = shapes @ (np.asarray(values) * w)
    else:
        wx = _trapezoid_weights(axes[0])
        wy = _trapezoid_weights(axes[1])
        weighted = np.asarray(values) * np.outer(wy, wx)
        inner = np.einsum("myx,yx->m", shapes, weighted)
    return inner / basis.norms_sq


def reconstruct(basis: ModeBasis, q: np.ndarray, axes: Sequence[np.ndarray]) -> np.ndarray:
    """Physical field from modal coordinates on a grid: sum_mu q_mu Phi_mu."""
    shapes = sample_modes(basis, [np.asarray(a, dtype=float) for a in axes])
    return np.tensordot(np.asarray(q), shapes, axes=(0, 0))


def mode_second_derivatives(basis: ModeBasis, idx: int, X: np.ndarray, Y: np.ndarray):
    """Closed-form Hessian entries (f_xx, f_yy, f_xy) of a rectangle mode on a grid."""
    if basis.kind != "rect":
        raise ValueError("second derivatives are provided for rectangle modes")
    m, n = basis.labels[idx]
    Lx, Ly = basis.lengths
    kx, ky = m * np.pi / Lx, n * np.pi / Ly
    sx, sy = _sinpi(m * (X / Lx)), _sinpi(n * (Y / Ly))
    cx, cy = _cospi(m * (X / Lx)), _cospi(n * (Y / Ly))
    s = basis.shape_scale
    fxx = -(kx**2) * sx * sy * s
    fyy = -(ky**2) * sx * sy * s
    fxy = kx * ky * cx * cy * s
    return fxx, fyy, fxy
