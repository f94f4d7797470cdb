"""Nonlinear force models in modal coordinates.

Two mechanisms:

* tension modulation (strings/membranes): deformation adds a uniform tension
  proportional to the integrated squared gradient, giving the modal force
  f_mu = tau * lambda_mu * q_mu * sum_nu lambda_nu q_nu^2 (unit-norm modes);

* transverse/in-plane coupling (plates): third-order tensors H and C project
  the bilinear operator L(f, g) = f_xx g_yy + f_yy g_xx - 2 f_xy g_xy between
  the transverse basis Phi and the in-plane (Airy) basis Psi. For the simply
  supported plate Psi is the same sine-product family with biharmonic
  eigenvalues zeta^4 = lambda^2, and C follows from H by an index permutation.

Tensor integrals use analytic second derivatives of the sine modes and
trapezoidal quadrature (16 points per shortest half-wavelength by default,
8 minimum); for products of sines this is accurate to near machine precision.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .modes import ModeBasis, mode_second_derivatives, required_grid_points

DEFAULT_PPW = 16


@dataclass(frozen=True)
class CouplingTensors:
    """H[k, i, j]: Airy k against transverse i, j. C[s, p, n]: transverse s, p
    against Airy n. zeta4: in-plane biharmonic eigenvalues."""

    H: np.ndarray
    C: np.ndarray
    zeta4: np.ndarray

    def __post_init__(self):
        n_psi, n_phi, n_phi2 = self.H.shape
        if n_phi != n_phi2:
            raise ValueError("H must have shape [n_psi, n_phi, n_phi]")
        if self.C.shape != (n_phi, n_phi, n_psi):
            raise ValueError("C must have shape [n_phi, n_phi, n_psi]")
        if self.zeta4.shape != (n_psi,):
            raise ValueError("zeta4 must have one entry per Airy mode")
        if not np.all(self.zeta4 > 0):
            raise ValueError("zeta4 entries must be positive")
        if not (np.all(np.isfinite(self.H)) and np.all(np.isfinite(self.C))):
            raise ValueError("tensor entries must be finite")

    @property
    def n_phi(self) -> int:
        return self.H.shape[1]

    @property
    def n_psi(self) -> int:
        return self.H.shape[0]


@dataclass(frozen=True)
class GridField:
    """Scalar field sampled on a uniform 2-D grid, values indexed [y, x]."""

    values: np.ndarray
    dx: float
    dy: float

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2 or v.shape[0] < 3 or v.shape[1] < 3:
            raise ValueError("grid must be 2-D with at least 3 points per axis")


def vk_bilinear(fxx, fyy, fxy, gxx, gyy, gxy):
    """Pointwise f_xx*g_yy + f_yy*g_xx - 2*f_xy*g_xy."""
    return fxx * gyy + fyy * gxx - 2.0 * fxy * gxy


def vk_operator(f: GridField, g: GridField) -> GridField:
    """Bilinear operator of two grid fields via finite-difference Hessians."""
    if f.values.shape != g.values.shape or f.dx != g.dx or f.dy != g.dy:
        raise ValueError("mismatched grids")

    def hessian(v, dx, dy):
        vy, vx = np.gradient(v, dy, dx)
        vyy, _ = np.gradient(vy, dy, dx)
        vxy, vxx = np.gradient(vx, dy, dx)
        return vxx, vyy, vxy

    fh = hessian(np.asarray(f.values, dtype=float), f.dx, f.dy)
    gh = hessian(np.asarray(g.values, dtype=float), g.dx, g.dy)
    return GridField(vk_bilinear(*fh, *gh), f.dx, f.dy)


def _quadrature_grid(phi: ModeBasis, psi: ModeBasis, ppw: int):
    """Tensor-product Gauss-Legendre nodes and weights dense enough for both
    bases. The coupling integrands are products of three sines/cosines whose
    half-period frequencies break the periodicity that makes the trapezoidal
    rule spectrally accurate, so Gauss-Legendre is used instead; at the default
    density the entries are converged to near machine precision."""
    if phi.kind != "rect":
        raise ValueError("coupling tensors are defined on rectangular domains")
    if ppw < 8:
        raise ValueError("resolution below 8 points per shortest half-wavelength rejected")
    nx, ny = (max(a, b) for a, b in zip(required_grid_points(phi, ppw),
                                        required_grid_points(psi, ppw)))
    Lx, Ly = phi.lengths
    xn, xw = np.polynomial.legendre.leggauss(nx)
    yn, yw = np.polynomial.legendre.leggauss(ny)
    x = 0.5 * Lx * (xn + 1.0)
    y = 0.5 * Ly * (yn + 1.0)
    wx = 0.5 * Lx * xw
    wy = 0.5 * Ly * yw
    X, Y = np.meshgrid(x, y)
    return X, Y, np.outer(wy, wx)


def _hessian_stack(basis: ModeBasis, X, Y):
    n = basis.count
    fxx = np.empty((n,) + X.shape)
    fyy = np.empty_like(fxx)
    fxy = np.empty_like(fxx)
    for i in range(n):
        fxx[i], fyy[i], fxy[i] = mode_second_derivatives(basis, i, X, Y)
    return fxx, fyy, fxy


def _mode_values(basis: ModeBasis, X, Y):
    from .modes import _sinpi

    labs = np.asarray(basis.labels, dtype=float)
    Lx, Ly = basis.lengths
    vals = np.empty((basis.count,) + X.shape)
    for i in range(basis.count):
        vals[i] = _sinpi(labs[i, 0] * (X / Lx)) * _sinpi(labs[i, 1] * (Y / Ly))
    return vals * basis.shape_scale


def compute_H(phi: ModeBasis, psi: ModeBasis, ppw: int = DEFAULT_PPW) -> np.ndarray:
    """H[k, i, j] = integral Psi_k L(Phi_i, Phi_j) / (||Psi_k|| ||Phi_i|| ||Phi_j||).

    Symmetry in (i, j) holds bit-exactly: each unordered pair is integrated once
    and mirrored.
    """
    if not phi.same_domain(psi):
        raise ValueError("phi and psi must share the domain")
    # the quadrature grid must resolve whichever basis carries the highest index
    X, Y, W = _quadrature_grid(phi, psi, ppw)
    fxx, fyy, fxy = _hessian_stack(phi, X, Y)
    psi_w = (_mode_values(psi, X, Y) * W).reshape(psi.count, -1)

    n = phi.count
    H = np.empty((psi.count, n, n))
    for i in range(n):
        batch = vk_bilinear(
            fxx[i][None], fyy[i][None], fxy[i][None], fxx[i:], fyy[i:], fxy[i:]
        ).reshape(n - i, -1)
        block = psi_w @ batch.T  # [n_psi, n - i]
        H[:, i, i:] = block
        H[:, i:, i] = block
    denom = (
        np.sqrt(psi.norms_sq)[:, None, None]
        * np.sqrt(phi.norms_sq)[None, :, None]
        * np.sqrt(phi.norms_sq)[None, None, :]
    )
    return H / denom




def compute_C(phi: ModeBasis, psi: ModeBasis, ppw: int = DEFAULT_PPW) -> np.ndarray:
    """C[s, p, n] = integral Phi_s L(Phi_p, Psi_n) / (||Phi_s|| ||Phi_p|| ||Psi_n||)."""
    if not phi.same_domain(psi):
        raise ValueError("phi and psi must share the domain")
    X, Y, W = _quadrature_grid(phi, psi, ppw)
    pxx, pyy, pxy = _hessian_stack(phi, X, Y)
    sxx, syy, sxy = _hessian_stack(psi, X, Y)
    phi_w = (_mode_values(phi, X, Y) * W).reshape(phi.count, -1)

    C = np.empty((phi.count, phi.count, psi.count))
    for p in range(phi.count):
        batch = vk_bilinear(pxx[p][None], pyy[p][None], pxy[p][None], sxx, syy, sxy)
        C[:, p, :] = phi_w @ batch.reshape(psi.count, -1).T
    denom = (
        np.sqrt(phi.norms_sq)[:, None, None]
        * np.sqrt(phi.norms_sq)[None, :, None]
        * np.sqrt(psi.norms_sq)[None, None, :]
    )
    return C / denom


def derive_C_from_H(H: np.ndarray, phi: ModeBasis, psi: ModeBasis) -> np.ndarray:
    """C[s, p, n] = H[n, p, s] — valid only when Phi and Psi are the same basis
    (simply supported rectangle)."""
    same = (
        phi.same_domain(psi)
        and phi.labels == psi.labels
        and phi.unit_normalized == psi.unit_normalized
    )
    if not same:
        raise ValueError("index-permutation shortcut requires identical Phi and Psi bases")
    return np.ascontiguousarray(np.transpose(H, (2, 1, 0)))


def simply_supported_tensors(phi: ModeBasis, n_psi: int | None = None,
                             ppw: int = DEFAULT_PPW) -> CouplingTensors:
    """Coupling tensors of a simply supported plate: Psi = Phi sine family,
    zeta^4 = lambda^2, C from the permutation identity."""
    from .modes import airy_eigenvalues, rect_basis

    if phi.kind != "rect":
        raise ValueError("plate coupling requires a rectangle basis")
    n_psi = phi.count if n_psi is None else n_psi
    if n_psi == phi.count:
        psi = phi
    else:
        psi = rect_basis(phi.lengths[0], phi.lengths[1], n_psi, phi.unit_normalized)
    H = compute_H(phi, psi, ppw)
    if n_psi == phi.count:
        C = derive_C_from_H(H, phi, psi)
    else:
        C = compute_C(phi, psi, ppw)
    return CouplingTensors(H=H, C=C, zeta4=airy_eigenvalues(psi))


def sparsify(ct: CouplingTensors, rel_tol: float = 1e-12) -> CouplingTensors:
    """Zero entries below rel_tol times the largest magnitude (parity-rule zeros
    carry quadrature dust; exact zeros help nothing in dense storage but keep
    serialised files clean)."""

    def clean(t):
        cut = rel_tol * np.max(np.abs(t))
        out = t.copy()
        out[np.abs(out) < cut] = 0.0
        return out

    return CouplingTensors(H=clean(ct.H), C=clean(ct.C), zeta4=ct.zeta4)


# --- modal nonlinear forces -------------------------------------------------

def tension_nl_force(q: np.ndarray, basis: ModeBasis, tau: float) -> np.ndarray:
    """Tension-modulation force tau * lambda_mu * q_mu * sum_nu lambda_nu q_nu^2.

    The closed form assumes unit-normalised modes.
    """
    if not basis.unit_normalized:
        raise ValueError("tension_nl_force expects a unit-normalised basis")
    lam = basis.eigenvalues
    q = np.asarray(q, dtype=float)
    return tau * lam * q * float(lam @ (q * q))


def vk_nl_force(q: np.ndarray, ct: CouplingTensors, gain: float) -> np.ndarray:
    """Two-stage contraction of the plate coupling:

        eta_n = sum_{a,b} H[n,a,b] q_a q_b / zeta4_n
        out_s = gain * sum_{p,n} C[s,p,n] q_p eta_n

    gain is E / (2 rho) with rho the volumetric density. Cost O(n_psi n_phi^2)
    per call instead of the naive quadruple loop.
    """
    q = np.asarray(q, dtype=float)
    if q.shape != (ct.n_phi,):
        raise ValueError(f"q must have length {ct.n_phi}")
    eta = (ct.H.reshape(ct.n_psi, -1) @ np.outer(q, q).ravel()) / ct.zeta4
    return gain * (ct.C.reshape(ct.n_phi, -1) @ np.outer(q, eta).ravel())


class VkContraction:
    """Preshaped buffers for the per-step plate force in the hot loop."""

    def __init__(self, ct: CouplingTensors, gain: float):
        self.H2 = np.ascontiguousarray(ct.H.reshape(ct.n_psi, -1))
        self.C2 = np.ascontiguousarray(ct.C.reshape(ct.n_phi, -1))
        # eta_n depends on q through the (possibly asymmetric) quadratic form
        self.H_sym = ct.H + np.transpose(ct.H, (0, 2, 1))
        self.C = ct.C
        self.H = ct.H
        self.inv_zeta4 = 1.0 / ct.zeta4
        self.gain = gain
        self.n_phi = ct.n_phi
        self.n_psi = ct.n_psi
        self._qq = np.empty(ct.n_phi * ct.n_phi)
        self._qe = np.empty(ct.n_phi * ct.n_psi)

    def eta(self, q: np.ndarray) -> np.ndarray:
        np.outer(q, q, out=self._qq.reshape(self.n_phi, self.n_phi))
        return (self.H2 @ self._qq) * self.inv_zeta4

    def force_from_eta(self, q: np.ndarray, eta: np.ndarray) -> np.ndarray:
        np.outer(q, eta, out=self._qe.reshape(self.n_phi, self.n_psi))
        return self.gain * (self.C2 @ self._qe)

    def __call__(self, q: np.ndarray) -> np.ndarray:
        return self.force_from_eta(q, self.eta(q))


# --- serialisation ----------------------------------------------------------

_MAGIC = b"VKCT"
_VERSION = 1


def save_tensors(ct: CouplingTensors, path) -> None:
    """Flat binary layout: magic, endianness tag, version, dims, then zeta4, H,
    C as row-major little-endian doubles."""
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(b"<")
        f.write(struct.pack("<III", _VERSION, ct.n_psi, ct.n_phi))
        for arr in (ct.zeta4, ct.H, ct.C):
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_tensors(path) -> CouplingTensors:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _MAGIC:
            raise ValueError(f"not a coupling-tensor file (magic {magic!r})")
        endian = f.read(1)
        if endian not in (b"<", b">"):
            raise ValueError(f"unknown endianness tag {endian!r}")
        tag = endian.decode()
        version, n_psi, n_phi = struct.unpack(f"{tag}III", f.read(12))
        if version != _VERSION:
            raise ValueError(f"unsupported tensor file version {version}")
        dt = np.dtype(f"{tag}f8")
        zeta4 = np.frombuffer(f.read(8 * n_psi), dtype=dt).astype(float)
        H = np.frombuffer(f.read(8 * n_psi * n_phi * n_phi), dtype=dt).astype(float)
        C = np.frombuffer(f.read(8 * n_phi * n_phi * n_psi), dtype=dt).astype(float)
    return CouplingTensors(
        H=H.reshape(n_psi, n_phi, n_phi), C=C.reshape(n_phi, n_phi, n_psi), zeta4=zeta4
    )


def tensors_to_csv(ct: CouplingTensors, path) -> None:
    """Entry-per-row dump for inspection: tensor, i0, i1, i2, value."""
    with open(path, "w") as f:
        f.write("tensor,i0,i1,i2,value\n")
        for name, t in (("H", ct.H), ("C", ct.C)):
            for idx in np.ndindex(t.shape):
                f.write(f"{name},{idx[0]},{idx[1]},{idx[2]},{t[idx]!r}\n")
        for k, z in enumerate(ct.zeta4):
            f.write(f"zeta4,{k},0,0,{z!r}\n")
