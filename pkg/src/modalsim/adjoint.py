"""Hand-written reverse-mode derivatives for the fixed computation graph used
by the fitting routines.

The graph is small and static: coefficient maps (oscillator parameters to
scheme update vectors), the two-step time recurrence with an optional
nonlinear force hook, a point readout, the magnitude STFT, the spectral
losses, and the frequency-domain transfer-function magnitude. Each block gets
an explicit adjoint, verified term-by-term against central finite differences
in the test suite; no general-purpose autodiff is involved.

Conventions. The stepping recurrence is

    q^{n+1} = A q^n + B q^{n-1} + R u^n,     u^n = f_ext^n - nl(q^n),

with per-mode vectors A, B, R. Trajectories are stored as Q[t] = q^{t-1}
(rows q^{-1} .. q^N), output samples are y_n = w . q^{n+1}. The reverse sweep
propagates qbar^n = dL/dq^n backwards:

    qbar^n = w ybar_n + A qbar^{n+1} + B qbar^{n+2} - J_nl(q^n)^T (R qbar^{n+1})

and parameter gradients reduce to sums of stored products afterwards.
"""

from __future__ import annotations

import numpy as np
from scipy.signal import get_window

from .integrators import InstabilityError, OverdampedError


# --- coefficient maps with partials -------------------------------------------

def ftm_coeff_partials(omega2, gamma, T):
    """Impulse-invariant coefficients a1, a2, b1 and their partial derivatives
    with respect to omega^2 and gamma."""
    w2 = np.asarray(omega2, dtype=float)
    g = np.asarray(gamma, dtype=float)
    if np.any(w2 <= g**2):
        bad = np.flatnonzero(w2 <= g**2)
        raise OverdampedError(f"modes {bad.tolist()} are not underdamped")
    wt = np.sqrt(w2 - g**2)
    e1 = np.exp(-g * T)
    c = np.cos(wt * T)
    s = np.sin(wt * T)
    dwt_dw2 = 0.5 / wt
    dwt_dg = -g / wt

    a1 = -2.0 * e1 * c
    a2 = e1**2
    b1 = e1 * s / wt

    da1_dwt = 2.0 * e1 * T * s
    da1_dw2 = da1_dwt * dwt_dw2
    da1_dg = 2.0 * T * e1 * c + da1_dwt * dwt_dg
    da2_dg = -2.0 * T * e1**2
    db1_dwt = e1 * (T * c * wt - s) / wt**2
    db1_dw2 = db1_dwt * dwt_dw2
    db1_dg = -T * e1 * s / wt + db1_dwt * dwt_dg
    return {
        "a1": a1, "a2": a2, "b1": b1,
        "da1_dw2": da1_dw2, "da1_dg": da1_dg,
        "da2_dg": da2_dg,
        "db1_dw2": db1_dw2, "db1_dg": db1_dg,
    }


def ftm_update_partials(omega2, gamma, T):
    """Update vectors A = -a1, B = -a2, R = b1 and their partials."""
    p = ftm_coeff_partials(omega2, gamma, T)
    return {
        "A": -p["a1"], "B": -p["a2"], "R": p["b1"],
        "dA_dw2": -p["da1_dw2"], "dA_dg": -p["da1_dg"],
        "dB_dw2": np.zeros_like(p["a2"]), "dB_dg": -p["da2_dg"],
        "dR_dw2": p["db1_dw2"], "dR_dg": p["db1_dg"],
    }


def sv_update_partials(omega2, gamma, T):
    """Stoermer-Verlet update vectors A = g, B = p, R = r and their partials."""
    w2 = np.asarray(omega2, dtype=float)
    g = np.asarray(gamma, dtype=float)
    r = T**2 / (1.0 + g * T)
    dr_dg = -(T**3) / (1.0 + g * T) ** 2
    A = r * (2.0 / T**2 - w2)
    B = r * (g / T - 1.0 / T**2)
    return {
        "A": A, "B": B, "R": r * np.ones_like(w2),
        "dA_dw2": -r * np.ones_like(w2), "dA_dg": dr_dg * (2.0 / T**2 - w2),
        "dB_dw2": np.zeros_like(w2), "dB_dg": dr_dg * (g / T - 1.0 / T**2) + r / T,
        "dR_dw2": np.zeros_like(w2), "dR_dg": dr_dg * np.ones_like(w2),
    }


# --- differentiable nonlinear hooks --------------------------------------------

class KcHookDiff:
    """Tension-modulation force with cached per-step sums for the adjoint."""

    def __init__(self, lam, tau_hat):
        self.lam = np.asarray(lam, dtype=float)
        self.tau_hat = float(tau_hat)
        self.S = None

    def begin(self, n_steps):
        self.S = np.empty(n_steps)

    def force(self, n, q):
        s = float(self.lam @ (q * q))
        self.S[n] = s
        return self.tau_hat * self.lam * q * s

    def jt_vec(self, n, v, q):
        lamq = self.lam * q
        return self.tau_hat * (self.lam * v * self.S[n] + 2.0 * lamq * (lamq @ v))

    def finalize(self, V, Qmid, want):
        out = {}
        if "tau" in want:
            out["tau"] = -float(np.einsum("tm,m,tm,t->", V, self.lam, Qmid, self.S))
        return out


class VkHookDiff:
    """Plate coupling force with cached eta and eta-adjoints for the sweep."""

    def __init__(self, H, C, zeta4, gain, tied_C):
        self.H = np.asarray(H, dtype=float)
        self.C = np.asarray(C, dtype=float)
        self.zeta4 = np.asarray(zeta4, dtype=float)
        self.inv_z4 = 1.0 / self.zeta4
        self.gain = float(gain)
        self.tied_C = bool(tied_C)
        n_psi, n_phi, _ = self.H.shape
        self.n_psi, self.n_phi = n_psi, n_phi
        self.H2 = self.H.reshape(n_psi, -1)
        self.C2 = self.C.reshape(n_phi, -1)
        self.Hsym = self.H + np.transpose(self.H, (0, 2, 1))
        self.eta = None
        self.G = None

    def begin(self, n_steps):
        self.eta = np.empty((n_steps, self.n_psi))
        self.G = np.empty((n_steps, self.n_psi))

    def force(self, n, q):
        eta = (self.H2 @ np.outer(q, q).ravel()) * self.inv_z4
        self.eta[n] = eta
        return self.gain * (self.C2 @ np.outer(q, eta).ravel())

    def jt_vec(self, n, v, q):
        CV = np.einsum("spn,s->pn", self.C, v)
        g_eta = self.gain * (q @ CV)
        self.G[n] = g_eta
        term1 = self.gain * (CV @ self.eta[n])
        Hq = self.Hsym @ q  # [n_psi, n_phi]
        term2 = (g_eta * self.inv_z4) @ Hq
        return term1 + term2

    def finalize(self, V, Qmid, want):
        out = {}
        if "H" in want:
            dH = -np.einsum("tn,ta,tb->nab", self.G * self.inv_z4[None, :], Qmid, Qmid)
            if self.tied_C:
                dH -= self.gain * np.einsum("ts,tp,tn->nps", V, Qmid, self.eta)
            out["H"] = dH
        return out


# --- cached forward + reverse sweep ---------------------------------------------

def forward_cached(A, B, R, q0, q_prev, n_steps, force_signal=None, force_gains=None,
                   hook=None, check_every=256):
    """Forward stepping that stores everything the reverse sweep needs.

    Returns (Q, U): Q[t] = q^{t-1} with shape [n_steps+2, modes]; U holds the
    inputs u^n, or None when the system runs force- and hook-free.
    """
    m = len(q0)
    Q = np.empty((n_steps + 2, m))
    Q[0] = q_prev
    Q[1] = q0
    has_input = force_signal is not None or hook is not None
    U = np.empty((n_steps, m)) if has_input else None
    if hook is not None:
        hook.begin(n_steps)
    for n in range(n_steps):
        q = Q[n + 1]
        if has_input:
            if hook is not None:
                u = -hook.force(n, q)
                if force_signal is not None:
                    u += force_gains * force_signal[n]
            else:
                u = force_gains * force_signal[n]
            U[n] = u
            Q[n + 2] = A * q + B * Q[n] + R * u
        else:
            Q[n + 2] = A * q + B * Q[n]
        if n % check_every == check_every - 1 and not np.all(np.isfinite(Q[n + 2])):
            bad = np.where(np.isfinite(Q[n + 2]), np.abs(Q[n + 2]), np.inf)
            raise InstabilityError(step=n + 1, mode=int(np.argmax(bad)))
    if not np.all(np.isfinite(Q[-1])):
        bad = np.where(np.isfinite(Q[-1]), np.abs(Q[-1]), np.inf)
        raise InstabilityError(step=n_steps, mode=int(np.argmax(bad)))
    return Q, U


def bptt(A, B, R, Q, U, qbar_direct, hook=None, hook_param_names=()):
    """Reverse sweep through the stepping recurrence.

    qbar_direct[n] is the direct dL/dq^{n+1} coming from the readout. Returns
    per-mode gradients for A, B, R plus whatever the hook finalises (the input
    adjoints V[n] = R qbar^{n+1+1} are kept internal).
    """
    n_steps, m = qbar_direct.shape
    qbar = np.zeros((n_steps + 2, m))
    for t in range(n_steps + 1, 1, -1):
        acc = qbar_direct[t - 2].copy()
        if t + 1 <= n_steps + 1:
            nxt = qbar[t + 1]
            acc += A * nxt
            if hook is not None:
                acc -= hook.jt_vec(t - 1, R * nxt, Q[t])
        if t + 2 <= n_steps + 1:
            acc += B * qbar[t + 2]
        qbar[t] = acc

    out = {
        "dA": np.einsum("tm,tm->m", qbar[2:], Q[1:-1]),
        "dB": np.einsum("tm,tm->m", qbar[2:], Q[: -2]),
        "dR": (np.einsum("tm,tm->m", qbar[2:], U) if U is not None else np.zeros(m)),
    }
    if hook is not None:
        V = R[None, :] * qbar[2:]  # V[n] = dL/du^n
        if isinstance(hook, VkHookDiff):
            # the sweep visits steps 1..N-1 only (step 0 acts on the fixed
            # initial state), so its eta-adjoint slot is filled here
            hook.G[0] = hook.gain * (Q[1] @ np.einsum("spn,s->pn", hook.C, V[0]))
        out.update(hook.finalize(V, Q[1:-1], hook_param_names))
    return out


# --- STFT with adjoint -----------------------------------------------------------

def stft_cached(y, window_length, hop, window="hann"):
    """Magnitude STFT identical to analysis.stft, returning an adjoint cache."""
    n = len(y)
    if n < window_length:
        raise ValueError("signal shorter than the analysis window")
    pad = window_length // 2
    idx_map = np.pad(np.arange(n), pad, mode="reflect")
    xp = np.asarray(y, dtype=float)[idx_map]
    n_frames = (len(xp) - window_length) // hop + 1
    starts = np.arange(n_frames) * hop
    frame_idx = starts[:, None] + np.arange(window_length)[None, :]
    win = get_window(window, window_length, fftbins=True)
    Z = np.fft.rfft(xp[frame_idx] * win[None, :], axis=1)
    mag = np.abs(Z)
    cache = (Z, mag, win, idx_map, frame_idx, n, window_length)
    return mag, cache


def stft_backward(cache, mag_bar):
    """Pull dL/d|Z| back to the time signal through windowing, framing, and
    reflect padding."""
    Z, mag, win, idx_map, frame_idx, n, wl = cache
    safe = np.where(mag > 0.0, mag, 1.0)
    Gz = np.where(mag > 0.0, mag_bar * Z / safe, 0.0)
    Gpad = np.zeros((Z.shape[0], wl), dtype=complex)
    Gpad[:, : Z.shape[1]] = np.conj(Gz)
    seg = win[None, :] * np.real(np.fft.fft(Gpad, axis=1))
    xp_bar = np.zeros(len(idx_map))
    np.add.at(xp_bar, frame_idx, seg)
    y_bar = np.zeros(n)
    np.add.at(y_bar, idx_map, xp_bar)
    return y_bar


# --- frequency-domain transfer function with partials ------------------------------

def tf_magnitude_cached(a1, a2, b1, b2, weights, freqs, rate):
    """|H| on a frequency grid plus the complex per-mode pieces the adjoint needs."""
    f = np.asarray(freqs, dtype=float)
    z = np.exp(2j * np.pi * f / rate)[:, None]
    num = b1[None, :] * z + b2[None, :]
    den = z * z + a1[None, :] * z + a2[None, :]
    Gm = num / den
    H = np.sum(weights[None, :] * Gm, axis=1)
    mag = np.abs(H)
    return mag, (z, num, den, Gm, H, mag, np.asarray(weights, dtype=float))


def tf_magnitude_backward(cache, mag_bar):
    """Gradients of sum_f mag_bar_f |H_f| with respect to w, b1, b2, a1, a2."""
    z, num, den, Gm, H, mag, w = cache
    safe = np.where(mag > 0.0, mag, 1.0)
    hbar = np.where(mag > 0.0, mag_bar * H / safe, 0.0)[:, None]  # dL/dconj(H) style

    def project(dH_dtheta):
        return np.real(np.conj(hbar) * dH_dtheta).sum(axis=0)

    dw = project(Gm)
    db1 = project(w[None, :] * z / den)
    db2 = project(w[None, :] / den)
    da1 = project(-w[None, :] * num * z / den**2)
    da2 = project(-w[None, :] * num / den**2)
    return {"dw": dw, "db1": db1, "db2": db2, "da1": da1, "da2": da2}
