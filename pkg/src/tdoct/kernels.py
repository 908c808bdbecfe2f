"""Hot inner loops: FFT kinetic steps, closed-form 2x2 steps and the
forward/backward sweeps with immediate field feedback.

Every sweep kernel is written once and compiled by numba when available
(see :mod:`tdoct._jit`). A handful of primitives have a loop body for numba
and a vectorised body for the numpy fallback.

Field update used inside the sweeps
-----------------------------------
For step ``k`` the one-step map is ``U_k(e)`` (including the absorbing mask
for grid systems). The adjoint enters only through ``a_k = M chi_{k+1}``
(two-level) or ``a_k = K^dagger M chi_{k+1}`` (grid, ``K`` the half kinetic
step), and the coupling function is ``f(e) = 2 Re <a_k| U_k(e) psi_k>``. The
new field sample solves::

    e = (1 - lam) * e_ref - (lam / alpha) * C((e_ref + e) / 2)

with ``C(e) = -f'(e) / (2 dt)``, the discrete form of ``Im<chi|mu|psi>``.
The midpoint evaluation makes ``C`` equal to the secant slope of ``f`` up to
third-order terms, which keeps the per-step functional change at
``alpha*dt*(2/lam - 1)*(e - e_ref)**2``.
"""
import math

import numpy as np

from ._jit import USE_NUMBA, jit

NAN_CHECK_STRIDE = 100
# FFTs per time step: forward sweep 2 kinetic half steps, backward 3.
FFTS_FORWARD_STEP = 4
FFTS_BACKWARD_STEP = 6
PHASE_BLOCK = 64


def fft_plan(n):
    """Bit-reversal table and twiddles for a radix-2 transform of length n."""
    if n < 2 or n & (n - 1):
        raise ValueError(f"FFT length must be a power of two, got {n}")
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    tw = np.exp(-2j * np.pi * np.arange(n // 2) / n)
    return rev, tw, np.conj(tw)


if USE_NUMBA:

    @jit
    def _fft_into(x, rev, tw, out):
        n = x.shape[0]
        for i in range(n):
            out[rev[i]] = x[i]
        size = 2
        while size <= n:
            half = size // 2
            step = n // size
            for start in range(0, n, size):
                k = 0
                for j in range(start, start + half):
                    t = tw[k] * out[j + half]
                    u = out[j]
                    out[j] = u + t
                    out[j + half] = u - t
                    k += step
            size *= 2

    @jit
    def kinetic_apply(psi, phase, rev, tw, twc, buf, out):
        """out = ifft(phase * fft(psi)); psi and out may not alias buf."""
        n = psi.shape[0]
        _fft_into(psi, rev, tw, buf)
        for i in range(n):
            buf[i] *= phase[i]
        _fft_into(buf, rev, twc, out)
        inv = 1.0 / n
        for i in range(n):
            out[i] *= inv

    @jit
    def grid_coupling(c, x, e, dt):
        # Im sum_i x_i c_i exp(i x_i e dt); the phase runs as a product along
        # the uniform grid and is reseeded exactly every PHASE_BLOCK points
        th = e * dt
        r = complex(math.cos((x[1] - x[0]) * th), math.sin((x[1] - x[0]) * th))
        s = 0.0
        z = 1.0 + 0.0j
        for i in range(c.shape[0]):
            if i % PHASE_BLOCK == 0:
                z = complex(math.cos(x[i] * th), math.sin(x[i] * th))
            else:
                z = z * r
            s += x[i] * (c[i] * z).imag
        return s

    @jit
    def potential_apply(b, vphase, x, e, dt, out):
        th = e * dt
        r = complex(math.cos((x[1] - x[0]) * th), math.sin((x[1] - x[0]) * th))
        z = 1.0 + 0.0j
        for i in range(b.shape[0]):
            if i % PHASE_BLOCK == 0:
                z = complex(math.cos(x[i] * th), math.sin(x[i] * th))
            else:
                z = z * r
            out[i] = vphase[i] * z * b[i]

    @jit
    def coupling_weights(a, vphase, b, dx, out):
        for i in range(a.shape[0]):
            out[i] = a[i].conjugate() * vphase[i] * b[i] * dx

else:

    def kinetic_apply(psi, phase, rev, tw, twc, buf, out):
        """out = ifft(phase * fft(psi))."""
        out[:] = np.fft.ifft(phase * np.fft.fft(psi))

    def grid_coupling(c, x, e, dt):
        th = x * (e * dt)
        return float(np.sum(x * (c.real * np.sin(th) + c.imag * np.cos(th))))

    def potential_apply(b, vphase, x, e, dt, out):
        np.multiply(vphase * np.exp(1j * x * (e * dt)), b, out=out)

    def coupling_weights(a, vphase, b, dx, out):
        np.multiply(np.conj(a) * vphase, b * dx, out=out)


# ---------------------------------------------------------------------------
# two-level system
# ---------------------------------------------------------------------------


@jit
def _tls_parts(e0, e1, p, e, dt):
    h0 = 0.5 * (e0 + e1)
    d = 0.5 * (e1 - e0)
    w = math.sqrt(d * d + p * p * e * e)
    wt = w * dt
    if wt < 1e-4:
        s = dt * (1.0 - wt * wt / 6.0)
        q = -dt * dt * dt / 3.0 * (1.0 - wt * wt / 10.0)
    else:
        s = math.sin(wt) / w
        q = (dt * math.cos(wt) - s) / (w * w)
    ph = complex(math.cos(h0 * dt), -math.sin(h0 * dt))
    return ph, math.cos(wt), s, q, d


@jit
def tls_apply(e0, e1, p, e, dt, c0, c1):
    """exp(-i H dt) (c0, c1) with H = [[e0, -p e], [-p e, e1]]."""
    ph, cw, s, q, d = _tls_parts(e0, e1, p, e, dt)
    u00 = ph * complex(cw, s * d)
    u11 = ph * complex(cw, -s * d)
    u01 = ph * complex(0.0, s * p * e)
    return u00 * c0 + u01 * c1, u01 * c0 + u11 * c1


@jit
def tls_apply_adjoint(e0, e1, p, e, dt, c0, c1):
    ph, cw, s, q, d = _tls_parts(e0, e1, p, e, dt)
    u00 = (ph * complex(cw, s * d)).conjugate()
    u11 = (ph * complex(cw, -s * d)).conjugate()
    u01 = (ph * complex(0.0, s * p * e)).conjugate()
    return u00 * c0 + u01 * c1, u01 * c0 + u11 * c1


@jit
def tls_coupling(e0, e1, p, e, dt, a0, a1, c0, c1):
    """-Re<a| dU/de |c> / dt, the discrete Im<chi|mu|psi> of one step."""
    ph, cw, s, q, d = _tls_parts(e0, e1, p, e, dt)
    ds = q * p * p * e
    dcos = -dt * s * p * p * e
    d00 = ph * complex(dcos, d * ds)
    d11 = ph * complex(dcos, -d * ds)
    d01 = ph * complex(0.0, p * (s + e * ds))
    v0 = d00 * c0 + d01 * c1
    v1 = d01 * c0 + d11 * c1
    return -(a0.conjugate() * v0 + a1.conjugate() * v1).real / dt


@jit
def tls_forward(psi0, a_traj, eps_ref, e0, e1, p, dt, alpha, lam, n_corr,
                psi_traj, eps_out, coup_out):
    """Forward sweep; returns the first step with a non-finite value or -1."""
    n_steps = eps_ref.shape[0]
    c0 = psi0[0]
    c1 = psi0[1]
    psi_traj[0, 0] = c0
    psi_traj[0, 1] = c1
    for k in range(n_steps):
        a0 = a_traj[k, 0]
        a1 = a_traj[k, 1]
        er = eps_ref[k]
        g = tls_coupling(e0, e1, p, er, dt, a0, a1, c0, c1)
        e = (1.0 - lam) * er - lam / alpha * g
        for _ in range(n_corr):
            g = tls_coupling(e0, e1, p, 0.5 * (er + e), dt, a0, a1, c0, c1)
            e_new = (1.0 - lam) * er - lam / alpha * g
            done = abs(e_new - e) <= 1e-16 * (1.0 + abs(e))
            e = e_new
            if done:
                break
        c0, c1 = tls_apply(e0, e1, p, e, dt, c0, c1)
        psi_traj[k + 1, 0] = c0
        psi_traj[k + 1, 1] = c1
        eps_out[k] = e
        coup_out[k] = g
        if k % NAN_CHECK_STRIDE == 0:
            if not (math.isfinite(e) and math.isfinite(c0.real)
                    and math.isfinite(c0.imag)):
                return k
    return -1


@jit
def tls_backward(chi_end, psi_traj, src, eps_old, e0, e1, p, dt, alpha, lam,
                 n_corr, a_out, eps_out, coup_out, chi_out):
    """Backward sweep from chi at T; chi(0) is written into chi_out."""
    n_steps = eps_old.shape[0]
    x0 = chi_end[0]
    x1 = chi_end[1]
    for k in range(n_steps - 1, -1, -1):
        a_out[k, 0] = x0
        a_out[k, 1] = x1
        c0 = psi_traj[k, 0]
        c1 = psi_traj[k, 1]
        er = eps_old[k]
        g = tls_coupling(e0, e1, p, er, dt, x0, x1, c0, c1)
        e = (1.0 - lam) * er - lam / alpha * g
        for _ in range(n_corr):
            g = tls_coupling(e0, e1, p, 0.5 * (er + e), dt, x0, x1, c0, c1)
            e_new = (1.0 - lam) * er - lam / alpha * g
            done = abs(e_new - e) <= 1e-16 * (1.0 + abs(e))
            e = e_new
            if done:
                break
        x0, x1 = tls_apply_adjoint(e0, e1, p, e, dt, x0, x1)
        x0 += src[k, 0]
        x1 += src[k, 1]
        eps_out[k] = e
        coup_out[k] = g
        if k % NAN_CHECK_STRIDE == 0:
            if not (math.isfinite(e) and math.isfinite(x0.real)
                    and math.isfinite(x0.imag)):
                return k
    chi_out[0] = x0
    chi_out[1] = x1
    return -1


@jit
def tls_propagate(psi0, eps_steps, e0, e1, p, dt, stride, out):
    c0 = psi0[0]
    c1 = psi0[1]
    out[0, 0] = c0
    out[0, 1] = c1
    j = 1
    for k in range(eps_steps.shape[0]):
        c0, c1 = tls_apply(e0, e1, p, eps_steps[k], dt, c0, c1)
        if (k + 1) % stride == 0:
            out[j, 0] = c0
            out[j, 1] = c1
            j += 1
        if k % NAN_CHECK_STRIDE == 0:
            if not (math.isfinite(c0.real) and math.isfinite(c0.imag)):
                return k
    return -1


# ---------------------------------------------------------------------------
# grid system (split operator)
# ---------------------------------------------------------------------------


@jit
def grid_forward(psi0, a_traj, eps_ref, psi_traj, eps_out, coup_out,
                 x, vphase, kphase, mask, use_mask, dx, dt, alpha, lam, n_corr,
                 rev, tw, twc):
    n = psi0.shape[0]
    n_steps = eps_ref.shape[0]
    buf = np.empty(n, dtype=np.complex128)
    b = np.empty(n, dtype=np.complex128)
    c = np.empty(n, dtype=np.complex128)
    tmp = np.empty(n, dtype=np.complex128)
    psi = psi0.copy()
    psi_traj[0] = psi
    for k in range(n_steps):
        kinetic_apply(psi, kphase, rev, tw, twc, buf, b)
        coupling_weights(a_traj[k], vphase, b, dx, c)
        er = eps_ref[k]
        g = grid_coupling(c, x, er, dt)
        e = (1.0 - lam) * er - lam / alpha * g
        for _ in range(n_corr):
            g = grid_coupling(c, x, 0.5 * (er + e), dt)
            e_new = (1.0 - lam) * er - lam / alpha * g
            done = abs(e_new - e) <= 1e-16 * (1.0 + abs(e))
            e = e_new
            if done:
                break
        potential_apply(b, vphase, x, e, dt, tmp)
        kinetic_apply(tmp, kphase, rev, tw, twc, buf, psi)
        if use_mask:
            psi *= mask
        psi_traj[k + 1] = psi
        eps_out[k] = e
        coup_out[k] = g
        if k % NAN_CHECK_STRIDE == 0:
            if not (math.isfinite(e) and np.isfinite(psi[0].real)
                    and np.isfinite(np.sum(np.abs(psi)))):
                return k
    return -1


@jit
def grid_backward(chi_end, psi_traj, src, eps_old, a_out, eps_out,
                  coup_out, chi_out, x, vphase, kphase, mask, use_mask, dx, dt,
                  alpha, lam, n_corr, rev, tw, twc):
    """Backward sweep from chi at the segment end; chi at its start goes to chi_out."""
    n = chi_end.shape[0]
    n_steps = eps_old.shape[0]
    buf = np.empty(n, dtype=np.complex128)
    a = np.empty(n, dtype=np.complex128)
    b = np.empty(n, dtype=np.complex128)
    c = np.empty(n, dtype=np.complex128)
    tmp = np.empty(n, dtype=np.complex128)
    vconj = np.conj(vphase)
    kconj = np.conj(kphase)
    chi = chi_end.copy()
    for k in range(n_steps - 1, -1, -1):
        if use_mask:
            chi *= mask
        kinetic_apply(chi, kconj, rev, tw, twc, buf, a)
        a_out[k] = a
        kinetic_apply(psi_traj[k], kphase, rev, tw, twc, buf, b)
        coupling_weights(a, vphase, b, dx, c)
        er = eps_old[k]
        g = grid_coupling(c, x, er, dt)
        e = (1.0 - lam) * er - lam / alpha * g
        for _ in range(n_corr):
            g = grid_coupling(c, x, 0.5 * (er + e), dt)
            e_new = (1.0 - lam) * er - lam / alpha * g
            done = abs(e_new - e) <= 1e-16 * (1.0 + abs(e))
            e = e_new
            if done:
                break
        potential_apply(a, vconj, x, -e, dt, tmp)
        kinetic_apply(tmp, kconj, rev, tw, twc, buf, chi)
        chi += src[k]
        eps_out[k] = e
        coup_out[k] = g
        if k % NAN_CHECK_STRIDE == 0:
            if not (math.isfinite(e) and np.isfinite(np.sum(np.abs(chi)))):
                return k
    chi_out[:] = chi
    return -1


@jit
def grid_propagate(psi0, eps_steps, x, vphase, kphase, mask, use_mask, dt,
                   stride, out, rev, tw, twc):
    n = psi0.shape[0]
    buf = np.empty(n, dtype=np.complex128)
    b = np.empty(n, dtype=np.complex128)
    tmp = np.empty(n, dtype=np.complex128)
    psi = psi0.copy()
    out[0] = psi
    j = 1
    for k in range(eps_steps.shape[0]):
        kinetic_apply(psi, kphase, rev, tw, twc, buf, b)
        potential_apply(b, vphase, x, eps_steps[k], dt, tmp)
        kinetic_apply(tmp, kphase, rev, tw, twc, buf, psi)
        if use_mask:
            psi *= mask
        if (k + 1) % stride == 0:
            out[j] = psi
            j += 1
        if k % NAN_CHECK_STRIDE == 0:
            if not np.isfinite(np.sum(np.abs(psi))):
                return k
    return -1
