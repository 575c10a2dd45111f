# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels.

Each function has the same signature and semantics as its counterpart in
``sacdrop._pykernels``; results agree to round-off (summation order differs).
"""
from libc.math cimport fabs, sqrt, tanh


cdef double SQRT2 = sqrt(2.0)


def droplet_profile(const double[:] px, const double[:] py, const double[:] w, double zx, double zy,
                    double rho, double eps, double hcut, double[:] u_out):
    """Fill ``u_out`` with the cut-off tanh droplet profile; return ``(sum w*u, sum w*du/dr)``."""
    cdef Py_ssize_t i, n = px.shape[0]
    cdef double r, ar, sgn, th, dU, t, chi, dchi, u, dudr, dx, dy
    cdef double half = 0.5 * hcut
    cdef double scale = 1.0 / (eps * SQRT2)
    cdef double su = 0.0, sd = 0.0
    with nogil:
        for i in range(n):
            dx = px[i] - zx
            dy = py[i] - zy
            r = sqrt(dx * dx + dy * dy) - rho
            ar = fabs(r)
            sgn = 1.0 if r >= 0.0 else -1.0
            th = tanh(r * scale)
            dU = (1.0 - th * th) * scale
            t = (ar - half) / half
            if t < 0.0:
                t = 0.0
            elif t > 1.0:
                t = 1.0
            chi = 1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
            dchi = -sgn * 30.0 * t * t * (1.0 - t) * (1.0 - t) / half
            u = chi * th + (1.0 - chi) * sgn
            dudr = dchi * (th - sgn) + chi * dU
            u_out[i] = u
            su += w[i] * u
            sd += w[i] * dudr
    return su, sd


def imex_rhs(const double[:] w, const double[:] weights, double dt, const double[:] noise, double[:] out):
    """out = weights * (w + dt*(-f(w) + mean_w f(w)) + noise) with f(u) = u^3 - u."""
    cdef Py_ssize_t i, n = w.shape[0]
    cdef double fsum = 0.0, wsum = 0.0, fbar, x
    with nogil:
        for i in range(n):
            x = w[i]
            fsum += weights[i] * (x * x * x - x)
            wsum += weights[i]
        fbar = fsum / wsum
        for i in range(n):
            x = w[i]
            out[i] = weights[i] * (x + dt * (fbar - (x * x * x - x)) + noise[i])
    return out.base if out.base is not None else out


def potential_sum(const double[:] w, const double[:] weights):
    """sum weights * F(w) with F(u) = (1 - u^2)^2 / 4."""
    cdef Py_ssize_t i, n = w.shape[0]
    cdef double s, acc = 0.0
    with nogil:
        for i in range(n):
            s = 1.0 - w[i] * w[i]
            acc += weights[i] * 0.25 * s * s
    return acc
