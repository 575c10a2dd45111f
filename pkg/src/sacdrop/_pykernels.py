"""Pure numpy implementations of the hot kernels (reference / fallback)."""
import numpy as np

SQRT2 = np.sqrt(2.0)


def droplet_profile(px, py, w, zx, zy, rho, eps, hcut, u_out):
    """Fill ``u_out`` with the cut-off tanh droplet profile on the given nodes.

    Returns ``(sum w*u, sum w*du/dr)`` over the nodes.
    """
    r = np.hypot(px - zx, py - zy) - rho
    ar = np.abs(r)
    sgn = np.where(r >= 0.0, 1.0, -1.0)
    th = np.tanh(r / (eps * SQRT2))
    dU = (1.0 - th * th) / (eps * SQRT2)
    half = 0.5 * hcut
    t = np.clip((ar - half) / half, 0.0, 1.0)
    chi = 1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
    dchi = -sgn * 30.0 * t * t * (1.0 - t) ** 2 / half
    u = chi * th + (1.0 - chi) * sgn
    dudr = dchi * (th - sgn) + chi * dU
    u_out[:] = u
    return float(np.dot(w, u)), float(np.dot(w, dudr))


def imex_rhs(w, weights, dt, noise, out):
    """out = weights * (w + dt*(-f(w) + mean_w f(w)) + noise) with f(u) = u^3 - u."""
    f = w * w * w - w
    fbar = np.dot(weights, f) / weights.sum()
    np.multiply(weights, w + dt * (fbar - f) + noise, out=out)
    return out


def potential_sum(w, weights):
    """sum weights * F(w) with F(u) = (1 - u^2)^2 / 4."""
    s = 1.0 - w * w
    return float(np.dot(weights, 0.25 * s * s))
