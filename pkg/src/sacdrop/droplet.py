"""Droplet states on the manifold of droplets and their xi-derivatives.

The state is the leading-order profile: a tanh layer across a circle of radius
``rho`` centred at the boundary point ``z(xi)``, blended to ``sign(r)`` by a
quintic cut-off of half-width ``h_cut = 2 eps (ln eps)^2``.  ``rho`` is fixed by
the mass constraint ``int u = |Omega_delta| - pi``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import CalibrationFailure, ParamOutOfRange, StencilFailure
from .geometry import InterfaceGeometry

SQRT2 = np.sqrt(2.0)

# f(u) = u^3 - u, F(u) = (1 - u^2)^2 / 4
F_PRIME_AT_ONE = 2.0
SQRT_F_INTEGRAL = 2.0 / 3.0
# int U'(R)^2 dR for U = tanh(R / sqrt 2)
SURFACE_TENSION = 2.0 * SQRT2 / 3.0


def f(u):
    return u * u * u - u


def f_prime(u):
    return 3.0 * u * u - 1.0


def potential(u):
    s = 1.0 - u * u
    return 0.25 * s * s


class HeteroclinicProfile:
    """U(R) = tanh(R / sqrt 2), the standing wave with U'' = f(U), U(+-inf) = +-1."""

    def U(self, R):
        return np.tanh(np.asarray(R, dtype=float) / SQRT2)

    def dU(self, R):
        t = self.U(R)
        return (1.0 - t * t) / SQRT2

    def ddU(self, R):
        t = self.U(R)
        return -t * (1.0 - t * t)

    def residual(self, R):
        return self.ddU(R) - f(self.U(R))


def heteroclinic_profile():
    return HeteroclinicProfile()


def c1_star(domain_area):
    """C_1^* = 8 pi f'(1) / (3 sqrt 6 |Omega| int_{-1}^{1} sqrt F)."""
    return 8.0 * np.pi * F_PRIME_AT_ONE / (3.0 * np.sqrt(6.0) * domain_area * SQRT_F_INTEGRAL)


def eps_upper_bound(delta, domain_area):
    return 0.5 * c1_star(domain_area) * delta * delta


def check_upbound(eps, delta, domain_area):
    bound = eps_upper_bound(delta, domain_area)
    if not eps <= bound:
        raise ParamOutOfRange(f"eps={eps} violates eps <= C1*/2 delta^2 = {bound:.6g}")


def cutoff_width(eps):
    return 2.0 * eps * np.log(eps) ** 2


def droplet_reach(eps):
    """Distance from ``z(xi)`` that contains the droplet layer and its cut-off."""
    return 1.25 + cutoff_width(eps)


@dataclass
class DropletState:
    xi: float
    eps: float
    rho: float
    u: np.ndarray
    h_cut: float
    geometry: InterfaceGeometry
    du: np.ndarray = None
    d2u: np.ndarray = None
    d3u: np.ndarray = None
    h_xi: float = None
    fd_error: dict = field(default_factory=dict)
    grid: object = field(default=None, repr=False)
    bulk_shift: float = 0.0


class DropletBuilder:
    """Builds calibrated droplet states on one grid for one eps.

    Only nodes within ``rho + h_cut`` (plus a margin) of ``z(xi)`` are evaluated;
    everything further out is the +1 phase.
    """

    def __init__(self, grid, eps, check_bound=True, h_xi=None, max_iter=50, bulk_correction=False):
        if eps <= 0:
            raise ParamOutOfRange("eps must be positive")
        self.grid = grid
        self.curve = grid.curve
        self.eps = float(eps)
        if check_bound:
            check_upbound(eps, self.curve.delta, self.curve.area * self.curve.delta**2)
        self.h_cut = cutoff_width(eps)
        self.h_xi = float(h_xi) if h_xi is not None else eps / 8.0
        self.total = float(grid.weights.sum())
        self.target = self.total - np.pi
        self.max_iter = max_iter
        self.bulk_correction = bool(bulk_correction)

    # -- single profile -----------------------------------------------------------------
    def _active(self, center, reach):
        g = self.grid
        d2 = (g.x - center[0]) ** 2 + (g.y - center[1]) ** 2
        return np.nonzero(d2 < reach * reach)[0]

    def bulk_shift(self, rho):
        """Uniform outer correction ``-eps sigma_U / (4 rho)`` (zero unless enabled)."""
        if not self.bulk_correction:
            return 0.0
        return -self.eps * SURFACE_TENSION / (4.0 * rho)

    def _calibrate(self, center, idx, rho0):
        g = self.grid
        px, py, w = g.x[idx], g.y[idx], g.weights[idx]
        outside = self.total - w.sum()
        buf = np.empty(idx.size)
        rho = rho0
        polish = 0
        for _ in range(self.max_iter):
            m, dm_dr = kernels.droplet_profile(px, py, w, center[0], center[1], rho, self.eps, self.h_cut, buf)
            shift = self.bulk_shift(rho)
            resid = outside + m + shift * self.total - self.target
            # d mass / d rho = -(sum w du/dr + total * shift / rho)
            step = resid / (dm_dr + shift / rho * self.total)
            rho = rho + step
            if not np.isfinite(rho):
                break
            if abs(step) < 1e-12:
                # quadratic convergence: one more step reaches round-off
                polish += 1
                if polish == 2:
                    break
        else:
            raise CalibrationFailure(f"radius calibration did not converge (last step {step:.3g})")
        if not 0.5 <= rho <= 1.5:
            raise CalibrationFailure(f"calibrated radius {rho:.6g} outside [0.5, 1.5]")
        kernels.droplet_profile(px, py, w, center[0], center[1], rho, self.eps, self.h_cut, buf)
        shift = self.bulk_shift(rho)
        if shift:
            buf += shift
        return rho, buf

    def profile(self, xi, rho0=None, idx=None):
        """Calibrated ``(rho, u on active nodes, active indices, far-field value)`` at ``xi``.

        The Newton iteration always starts from the same guess so that a build
        does not depend on earlier calls.
        """
        center = self.curve.point(float(xi))
        if idx is None:
            idx = self._active(center, 1.6 + self.h_cut + 8 * self.h_xi)
        rho, vals = self._calibrate(center, idx, 1.0 if rho0 is None else rho0)
        return rho, vals, idx, 1.0 + self.bulk_shift(rho)

    def full(self, idx, vals, fill=1.0):
        out = np.full(self.grid.n_nodes, fill)
        out[idx] = vals
        return out

    def build(self, xi, derivatives=True, third=True):
        xi = float(self.curve.wrap(xi))
        rho, vals, idx, far = self.profile(xi)
        state = DropletState(
            xi=xi,
            eps=self.eps,
            rho=rho,
            u=self.full(idx, vals, far),
            h_cut=self.h_cut,
            geometry=InterfaceGeometry.at(self.curve, xi, rho),
            grid=self.grid,
            bulk_shift=far - 1.0,
        )
        if derivatives:
            self._derivatives(state, idx, vals, far, third)
        return state

    def _derivatives(self, state, idx, u0, far0, third):
        h = self.h_xi
        vals = {0: u0}
        fars = {0: far0}
        try:
            for j in (-2, -1, 1, 2):
                _, vals[j], _, fars[j] = self.profile(state.xi + j * h, rho0=state.rho, idx=idx)
        except CalibrationFailure as exc:
            raise StencilFailure(f"stencil build failed at xi={state.xi}: {exc}") from exc

        def stencils(v):
            m2, m1, c0, p1, p2 = v[-2], v[-1], v[0], v[1], v[2]
            return (
                (m2 - 8 * m1 + 8 * p1 - p2) / (12 * h),
                (-m2 + 16 * m1 - 30 * c0 + 16 * p1 - p2) / (12 * h * h),
                (-m2 + 2 * m1 - 2 * p1 + p2) / (2 * h**3),
                (p1 - m1) / (2 * h),
                (p1 - 2 * c0 + m1) / (h * h),
            )

        d1, d2, d3, d1_lo, d2_lo = stencils(vals)
        f1, f2, f3, _, _ = stencils(fars)
        w = self.grid.weights[idx]
        # Richardson-style estimate: distance between the 4th- and 2nd-order stencils
        nd1 = np.sqrt(np.dot(w, d1 * d1))
        nd2 = np.sqrt(np.dot(w, d2 * d2))
        state.fd_error = {
            "du": float(np.sqrt(np.dot(w, (d1 - d1_lo) ** 2)) / max(nd1, 1e-300)),
            "d2u": float(np.sqrt(np.dot(w, (d2 - d2_lo) ** 2)) / max(nd2, 1e-300)),
        }
        state.du = self.full(idx, d1, f1)
        state.d2u = self.full(idx, d2, f2)
        if third:
            state.d3u = self.full(idx, d3, f3)
        state.h_xi = h


def build_droplet(grid, xi, eps, derivatives=True, check_bound=True):
    """Calibrated droplet state at arclength ``xi`` with its xi-derivatives."""
    return DropletBuilder(grid, eps, check_bound=check_bound).build(xi, derivatives=derivatives)


def xi_derivatives(grid, xi, eps, h_xi=None):
    """(du, d2u, d3u) by centred differences of calibrated builds at xi + j h_xi."""
    st = DropletBuilder(grid, eps, h_xi=h_xi).build(xi)
    return st.du, st.d2u, st.d3u


def velocity_c(curve, xi, eps=None, delta=None, g0=1.0):
    """Leading-order deterministic velocity c(xi, eps) of the droplet.

    Positive values move the droplet towards increasing arclength.  The droplet
    travels up the curvature gradient, i.e. towards points of maximal boundary
    curvature: ``c = (4 / (3 pi)) g0 dK/dxi`` with ``K > 0`` on convex boundaries
    (``dK/dxi`` is taken in the rescaled arclength, so ``c = O(delta^2)``).
    ``eps`` and ``delta`` are accepted for signature compatibility; the
    higher-order corrections that would use them are not modelled.
    """
    _, kp = curve.curvature(xi)
    return 4.0 / (3.0 * np.pi) * g0 * kp
