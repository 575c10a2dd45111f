"""Reduction of the SPDE to a scalar SDE for the droplet position.

A field ``w`` near the manifold of droplet states is written as
``w = u(xi) + v`` with ``(v, du) = 0``.  Ito's formula applied to that
constraint gives ``d xi = b dt + (sigma, dW)`` with

* ``A = ||du||^2 - (v, d2u)`` and ``sigma = du / A``;
* ``b = A^-1 [ (Lu_eps, du) - (L v, du) - (N, du) ]
  + A^-1 [ (v, d3u)/2 - 3/2 (d2u, du) ] (Q sigma, sigma) + A^-1 (sigma, Q d2u)``.

The five pieces of ``b`` are stored separately in :class:`ReducedCoeffs`.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .droplet import velocity_c
from .errors import OutsideNeighborhood, ProjectionDiverged, SingularA
from .noise import apply_Q, quadratic_form
from .spde import allen_cahn_operator, nonlinear_terms


@dataclass
class Decomposition:
    """``w = u(xi) + v`` with ``v`` orthogonal to ``du``."""

    xi: float
    drop: object
    v: np.ndarray
    ortho_residual: float
    iterations: int = 0

    @property
    def grid(self):
        return self.drop.grid

    @property
    def v_norm(self):
        return self.grid.norm(self.v)

    def v_h1eps(self):
        return self.grid.h1eps_norm(self.v, self.drop.eps)


@dataclass
class ReducedCoeffs:
    A: float
    b: float
    sigma: np.ndarray = field(repr=False)
    c_term: float
    Lv_term: float
    N_term: float
    B_term: float
    Qcross_term: float
    dA_drift: float
    q_sigma: float

    def as_row(self):
        return {
            "A": self.A,
            "b": self.b,
            "c_term": self.c_term,
            "Lv_term": self.Lv_term,
            "N_term": self.N_term,
            "B_term": self.B_term,
            "Qcross_term": self.Qcross_term,
            "dA_drift": self.dA_drift,
            "q_sigma": self.q_sigma,
        }


# -- projection ------------------------------------------------------------------------
class Projector:
    """Projects fields onto the droplet manifold of a :class:`DropletBuilder`.

    Parameters
    ----------
    builder : DropletBuilder
    n_search : int
        Number of equispaced xi used by the coarse search.
    radius : float or None
        Largest admissible ``min_xi ||w - u(xi)||``; None disables the check.
    max_iter : int
        Newton iterations before restarting from the coarse search.
    max_step : float
        Safeguard on a single Newton update (in units of arclength).
    """

    def __init__(self, builder, n_search=64, radius=None, max_iter=30, max_step=0.5, tol=1e-10):
        self.builder = builder
        self.grid = builder.grid
        self.curve = builder.curve
        self.n_search = int(n_search)
        self.radius = radius
        self.max_iter = int(max_iter)
        self.max_step = float(max_step)
        self.tol = float(tol)

    def search(self, w):
        """Coarse search: xi among ``n_search`` equispaced points minimising ``||w - u(xi)||``."""
        g = self.grid
        xs = self.curve.length * np.arange(self.n_search) / self.n_search
        dist = np.empty(xs.size)
        for i, x in enumerate(xs):
            u = self.builder.build(x, derivatives=False).u
            dist[i] = g.norm(w - u)
        k = int(np.argmin(dist))
        if self.radius is not None and dist[k] > self.radius:
            raise OutsideNeighborhood(
                f"min ||w - u(xi)|| = {dist[k]:.4g} exceeds the neighbourhood radius {self.radius:.4g}"
            )
        return float(xs[k]), float(dist[k])

    def _newton(self, w, xi):
        """Safeguarded Newton iteration for ``g(xi) = (w - u(xi), du(xi)) = 0``.

        ``g > 0`` means the distance to the manifold decreases towards larger
        xi, so the iterates keep a bracket ``lo < root < hi`` once ``g`` has
        changed sign and fall back to bisection when a Newton step leaves it.
        xi is kept unwrapped inside the loop.
        """
        g = self.grid
        L = self.curve.length
        lo = hi = None
        for it in range(1, self.max_iter + 1):
            drop = self.builder.build(xi)
            v = w - drop.u
            gval = g.inner(v, drop.du)
            A = g.inner(drop.du, drop.du) - g.inner(v, drop.d2u)
            scale = g.norm(v) * np.sqrt(g.inner(drop.du, drop.du))
            if abs(gval) <= self.tol * max(scale, 1e-300):
                return Decomposition(xi=drop.xi, drop=drop, v=v, ortho_residual=gval, iterations=it)
            if gval > 0:
                lo = xi
            else:
                hi = xi
            step = gval / A if A > 0 else np.sign(gval) * self.max_step  # g'(xi) = -A
            step = float(np.clip(step, -self.max_step, self.max_step))
            cand = xi + step
            if lo is not None and hi is not None:
                if not min(lo, hi) < cand < max(lo, hi):
                    cand = 0.5 * (lo + hi)
                if abs(hi - lo) <= 1e-13 * L:
                    return Decomposition(xi=drop.xi, drop=drop, v=v, ortho_residual=gval, iterations=it)
            if abs(cand - xi) <= 1e-13 * L:
                return Decomposition(xi=drop.xi, drop=drop, v=v, ortho_residual=gval, iterations=it)
            xi = cand
        return None

    def project(self, w, xi_hint=None):
        w = self.grid.check(w)
        if xi_hint is not None:
            out = self._newton(w, float(xi_hint))
            if out is not None:
                return out
        xi0, _ = self.search(w)
        out = self._newton(w, xi0)
        if out is None:
            raise ProjectionDiverged("Newton iteration for the projection failed after a search restart")
        return out


def project(w, builder, xi_hint=None, **kwargs):
    """Decompose ``w = u(xi) + v`` with ``(v, du(xi)) = 0``."""
    return Projector(builder, **kwargs).project(w, xi_hint)


# -- reduced coefficients --------------------------------------------------------------
def coeff_A(drop, v):
    """``A = ||du||^2 - (v, d2u)``; raises SingularA unless positive."""
    g = drop.grid
    A = g.inner(drop.du, drop.du) - g.inner(v, drop.d2u)
    if not A > 0:
        raise SingularA(f"A = {A:.6g} is not positive")
    return A


def reduced_sigma(drop, v, A=None):
    """``sigma = du / A``."""
    if A is None:
        A = coeff_A(drop, v)
    return drop.du / A


def reduced_drift(drop, v, spec, eps=None):
    """All contributions to the drift ``b`` of the reduced equation.

    ``spec`` may be None for the noise-free equation.
    """
    g = drop.grid
    eps = drop.eps if eps is None else float(eps)
    A = coeff_A(drop, v)
    sigma = drop.du / A
    du = drop.du
    c_term = g.inner(allen_cahn_operator(g, drop.u, eps), du) / A
    if np.any(v):
        Lv, N = nonlinear_terms(g, drop.u, v, eps)
        Lv_term = -g.inner(Lv, du) / A
        N_term = -g.inner(N, du) / A
    else:
        Lv_term = 0.0
        N_term = 0.0
    if spec is not None and spec.eta0 > 0:
        q_sigma = quadratic_form(spec, sigma, sigma)
        d3 = drop.d3u if drop.d3u is not None else np.zeros_like(du)
        bracket = 0.5 * g.inner(v, d3) - 1.5 * g.inner(drop.d2u, du)
        B_term = bracket * q_sigma / A
        Qcross_term = quadratic_form(spec, sigma, drop.d2u) / A
    else:
        q_sigma = B_term = Qcross_term = 0.0
    b = c_term + Lv_term + N_term + B_term + Qcross_term
    return ReducedCoeffs(
        A=A,
        b=b,
        sigma=sigma,
        c_term=c_term,
        Lv_term=Lv_term,
        N_term=N_term,
        B_term=B_term,
        Qcross_term=Qcross_term,
        dA_drift=B_term + Qcross_term,
        q_sigma=q_sigma,
    )


def residual_budget(drop):
    """``||Lu_eps - eps^2 c du||_inf * ||du||_L1 / A`` at ``v = 0``.

    This bounds how far ``A^-1 (Lu_eps, du)`` may sit from ``eps^2 c``
    because the state is only the leading-order profile.
    """
    g = drop.grid
    eps = drop.eps
    c = velocity_c(g.curve, drop.xi)
    resid = allen_cahn_operator(g, drop.u, eps) - eps * eps * c * drop.du
    A = g.inner(drop.du, drop.du)
    return float(np.max(np.abs(resid)) * g.l1_norm(drop.du) / A)


def asymptotic_drift(drop, spec=None):
    """Cheap drift ``eps^2 c + A^-2 (du, Q d2u)`` with ``A = ||du||^2``."""
    g = drop.grid
    c = velocity_c(g.curve, drop.xi)
    out = drop.eps**2 * c
    if spec is not None and spec.eta0 > 0:
        A = g.inner(drop.du, drop.du)
        out += quadratic_form(spec, drop.du, drop.d2u) / (A * A)
    return float(out)


def step_reduced(decomp, dt, inc, spec):
    """Euler-Maruyama step ``xi + b dt + (sigma, dW)`` wrapped to ``[0, L)``.

    Returns ``(xi_new, coeffs, noise_term)``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    coeffs = reduced_drift(decomp.drop, decomp.v, spec)
    g = decomp.grid
    noise_term = g.inner(coeffs.sigma, inc.dW) if inc is not None else 0.0
    xi_new = float(g.curve.wrap(decomp.xi + coeffs.b * dt + noise_term))
    return xi_new, coeffs, noise_term


LEDGER_COLUMNS = ("t", "xi", "A", "b", "c_term", "Lv_term", "N_term", "B_term", "Qcross_term",
                  "noise_term", "v_norm")


class ReducedIntegrator:
    """Integrates the reduced equation on the manifold (``v = 0``).

    ``mode`` is ``"exact"`` (all five drift contributions) or ``"asymptotic"``
    (``eps^2 c`` plus the leading noise-induced drift).
    """

    def __init__(self, builder, spec, xi0, mode="exact"):
        if mode not in ("exact", "asymptotic"):
            raise ValueError(mode)
        self.builder = builder
        self.grid = builder.grid
        self.spec = spec
        self.xi = float(builder.curve.wrap(xi0))
        self.mode = mode
        self.t = 0.0
        self.rows = []

    def step(self, dt, inc=None, record=True):
        drop = self.builder.build(self.xi, third=self.mode == "exact")
        g = self.grid
        if self.mode == "exact":
            zero = np.zeros(g.n_nodes)
            xi_new, coeffs, noise = step_reduced(Decomposition(self.xi, drop, zero, 0.0), dt, inc, self.spec)
            row = coeffs.as_row()
        else:
            A = g.inner(drop.du, drop.du)
            b = asymptotic_drift(drop, self.spec)
            noise = g.inner(drop.du, inc.dW) / A if inc is not None else 0.0
            xi_new = float(g.curve.wrap(self.xi + b * dt + noise))
            row = {"A": A, "b": b, "c_term": drop.eps**2 * velocity_c(g.curve, drop.xi), "Lv_term": 0.0,
                   "N_term": 0.0, "B_term": 0.0, "Qcross_term": b - drop.eps**2 * velocity_c(g.curve, drop.xi)}
        if record:
            row = {k: row.get(k, 0.0) for k in LEDGER_COLUMNS}
            row.update(t=self.t, xi=self.xi, noise_term=noise, v_norm=0.0)
            self.rows.append(row)
        self.xi = xi_new
        self.t += dt
        return xi_new


def write_ledger(path, rows):
    """Per-step ledger CSV with the drift decomposition."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(LEDGER_COLUMNS)
        for r in rows:
            wr.writerow([repr(float(r[k])) for k in LEDGER_COLUMNS])
