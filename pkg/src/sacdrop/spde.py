"""Full solver for the mass-conserving stochastic Allen-Cahn equation.

``dw = [eps^2 Delta w - f(w) + mean f(w)] dt + dW`` on ``Omega_delta`` with
homogeneous Neumann conditions.  One step is

    (W + dt eps^2 S) w' = W [w + dt (mean f(w) - f(w))] + W dW,

with ``S`` the stiffness matrix and ``W`` the lumped weights.  Because ``S``
is symmetric with ``S 1 = 0`` and every noise mode has zero mean, the mass
``sum W w`` is preserved up to round-off.
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import kernels
from .droplet import f, f_prime
from .errors import LinearSolveFailure, SacdropError, StepTooLarge

STABILITY_BUDGET = 0.5


# -- operators -------------------------------------------------------------------------
def allen_cahn_operator(grid, u, eps):
    """``eps^2 Delta u - f(u) + mean f(u)``."""
    fu = f(u)
    return eps * eps * grid.laplacian(u) - fu + grid.mean(fu)


def nonlinear_terms(grid, u, v, eps):
    """Linearised operator and nonlinear remainder around ``u``.

    Returns
    -------
    Lv : ndarray
        ``-eps^2 Delta v + f'(u) v``.
    N : ndarray
        ``f(u+v) - f(u) - f'(u) v - mean(f(u+v) - f(u))``.
    """
    u = grid.check(u)
    v = grid.check(v)
    Lv = -eps * eps * grid.laplacian(v) + f_prime(u) * v
    df = f(u + v) - f(u)
    N = df - f_prime(u) * v - grid.mean(df)
    return Lv, N


def energy(grid, w, eps):
    """``int eps^2 |grad w|^2 / 2 + F(w)``."""
    return 0.5 * eps * eps * grid.grad_sq(w) + kernels.potential_sum(w, grid.weights)


# -- time stepping ---------------------------------------------------------------------
@dataclass
class SolverState:
    w: np.ndarray
    t: float
    eps: float
    m0: float
    step: int = 0


class IMEXStepper:
    """Semi-implicit step with a factorisation reused across steps.

    ``solver="direct"`` uses a sparse LU factorisation; ``solver="cg"`` uses
    conjugate gradients with a Jacobi preconditioner at relative tolerance
    ``1e-12``.
    """

    def __init__(self, grid, eps, dt, solver="direct"):
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.grid = grid
        self.eps = float(eps)
        self.dt = float(dt)
        self.solver = solver
        self.matrix = (sp.diags(grid.weights) + (dt * eps * eps) * grid.stiffness).tocsc()
        if solver == "direct":
            try:
                self._lu = splu(self.matrix)
            except RuntimeError as exc:
                raise LinearSolveFailure(f"factorisation failed: {exc}") from exc
        elif solver == "cg":
            self._diag = self.matrix.diagonal()
        else:
            raise ValueError(f"unknown solver {solver!r}")
        self._rhs = np.empty(grid.n_nodes)
        self._zeros = np.zeros(grid.n_nodes)

    def _solve(self, rhs, guess):
        if self.solver == "direct":
            return self._lu.solve(rhs)
        from scipy.sparse.linalg import LinearOperator, cg

        pre = LinearOperator(self.matrix.shape, matvec=lambda x: x / self._diag)
        out, info = cg(self.matrix, rhs, x0=guess, rtol=1e-12, atol=0.0, M=pre, maxiter=10000)
        if info != 0:
            raise LinearSolveFailure(f"CG did not converge (info={info})")
        return out

    def advance(self, w, dW=None):
        """Return ``w`` after one step; ``dW`` may be None for the noise-free equation."""
        fp = float(np.max(np.abs(3.0 * w * w - 1.0)))
        if self.dt * fp > STABILITY_BUDGET:
            raise StepTooLarge(f"dt * max|f'(w)| = {self.dt * fp:.3g} exceeds {STABILITY_BUDGET}")
        noise = dW if dW is not None else self._zeros
        rhs = kernels.imex_rhs(w, self.grid.weights, self.dt, noise, self._rhs)
        out = self._solve(rhs, w)
        if not np.all(np.isfinite(out)):
            raise LinearSolveFailure("linear solve produced non-finite values")
        return out


def step_spde(state, stepper, inc=None):
    """Advance a :class:`SolverState` by one step of ``stepper``."""
    w = stepper.advance(state.w, None if inc is None else inc.dW)
    return SolverState(w=w, t=state.t + stepper.dt, eps=state.eps, m0=state.m0, step=state.step + 1)


# -- problem setup ---------------------------------------------------------------------
def replica_rng(base_seed, experiment_id, replica):
    """Independent generator keyed by ``(base seed, experiment id, replica)``."""
    ss = np.random.SeedSequence([int(base_seed), int(experiment_id), int(replica)])
    return np.random.Generator(np.random.PCG64(ss))


@dataclass
class Problem:
    """Everything derived from a configuration that replicas can share."""

    config: object
    curve: object
    grid: object
    builder: object
    spec: object
    xi0: float
    eps: float

    def initial_field(self):
        """``u(xi0)`` plus the configured perturbation (orthogonal to du, zero mean)."""
        drop = self.builder.build(self.xi0)
        w = drop.u.copy()
        size = self.config.initial.perturbation
        if size > 0:
            g = self.grid
            if self.spec is None:
                raise ValueError("a perturbation needs noise modes (noise.n_modes >= 1)")
            e = self.spec.modes[:, self.config.initial.perturbation_mode - 1].copy()
            e -= g.inner(e, drop.du) / g.inner(drop.du, drop.du) * drop.du
            e -= g.mean(e)
            w += size * e / g.norm(e)
        return w


def problem_grid(config, curve):
    """Grid of a configuration; refined around the initial droplet if ``grid.h_over_eps`` is set."""
    from .droplet import droplet_reach
    from .fields import build_grid, refined_grid

    gc = config.grid
    theta0 = config.initial.theta0
    eps = config.model.eps
    if gc.h_over_eps is not None:
        return refined_grid(curve, gc.h_over_eps * eps, theta0, droplet_reach(eps))
    return build_grid(
        curve,
        gc.n_theta,
        gc.n_q,
        focus_theta=theta0 if gc.theta_ratio > 1 else None,
        theta_width=gc.theta_width,
        theta_ratio=gc.theta_ratio,
        q_focus=gc.q_focus if gc.q_ratio > 1 else None,
        q_width=gc.q_width,
        q_ratio=gc.q_ratio,
    )


def prepare(config, amplitude=None, need_modes=None):
    """Build the boundary, grid, droplet builder and covariance of ``config``."""
    from .droplet import DropletBuilder
    from .geometry import build_boundary
    from .noise import build_covariance

    d = config.domain
    curve = build_boundary(d.shape_spec(), d.delta, d.resolution)
    grid = problem_grid(config, curve)
    eps = config.model.eps
    builder = DropletBuilder(grid, eps, check_bound=False, bulk_correction=config.model.bulk_correction)
    amp = config.noise.amplitude if amplitude is None else amplitude
    if need_modes is None:
        need_modes = amp > 0 or config.initial.perturbation > 0
    spec = None
    if need_modes:
        spec = build_covariance(grid, config.noise.n_modes, config.noise.decay, amp)
    xi0 = float(curve.xi_of_theta(config.initial.theta0))
    return Problem(config=config, curve=curve, grid=grid, builder=builder, spec=spec, xi0=xi0, eps=eps)


# -- path records ----------------------------------------------------------------------
PATH_COLUMNS = ("t", "mass", "energy", "xi", "v_l2", "v_h1eps")


@dataclass
class PathRecord:
    rows: list = field(default_factory=list)
    status: str = "ok"
    message: str = ""
    checkpoints: list = field(default_factory=list)

    def column(self, name):
        return np.array([r[name] for r in self.rows])

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(PATH_COLUMNS)
            for r in self.rows:
                wr.writerow([repr(float(r[k])) for k in PATH_COLUMNS])


def n_steps(config):
    return int(round(config.time.T / config.time.dt))


def run(config, problem=None, replica=0, experiment_id=0, out_dir=None, monitor=None):
    """Integrate the SPDE and record the projected path every ``stride`` steps.

    ``monitor(row)`` may return True to stop early (used for exit times).
    Projection failures stop the run and are recorded in ``status``.
    """
    from .fields import write_field_binary
    from .manifold import Projector
    from .noise import sample_increment

    if problem is None:
        problem = prepare(config)
    g = problem.grid
    eps = problem.eps
    tc = config.time
    stepper = IMEXStepper(g, eps, tc.dt, solver=config.run.solver)
    projector = Projector(problem.builder, radius=config.run.neighborhood)
    rng = replica_rng(config.run.seed, experiment_id, replica)
    w = problem.initial_field()
    state = SolverState(w=w, t=0.0, eps=eps, m0=g.mass(w))
    record = PathRecord()
    xi = problem.xi0
    use_noise = problem.spec is not None and problem.spec.eta0 > 0

    def observe(state, xi):
        dec = projector.project(state.w, xi)
        row = {
            "t": state.t,
            "mass": g.mass(state.w),
            "energy": energy(g, state.w, eps),
            "xi": dec.xi,
            "v_l2": dec.v_norm,
            "v_h1eps": dec.v_h1eps(),
        }
        return dec, row

    total = n_steps(config)
    try:
        dec, row = observe(state, xi)
        xi = dec.xi
        record.rows.append(row)
        if monitor is not None and monitor(row, dec):
            record.status = "stopped"
            return record
        for n in range(1, total + 1):
            inc = sample_increment(problem.spec, tc.dt, rng) if use_noise else None
            state = step_spde(state, stepper, inc)
            if n % tc.stride == 0:
                dec, row = observe(state, xi)
                xi = dec.xi
                record.rows.append(row)
                ck = config.run.checkpoint_every
                if out_dir is not None and ck and (len(record.rows) - 1) % ck == 0:
                    path = os.path.join(out_dir, f"checkpoint_{n:08d}.sacf")
                    write_field_binary(path, state.w, g)
                    record.checkpoints.append(path)
                if monitor is not None and monitor(row, dec):
                    record.status = "stopped"
                    return record
    except SacdropError as exc:
        record.status = exc.code
        record.message = str(exc)
    return record
