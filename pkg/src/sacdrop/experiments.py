"""Verification harness: scaling suite, coupled path comparison, exit-time
Monte Carlo and the spectral-gap estimate.
"""
from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
import multiprocessing

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, LinearOperator, eigsh, splu

from .droplet import DropletBuilder, check_upbound, droplet_reach, f_prime, velocity_c
from .errors import EigensolveFailure, InsufficientPoints, SacdropError
from .fields import refined_grid
from .manifold import Projector, ReducedIntegrator, residual_budget
from .noise import sample_increment
from .spde import IMEXStepper, energy, n_steps, prepare, replica_rng

EXPERIMENT_IDS = {"simulate": 1, "compare": 2, "exit-times": 3, "scalings": 4, "droplet-dump": 5}

SCALING_TARGETS = (
    ("du_l2", -0.5, 0.2),
    ("d2u_l2", -1.5, 0.2),
    ("d3u_l2", -2.5, 0.3),
    ("d2u_du_inner", -1.0, 0.3),
    ("du_l1", 0.0, 0.2),
    ("du_linf", -1.0, 0.2),
    ("A", -1.0, 0.2),
    ("sigma_l2", 0.5, 0.2),
)


def droplet_grid(curve, eps, theta0, h_over_eps):
    return refined_grid(curve, h_over_eps * eps, theta0, droplet_reach(eps))


# -- fitting helpers -------------------------------------------------------------------
def fit_slope(x, y):
    """Least-squares slope of ``log y`` against ``log x``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 3:
        raise InsufficientPoints(f"a log-log fit needs at least 3 points, got {x.size}")
    if np.any(y <= 0) or np.any(~np.isfinite(y)):
        return float("nan")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def linear_regression(x, y):
    """``(slope, intercept, r2)`` of an ordinary least-squares line."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else float("nan")
    return float(slope), float(icpt), r2


def wilson_interval(k, n, z=1.959963984540054):
    """95% Wilson score interval for ``k`` successes in ``n`` trials."""
    if n <= 0:
        return 0.0, 1.0
    p = k / n
    den = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / den
    half = z / den * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    return float(max(0.0, center - half)), float(min(1.0, center + half))


# -- scaling suite ---------------------------------------------------------------------
@dataclass
class ScalingEntry:
    name: str
    eps: list
    values: list
    slope: float
    target: float
    tolerance: float

    @property
    def passed(self):
        return bool(np.isfinite(self.slope) and abs(self.slope - self.target) <= self.tolerance)


@dataclass
class ScalingReport:
    entries: list
    shape: str
    delta: float
    xi: float
    mass_errors: list
    radii: list
    fd_errors: list
    grid_nodes: list

    def entry(self, name):
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["eps", "norm", "value"])
            for e in self.entries:
                for x, v in zip(e.eps, e.values):
                    wr.writerow([repr(float(x)), e.name, repr(float(v))])

    def summary(self):
        return {
            "shape": self.shape,
            "delta": self.delta,
            "xi": self.xi,
            "mass_errors": self.mass_errors,
            "radii": self.radii,
            "grid_nodes": self.grid_nodes,
            "fd_errors": self.fd_errors,
            "slopes": [
                {"name": e.name, "slope": e.slope, "target": e.target, "tolerance": e.tolerance, "pass": e.passed}
                for e in self.entries
            ],
        }


def droplet_norms(drop):
    g = drop.grid
    A = g.inner(drop.du, drop.du)
    return {
        "du_l2": np.sqrt(A),
        "d2u_l2": g.norm(drop.d2u),
        "d3u_l2": g.norm(drop.d3u),
        "d2u_du_inner": abs(g.inner(drop.d2u, drop.du)),
        "du_l1": g.l1_norm(drop.du),
        "du_linf": float(np.max(np.abs(drop.du))),
        "A": A,
        "sigma_l2": 1.0 / np.sqrt(A),
    }


def scaling_suite(eps_list, curve, theta0=0.0, h_over_eps=0.4, enforce_upbound=True, original_area=None,
                  bulk_correction=False):
    """Norms of the xi-derivatives at ``v = 0`` and their fitted power laws in eps.

    Each eps gets its own grid refined to ``h = h_over_eps * eps`` around the droplet.
    """
    eps_list = [float(e) for e in eps_list]
    if len(eps_list) < 3:
        raise InsufficientPoints(f"the scaling suite needs at least 3 eps values, got {len(eps_list)}")
    if enforce_upbound:
        area = curve.area * curve.delta**2 if original_area is None else original_area
        for e in eps_list:
            check_upbound(e, curve.delta, area)
    xi = float(curve.xi_of_theta(theta0))
    values = {name: [] for name, _, _ in SCALING_TARGETS}
    mass_err, radii, fd, nodes = [], [], [], []
    for e in eps_list:
        g = droplet_grid(curve, e, theta0, h_over_eps)
        drop = DropletBuilder(g, e, check_bound=False, bulk_correction=bulk_correction).build(xi)
        for k, v in droplet_norms(drop).items():
            values[k].append(float(v))
        mass_err.append(abs(g.mass(drop.u) - (g.weights.sum() - np.pi)))
        radii.append(drop.rho)
        fd.append(drop.fd_error)
        nodes.append(g.n_nodes)
    entries = [
        ScalingEntry(name, eps_list, values[name], fit_slope(eps_list, values[name]), target, tol)
        for name, target, tol in SCALING_TARGETS
    ]
    return ScalingReport(entries, curve.shape.describe(), curve.delta, xi, mass_err, radii, fd, nodes)


# -- spectral gap ----------------------------------------------------------------------
@dataclass
class GapEstimate:
    nu_hat: float
    eigenvalues: list
    eps: float
    n_nodes: int


def spectral_gap(drop, eps=None, sigma=None, k=6):
    """Smallest value of ``(Lv, v) / (eps^2 ||v||_H1eps^2)`` over ``v`` orthogonal to ``du`` and to constants.

    Solved as a generalised eigenproblem ``(eps^2 S + W f'(u)) x = lambda (eps^2 S + W) x``
    with ARPACK in shift-invert mode; the two orthogonality constraints are
    imposed inside the shifted solve through a Schur complement.
    """
    g = drop.grid
    eps = drop.eps if eps is None else float(eps)
    w = g.weights
    A = (eps * eps * g.stiffness + sp.diags(w * f_prime(drop.u))).tocsc()
    B = (eps * eps * g.stiffness + sp.diags(w)).tocsc()
    cons = [w]
    if drop.du is not None and g.norm(drop.du) > 1e-12:
        cons.insert(0, w * drop.du)
    C = np.column_stack(cons)
    if sigma is None:
        sigma = -0.2 * eps * eps
    try:
        K = splu((A - sigma * B).tocsc())
    except RuntimeError as exc:
        raise EigensolveFailure(f"shifted factorisation failed: {exc}") from exc
    KC = np.column_stack([K.solve(C[:, j].copy()) for j in range(C.shape[1])])
    schur = C.T @ KC

    def op(r):
        x = K.solve(np.asarray(r, dtype=float).ravel())
        return x - KC @ np.linalg.solve(schur, C.T @ x)

    opinv = LinearOperator(A.shape, matvec=op, dtype=float)
    v0 = op(np.cos(0.7 * g.x + 0.3) + np.sin(0.4 * g.y + 0.1))
    k = min(k, g.n_nodes - C.shape[1] - 2)
    try:
        vals = eigsh(A, k=k, M=B, sigma=sigma, OPinv=opinv, v0=v0, which="LM", tol=1e-10,
                     return_eigenvectors=False)
    except (ArpackError, ArpackNoConvergence) as exc:
        raise EigensolveFailure(f"eigen-solve for the spectral gap failed: {exc}") from exc
    vals = np.sort(vals)
    return GapEstimate(nu_hat=float(vals[0] / (eps * eps)), eigenvalues=[float(v) for v in vals],
                       eps=eps, n_nodes=g.n_nodes)


@dataclass
class GapStudy:
    h_over_eps: list
    raw: list
    extrapolated: list

    def summary(self):
        return asdict(self)


def spectral_gap_study(curve, eps, theta0=0.0, h_over_eps=(0.4, 0.3, 0.225)):
    """Raw gap estimates on successively refined grids plus Richardson extrapolation.

    The discrete gap carries an ``O((h/eps)^2)`` error; consecutive pairs are
    extrapolated assuming that rate.
    """
    xi = float(curve.xi_of_theta(theta0))
    raw = []
    for r in h_over_eps:
        g = droplet_grid(curve, eps, theta0, r)
        drop = DropletBuilder(g, eps, check_bound=False).build(xi, third=False)
        raw.append(spectral_gap(drop, eps).nu_hat)
    ext = []
    for i in range(len(raw) - 1):
        h0, h1 = h_over_eps[i] ** 2, h_over_eps[i + 1] ** 2
        ext.append(raw[i + 1] + (raw[i + 1] - raw[i]) * h1 / (h0 - h1))
    return GapStudy(list(h_over_eps), raw, ext)


# -- coupled comparison ----------------------------------------------------------------
COMPARE_COLUMNS = ("t", "xi_full", "xi_reduced", "xi_asymptotic", "v_l2", "v_h1eps", "noise_term", "q_sigma",
                   "mass", "energy")


@dataclass
class CompareReport:
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def column(self, name):
        return np.array([r[name] for r in self.rows])

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(COMPARE_COLUMNS)
            for r in self.rows:
                wr.writerow([repr(float(r[k])) for k in COMPARE_COLUMNS])


def compare_paths(config, problem=None, replica=0):
    """Full SPDE and reduced SDE driven by common noise increments.

    The reduced equations advance every ``compare.reduced_stride`` SPDE steps
    using the sum of the increments over those steps.  The full field is
    projected every ``time.stride`` steps; ``noise_term`` records
    ``(sigma(xi_full), dW)`` summed over the same window so that
    xi_full increments can be regressed on it.
    """
    from .noise import apply_Q, quadratic_form

    if problem is None:
        problem = prepare(config)
    g = problem.grid
    curve = problem.curve
    eps = problem.eps
    tc = config.time
    stepper = IMEXStepper(g, eps, tc.dt, solver=config.run.solver)
    projector = Projector(problem.builder, radius=config.run.neighborhood)
    rng = replica_rng(config.run.seed, EXPERIMENT_IDS["compare"], replica)
    spec = problem.spec
    use_noise = spec is not None and spec.eta0 > 0
    w = problem.initial_field()
    red = ReducedIntegrator(problem.builder, spec if use_noise else None, problem.xi0, mode="exact")
    asym = ReducedIntegrator(problem.builder, spec if use_noise else None, problem.xi0, mode="asymptotic")
    rstride = config.compare.reduced_stride
    report = CompareReport()

    dec = projector.project(w, problem.xi0)
    sigma = dec.drop.du / (g.inner(dec.drop.du, dec.drop.du) - g.inner(dec.v, dec.drop.d2u))
    q_sigma = quadratic_form(spec, sigma, sigma) if use_noise else 0.0

    def row(t, dec, noise_term, q_sigma):
        return {
            "t": t,
            "xi_full": dec.xi,
            "xi_reduced": red.xi,
            "xi_asymptotic": asym.xi,
            "v_l2": dec.v_norm,
            "v_h1eps": dec.v_h1eps(),
            "noise_term": noise_term,
            "q_sigma": q_sigma,
            "mass": g.mass(w),
            "energy": energy(g, w, eps),
        }

    report.rows.append(row(0.0, dec, 0.0, q_sigma))
    status, message = "ok", ""
    acc_red = np.zeros(g.n_nodes)
    acc_obs = np.zeros(g.n_nodes)
    total = n_steps(config)
    try:
        for n in range(1, total + 1):
            inc = sample_increment(spec, tc.dt, rng) if use_noise else None
            w = stepper.advance(w, None if inc is None else inc.dW)
            if inc is not None:
                acc_red += inc.dW
                acc_obs += inc.dW
            if n % rstride == 0:
                big = _Increment(acc_red, rstride * tc.dt) if use_noise else None
                red.step(rstride * tc.dt, big, record=False)
                asym.step(rstride * tc.dt, big, record=False)
                acc_red[:] = 0.0
            if n % tc.stride == 0:
                noise_term = g.inner(sigma, acc_obs) if use_noise else 0.0
                dec = projector.project(w, dec.xi)
                report.rows.append(row(n * tc.dt, dec, noise_term, q_sigma))
                acc_obs[:] = 0.0
                A = g.inner(dec.drop.du, dec.drop.du) - g.inner(dec.v, dec.drop.d2u)
                sigma = dec.drop.du / A
                q_sigma = quadratic_form(spec, sigma, sigma) if use_noise else 0.0
    except SacdropError as exc:
        status, message = exc.code, str(exc)

    report.summary = _compare_summary(report, curve, eps, problem, status, message, tc, use_noise)
    return report


@dataclass
class _Increment:
    dW: np.ndarray
    dt: float


def _compare_summary(report, curve, eps, problem, status, message, tc, use_noise):
    L = curve.length
    xf = report.column("xi_full")
    xr = report.column("xi_reduced")
    xa = report.column("xi_asymptotic")
    diff_red = np.abs(curve.arc_difference(xf, xr))
    diff_asym = np.abs(curve.arc_difference(xf, xa))
    drop0 = problem.builder.build(problem.xi0)
    out = {
        "status": status,
        "message": message,
        "length": L,
        "xi0": problem.xi0,
        "sup_full_minus_reduced": float(diff_red.max()),
        "sup_full_minus_asymptotic": float(diff_asym.max()),
        "sup_over_length": float(diff_red.max() / L),
        "sup_v_l2": float(report.column("v_l2").max()),
        "sup_v_h1eps": float(report.column("v_h1eps").max()),
        "displacement_full": float(curve.arc_difference(xf[-1], xf[0])),
        "displacement_reduced": float(curve.arc_difference(xr[-1], xr[0])),
        "displacement_asymptotic": float(curve.arc_difference(xa[-1], xa[0])),
        "eps2_c": float(eps * eps * velocity_c(curve, problem.xi0)),
        "residual_budget": residual_budget(drop0),
        "mass_drift": float(np.max(np.abs(report.column("mass") - report.column("mass")[0]))),
    }
    if use_noise and len(report.rows) > 2:
        dxi = curve.arc_difference(xf[1:], xf[:-1])
        nt = report.column("noise_term")[1:]
        slope, icpt, r2 = linear_regression(nt, dxi)
        window = tc.dt * tc.stride
        expected = float(np.mean(report.column("q_sigma")[:-1]) * window)
        dxr = curve.arc_difference(xr[1:], xr[:-1])
        out.update(
            regression_slope=slope,
            regression_intercept=icpt,
            regression_r2=r2,
            increment_variance_full=float(np.var(dxi, ddof=1)),
            increment_variance_reduced=float(np.var(dxr, ddof=1)),
            expected_variance=expected,
            n_increments=int(dxi.size),
        )
    return out


# -- exit times ------------------------------------------------------------------------
@dataclass
class ExitStats:
    rung: int
    eta0: float
    amplitude: float
    horizon: float
    threshold: float
    norm: str
    replicas: int
    exits: int
    failed: int
    quantiles: list
    wilson: tuple
    exit_times: list = field(repr=False, default_factory=list)

    @property
    def probability(self):
        return self.exits / self.replicas if self.replicas else 0.0

    def summary(self):
        d = asdict(self)
        d.pop("exit_times")
        d["probability"] = self.probability
        d["wilson"] = list(self.wilson)
        return d


_WORKER = {}


def _exit_problem(config):
    key = json.dumps(config.to_dict(), sort_keys=True)
    if _WORKER.get("key") != key:
        _WORKER.clear()
        _WORKER["key"] = key
        _WORKER["problem"] = prepare(config, need_modes=True)
    return _WORKER["problem"]


def _exit_norm(dec, norm):
    if norm == "h1":
        return np.sqrt(dec.grid.grad_sq(dec.v))
    return dec.v_norm


def _exit_replica(config, amplitude, rung, replica, threshold):
    """One replica: returns ``(exit_time or None, failed flag)``."""
    from .spde import run

    problem = _exit_problem(config)
    base = problem.spec
    problem.spec = base.with_amplitude(amplitude)
    norm = config.exit.norm
    hit = {}

    def monitor(row, dec):
        if _exit_norm(dec, norm) > threshold:
            hit["t"] = row["t"]
            return True
        return False

    try:
        rec = run(config, problem=problem, replica=replica, experiment_id=300 + rung, monitor=monitor)
    finally:
        problem.spec = base
    if "t" in hit:
        return hit["t"], False
    if rec.status not in ("ok", "stopped"):
        return rec.rows[-1]["t"] if rec.rows else 0.0, True
    return None, False


def _exit_task(args):
    return _exit_replica(*args)


def _init_worker(config):
    _exit_problem(config)


def calibrate_threshold(config, problem=None):
    """``threshold_factor`` times the largest deviation norm of the noise-free run."""
    from .spde import run

    if problem is None:
        problem = _exit_problem(config)
    base = problem.spec
    problem.spec = base.with_amplitude(0.0)
    T = config.exit.calibration_T or config.time.T
    cfg = config.replace(time={"T": T})
    try:
        rec = run(cfg, problem=problem, replica=0, experiment_id=299)
    finally:
        problem.spec = base
    if config.exit.norm == "h1":
        # ||grad v|| from the recorded L2 and H1eps norms
        h1 = rec.column("v_h1eps")
        l2 = rec.column("v_l2")
        peak = float(np.max(np.sqrt(np.maximum(h1 * h1 - l2 * l2, 0.0)) / problem.eps))
    else:
        peak = float(np.max(rec.column("v_l2")))
    return config.exit.threshold_factor * peak, peak, rec


def exit_time_mc(config, workers=None):
    """Exit statistics along the noise ladder (plus a noise-free rung).

    Rung ``i`` uses amplitude ``s * sqrt(ladder[i] / max(ladder))`` so that the
    eta0 values follow the ladder ratios.  Results are ordered by (rung, replica)
    and do not depend on the number of workers.
    """
    workers = config.run.workers if workers is None else workers
    problem = _exit_problem(config)
    threshold, peak, _ = calibrate_threshold(config, problem)
    ladder = list(config.exit.ladder)
    top = max(ladder)
    s = config.noise.amplitude
    amps = [s * np.sqrt(r / top) for r in ladder]
    n = config.exit.replicas
    tasks = [(config, amps[i], i, j, threshold) for i in range(len(amps)) for j in range(n)]
    if workers > 1:
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx, initializer=_init_worker,
                                 initargs=(config,)) as ex:
            results = list(ex.map(_exit_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        results = [_exit_task(t) for t in tasks]
    stats = []
    for i, a in enumerate(amps):
        res = results[i * n:(i + 1) * n]
        stats.append(_stats(i, a, problem, config, threshold, res))
    if config.exit.include_zero:
        # every noise-free replica follows the same deterministic path, so one run decides them all
        zero = [_exit_task((config, 0.0, len(amps), 0, threshold))] * n
        stats.append(_stats(len(amps), 0.0, problem, config, threshold, zero))
    return stats, {"threshold": threshold, "peak_noise_free": peak, "amplitudes": amps}


def _stats(rung, amplitude, problem, config, threshold, res):
    times = sorted(t for t, _ in res if t is not None)
    failed = sum(1 for _, f in res if f)
    k = len(times)
    n = len(res)
    qs = [float(np.quantile(times, q)) for q in (0.25, 0.5, 0.75)] if times else []
    eta0 = float(np.sum((amplitude * np.arange(1, problem.spec.n_modes + 1, dtype=float)
                         ** (-problem.spec.decay)) ** 2))
    return ExitStats(rung=rung, eta0=eta0, amplitude=float(amplitude), horizon=config.time.T,
                     threshold=float(threshold), norm=config.exit.norm, replicas=n, exits=k, failed=failed,
                     quantiles=qs, wilson=wilson_interval(k, n), exit_times=times)


def nonincreasing_with_overlap(stats):
    """True if exit probabilities do not increase down the ladder, allowing
    adjacent rungs whose Wilson intervals overlap."""
    for a, b in zip(stats[:-1], stats[1:]):
        if b.probability > a.probability and b.wilson[0] > a.wilson[1]:
            return False
    return True


def write_exit_histogram(path, stats, bins=20):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["rung", "eta0", "bin_lo", "bin_hi", "count"])
        for s in stats:
            edges = np.linspace(0.0, s.horizon, bins + 1)
            counts, _ = np.histogram(s.exit_times, bins=edges)
            for lo, hi, c in zip(edges[:-1], edges[1:], counts):
                wr.writerow([s.rung, repr(s.eta0), repr(float(lo)), repr(float(hi)), int(c)])


def dump_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))
