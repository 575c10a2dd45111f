"""Grid functions on the mapped polar grid over ``Omega_delta``.

Nodes sit at ``x = q R(theta) (cos theta, sin theta)`` for ``theta`` in a
periodic node set and ``q`` in ``[0, 1]``.  The ``q = 0`` row collapses to one
shared axis node.  The Laplacian comes from bilinear elements in ``(theta, q)``
with the exact geometric metric and a lumped (row-sum) mass, so

* ``W Delta`` is symmetric and ``Delta 1 = 0``: discrete self-adjointness and
  exact mass conservation,
* homogeneous Neumann conditions are the natural boundary condition,
* ``sum(w) = |Omega_delta|`` up to Gauss quadrature error.

Node numbering: 0 is the axis, ring ``j >= 1`` node ``i`` is ``1 + (j-1) N_theta + i``.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import GridMismatch

_GAUSS_X, _GAUSS_W = np.polynomial.legendre.leggauss(6)


def theta_nodes(n, focus=None, width=0.5, ratio=1.0, table=1 << 16):
    """Periodic angular nodes, optionally refined by ``ratio`` around ``focus``."""
    if focus is None or ratio == 1.0:
        return 2.0 * np.pi * np.arange(n) / n
    t = np.linspace(0.0, 2.0 * np.pi, table + 1)
    d = 2.0 * np.sin(0.5 * (t - focus))
    dens = 1.0 + (ratio - 1.0) * np.exp(-((d / width) ** 4))
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(t))])
    cum /= cum[-1]
    # start the node set at the focus so the refined patch is contiguous
    c0 = np.interp(focus % (2 * np.pi), t, cum)
    target = (c0 + np.arange(n) / n) % 1.0
    th = np.sort(np.interp(target, cum, t))
    return th


def q_nodes(n, focus=None, width=0.08, ratio=1.0, table=1 << 14):
    """Radial nodes on [0, 1]; with ``focus`` they are refined for q >= focus."""
    if focus is None or ratio == 1.0:
        return np.linspace(0.0, 1.0, n)
    t = np.linspace(0.0, 1.0, table + 1)
    dens = 1.0 + (ratio - 1.0) * 0.5 * (1.0 + np.tanh((t - focus) / width))
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(t))])
    cum /= cum[-1]
    q = np.interp(np.linspace(0.0, 1.0, n), cum, t)
    q[0], q[-1] = 0.0, 1.0
    return q


def _gauss(a, b):
    """Gauss points and weights on the intervals [a, b] (arrays)."""
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    pts = mid[:, None] + half[:, None] * _GAUSS_X[None, :]
    wts = half[:, None] * _GAUSS_W[None, :]
    return pts, wts


class Grid:
    """Discretisation of ``Omega_delta`` (the GridSpec of the design)."""

    def __init__(self, curve, theta, q):
        theta = np.asarray(theta, dtype=float)
        q = np.asarray(q, dtype=float)
        if theta.ndim != 1 or q.ndim != 1 or q[0] != 0.0 or q[-1] != 1.0:
            raise ValueError("q nodes must start at 0 and end at 1")
        if np.any(np.diff(theta) <= 0) or np.any(np.diff(q) <= 0):
            raise ValueError("nodes must be strictly increasing")
        self.curve = curve
        self.theta = theta
        self.q = q
        self.n_theta = nt = theta.size
        self.n_q = nq = q.size
        self.n_nodes = 1 + nt * (nq - 1)

        r_nodes = curve.radius(theta)
        qq = np.concatenate([[0.0], np.repeat(q[1:], nt)])
        tt = np.concatenate([[0.0], np.tile(theta, nq - 1)])
        rr = np.concatenate([[0.0], np.tile(r_nodes, nq - 1)])
        self.node_q = qq
        self.node_theta = tt
        self.x = qq * rr * np.cos(tt)
        self.y = qq * rr * np.sin(tt)
        self.boundary = np.zeros(self.n_nodes, dtype=bool)
        self.boundary[1 + (nq - 2) * nt :] = True
        self._assemble()
        self.area = curve.area
        self._hash = None

    # -- assembly ----------------------------------------------------------------------
    def _assemble(self):
        nt, nq = self.n_theta, self.n_q
        th0 = self.theta
        th1 = np.append(self.theta[1:], self.theta[0] + 2 * np.pi)
        ht = th1 - th0
        gt, wt = _gauss(th0, th1)  # (nt, g)
        r = self.curve.radius(gt)
        rp = self.curve.radius(gt, 1)
        lt = np.stack([(th1[:, None] - gt) / ht[:, None], (gt - th0[:, None]) / ht[:, None]], axis=1)
        dlt = np.stack([-np.ones_like(gt), np.ones_like(gt)], axis=1) / ht[:, None, None]
        # theta integrals, shape (nt, 2, 2)
        a1 = np.einsum("g,iag,ibg->iab", np.ones(gt.shape[1]), dlt * wt[:, None, :], dlt)
        a2 = np.einsum("iag,ibg->iab", dlt * (wt * (-rp / r))[:, None, :], lt)
        a3 = np.einsum("iag,ibg->iab", lt * (wt * (1.0 + (rp / r) ** 2))[:, None, :], lt)
        mt = np.einsum("iag->ia", lt * (wt * r * r)[:, None, :])

        q0, q1 = self.q[:-1], self.q[1:]
        hq = q1 - q0
        gq, wq = _gauss(q0, q1)
        lq = np.stack([(q1[:, None] - gq) / hq[:, None], (gq - q0[:, None]) / hq[:, None]], axis=1)
        dlq = np.stack([-np.ones_like(gq), np.ones_like(gq)], axis=1) / hq[:, None, None]
        b1 = np.einsum("jag,jbg->jab", lq * (wq / gq)[:, None, :], lq)
        b2 = np.einsum("jag,jbg->jab", lq * wq[:, None, :], dlq)
        b3 = np.einsum("jag,jbg->jab", dlq * (wq * gq)[:, None, :], dlq)
        mq = np.einsum("jag->ja", lq * (wq * gq)[:, None, :])
        # the merged axis function has no theta-derivative: drop those terms exactly
        b1[0, 0, :] = 0.0
        b1[0, :, 0] = 0.0
        b2_left = b2.copy()  # multiplies d_theta of the left function
        b2_left[0, 0, :] = 0.0
        b2_right = b2.copy()
        b2_right[0, 0, :] = 0.0

        # local matrices: corners (alpha, beta) = (theta side, q side)
        rows, cols, vals = [], [], []
        ii = np.arange(nt)
        jj = np.arange(nq - 1)

        def gidx(i, j):
            # i, j broadcast arrays; q index j == 0 is the axis
            i = i % nt
            return np.where(j == 0, 0, 1 + (j - 1) * nt + i)

        I, J = np.meshgrid(ii, jj, indexing="ij")
        for al in range(2):
            for be in range(2):
                ga = gidx(I + al, J + be)
                for gm in range(2):
                    for de in range(2):
                        gc = gidx(I + gm, J + de)
                        v = (
                            a1[:, None, al, gm] * b1[None, :, be, de]
                            + a2[:, None, al, gm] * b2_left[None, :, be, de]
                            + a2[:, None, gm, al] * b2_right[None, :, de, be]
                            + a3[:, None, al, gm] * b3[None, :, be, de]
                        )
                        rows.append(ga.ravel())
                        cols.append(gc.ravel())
                        vals.append(v.ravel())
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
        s = sp.coo_matrix((vals, (rows, cols)), shape=(self.n_nodes, self.n_nodes)).tocsr()
        s = 0.5 * (s + s.T)
        s = s.tocsr()
        s.sum_duplicates()
        # restore exact zero row sums (constants are in the kernel)
        off = s - sp.diags(s.diagonal())
        s = (off - sp.diags(np.asarray(off.sum(axis=1)).ravel())).tocsr()
        s.eliminate_zeros()
        self.stiffness = s

        w = np.zeros(self.n_nodes)
        for al in range(2):
            for be in range(2):
                np.add.at(w, gidx(I + al, J + be).ravel(), (mt[:, None, al] * mq[None, :, be]).ravel())
        self.weights = w

    # -- basic operations on raw arrays -------------------------------------------------
    def check(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.n_nodes,):
            raise GridMismatch(f"field of shape {v.shape} does not match grid with {self.n_nodes} nodes")
        return v

    def inner(self, a, b):
        # the elementwise product commutes exactly, so inner(a, b) == inner(b, a) bit for bit
        return float(np.dot(self.weights, self.check(a) * self.check(b)))

    def norm(self, v):
        return np.sqrt(max(self.inner(v, v), 0.0))

    def grad_sq(self, v):
        """Squared L2 norm of the gradient, v^T S v."""
        v = self.check(v)
        return float(max(v @ (self.stiffness @ v), 0.0))

    def grad_inner(self, a, b):
        return float(self.check(a) @ (self.stiffness @ self.check(b)))

    def h1eps_norm(self, v, eps):
        if eps <= 0:
            raise ValueError("eps must be positive")
        return np.sqrt(eps * eps * self.grad_sq(v) + self.inner(v, v))

    def laplacian(self, v):
        return -(self.stiffness @ self.check(v)) / self.weights

    def mass(self, v):
        return float(np.dot(self.weights, self.check(v)))

    def mean(self, v):
        return self.mass(v) / self.weights.sum()

    def mean_mass(self, v):
        m = self.mass(v)
        return m / self.weights.sum(), m

    def l1_norm(self, v):
        return float(np.dot(self.weights, np.abs(self.check(v))))

    def grid_hash(self):
        if self._hash is None:
            h = hashlib.sha256()
            h.update(self.curve.shape_hash().encode())
            h.update(self.theta.tobytes())
            h.update(self.q.tobytes())
            self._hash = h.hexdigest()[:16]
        return self._hash

    def to_rows(self, v):
        """(N_q, N_theta) array; the axis row repeats the axis value."""
        v = self.check(v)
        out = np.empty((self.n_q, self.n_theta))
        out[0, :] = v[0]
        out[1:, :] = v[1:].reshape(self.n_q - 1, self.n_theta)
        return out

    def from_rows(self, rows):
        rows = np.asarray(rows, dtype=float)
        if rows.shape != (self.n_q, self.n_theta):
            raise GridMismatch(f"row array {rows.shape} != {(self.n_q, self.n_theta)}")
        return np.concatenate([[rows[0, 0]], rows[1:].ravel()])


def build_grid(curve, n_theta, n_q, focus_theta=None, theta_width=0.5, theta_ratio=1.0,
               q_focus=None, q_width=0.08, q_ratio=1.0):
    """Build a grid; ``theta_ratio``/``q_ratio`` > 1 refine near ``focus_theta``/``q >= q_focus``."""
    if n_theta < 8 or n_q < 3:
        raise ValueError("grid too small")
    th = theta_nodes(n_theta, focus_theta, theta_width, theta_ratio)
    q = q_nodes(n_q, q_focus, q_width, q_ratio)
    return Grid(curve, th, q)


@dataclass
class ScalarField:
    values: np.ndarray
    grid: Grid

    def __post_init__(self):
        self.values = self.grid.check(self.values)


def _same_grid(a, b):
    if a.grid is not b.grid and a.grid.grid_hash() != b.grid.grid_hash():
        raise GridMismatch("fields live on different grids")


def inner(a, b):
    _same_grid(a, b)
    return a.grid.inner(a.values, b.values)


def h1eps_norm(v, eps):
    return v.grid.h1eps_norm(v.values, eps)


def laplacian_neumann(v):
    return ScalarField(v.grid.laplacian(v.values), v.grid)


def mean_mass(v):
    return v.grid.mean_mass(v.values)


# -- serialisation ------------------------------------------------------------------------
_MAGIC = b"SACF"


def write_field_binary(path, values, grid):
    """Header (magic, version, N_theta, N_q, 16-byte grid hash) + row-major float64."""
    rows = grid.to_rows(values)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<III", 1, grid.n_theta, grid.n_q))
        fh.write(grid.grid_hash().encode("ascii"))
        fh.write(np.ascontiguousarray(rows, dtype="<f8").tobytes())


def read_field_binary(path, grid=None):
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a field file")
        _, nt, nq = struct.unpack("<III", fh.read(12))
        ghash = fh.read(16).decode("ascii")
        rows = np.frombuffer(fh.read(8 * nt * nq), dtype="<f8").reshape(nq, nt).copy()
    if grid is not None:
        if (grid.n_theta, grid.n_q) != (nt, nq) or grid.grid_hash() != ghash:
            raise GridMismatch(f"{path} was written on grid {ghash}, not {grid.grid_hash()}")
        return grid.from_rows(rows)
    return rows, ghash


def write_field_csv(path, values, grid):
    v = grid.check(values)
    with open(path, "w") as fh:
        fh.write("node,theta,q,x,y,value\n")
        for k in range(grid.n_nodes):
            fh.write(
                f"{k},{grid.node_theta[k]:.17g},{grid.node_q[k]:.17g},"
                f"{grid.x[k]:.17g},{grid.y[k]:.17g},{v[k]:.17g}\n"
            )


def _mean_density(ratio, focus, width, periodic):
    if periodic:
        t = np.linspace(0.0, 2.0 * np.pi, 1 << 14, endpoint=False)
        d = 2.0 * np.sin(0.5 * (t - focus))
        return float(np.mean(1.0 + (ratio - 1.0) * np.exp(-((d / width) ** 4))))
    t = np.linspace(0.0, 1.0, 1 << 14)
    return float(np.mean(1.0 + (ratio - 1.0) * 0.5 * (1.0 + np.tanh((t - focus) / width))))


def refined_grid(curve, h, theta0, reach, theta_ratio=4.0, q_ratio=10.0, q_width=0.05):
    """Grid whose spacing is about ``h`` within ``reach`` of the boundary point at ``theta0``.

    Away from that patch the spacing grows by ``theta_ratio`` (angular) and
    ``q_ratio`` (radial).
    """
    th = np.linspace(0.0, 2.0 * np.pi, 2048, endpoint=False)
    r = curve.radius(th)
    r_min, r_max = float(r.min()), float(r.max())
    r0 = float(curve.radius(np.array([theta0]))[0])
    q_focus = max(0.05, 1.0 - 1.2 * reach / r_min)
    width = min(np.pi / 2, 1.6 * reach / r0)
    dens_t = _mean_density(theta_ratio, theta0, width, True)
    n_theta = int(np.ceil(2.0 * np.pi * dens_t * r0 / (theta_ratio * h)))
    dens_q = _mean_density(q_ratio, q_focus, q_width, False)
    n_q = int(np.ceil(dens_q * r_max / (q_ratio * h))) + 1
    return build_grid(curve, max(n_theta, 16), max(n_q, 8), focus_theta=theta0, theta_width=width,
                      theta_ratio=theta_ratio, q_focus=q_focus, q_width=q_width, q_ratio=q_ratio)


def local_spacing(grid, center, radius):
    """Largest node spacing (angular and radial) among nodes within ``radius`` of ``center``."""
    rows_x = grid.to_rows(grid.x)
    rows_y = grid.to_rows(grid.y)
    dt = np.hypot(np.roll(rows_x, -1, axis=1) - rows_x, np.roll(rows_y, -1, axis=1) - rows_y)
    dq = np.hypot(np.diff(rows_x, axis=0), np.diff(rows_y, axis=0))
    near = np.hypot(rows_x - center[0], rows_y - center[1]) < radius
    return float(max(dt[near].max(initial=0.0), dq[near[1:]].max(initial=0.0)))
