"""Star-shaped boundary curves of the rescaled domain and the droplet interface.

A boundary is a radial graph ``x = R(theta) (cos theta, sin theta)`` with ``R > 0``.
The rescaled domain is ``Omega_delta = Omega / delta`` so every length is
multiplied by ``1/delta``.  ``R`` is stored as a truncated trigonometric series
obtained from samples of the analytic shape, which makes the arclength map, its
inverse and the curvature smooth functions that can be evaluated anywhere.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import NonStarShaped, ResolutionTooLow

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class ShapeSpec:
    """Analytic description of the original domain ``Omega``.

    kind is ``"disk"`` (radius ``r0``), ``"ellipse"`` (semi-axes ``a`` along x
    and ``b`` along y) or ``"fourier"`` with
    ``R(theta) = r0 + sum_n cos_coeffs[n-1] cos(n theta) + sin_coeffs[n-1] sin(n theta)``.
    """

    kind: str = "disk"
    r0: float = 1.0
    a: float = 1.0
    b: float = 1.0
    cos_coeffs: tuple = ()
    sin_coeffs: tuple = ()

    def radial(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.kind == "disk":
            return np.full_like(theta, self.r0)
        if self.kind == "ellipse":
            a, b = self.a, self.b
            return a * b / np.sqrt((b * np.cos(theta)) ** 2 + (a * np.sin(theta)) ** 2)
        if self.kind == "fourier":
            out = np.full_like(theta, self.r0)
            for n, c in enumerate(self.cos_coeffs, start=1):
                out = out + c * np.cos(n * theta)
            for n, s in enumerate(self.sin_coeffs, start=1):
                out = out + s * np.sin(n * theta)
            return out
        raise ValueError(f"unknown shape kind {self.kind!r}")

    def describe(self):
        if self.kind == "disk":
            return f"disk(r0={self.r0!r})"
        if self.kind == "ellipse":
            return f"ellipse(a={self.a!r},b={self.b!r})"
        return f"fourier(r0={self.r0!r},cos={list(self.cos_coeffs)!r},sin={list(self.sin_coeffs)!r})"


class TrigSeries:
    """Real trigonometric series on [0, 2pi) built from equispaced samples."""

    def __init__(self, samples, tol=1e-15):
        samples = np.asarray(samples, dtype=float)
        m = samples.size
        c = np.fft.rfft(samples) / m
        self.mean = c[0].real
        coef = 2.0 * c[1:]
        if m % 2 == 0:
            # Nyquist mode is not representable as a smooth real series; drop it
            coef = coef[:-1]
        scale = max(abs(self.mean), np.abs(coef).max(initial=0.0), 1e-300)
        keep = np.nonzero(np.abs(coef) > tol * scale)[0]
        nmax = keep[-1] + 1 if keep.size else 0
        self.a = coef[:nmax].real.copy()  # cos coefficients
        self.b = -coef[:nmax].imag.copy()  # sin coefficients
        self.n = np.arange(1, nmax + 1, dtype=float)

    @property
    def n_modes(self):
        return self.n.size

    def __call__(self, theta, deriv=0, chunk=4096):
        theta = np.asarray(theta, dtype=float)
        flat = theta.ravel()
        out = np.empty_like(flat)
        n = self.n
        # d^k/dtheta^k of (a cos + b sin) cycles through four phases
        k = deriv % 4
        nk = n**deriv
        if k == 0:
            ca, sa = self.a * nk, self.b * nk
        elif k == 1:
            ca, sa = self.b * nk, -self.a * nk
        elif k == 2:
            ca, sa = -self.a * nk, -self.b * nk
        else:
            ca, sa = -self.b * nk, self.a * nk
        base = self.mean if deriv == 0 else 0.0
        for lo in range(0, flat.size, chunk):
            t = flat[lo : lo + chunk, None] * n[None, :]
            out[lo : lo + chunk] = base + np.cos(t) @ ca + np.sin(t) @ sa
        return out.reshape(theta.shape)

    def integral(self, theta):
        """Antiderivative vanishing at theta=0 (the mean contributes mean*theta)."""
        theta = np.asarray(theta, dtype=float)
        flat = theta.ravel()
        t = flat[:, None] * self.n[None, :]
        val = self.mean * flat + np.sin(t) @ (self.a / self.n) + (1.0 - np.cos(t)) @ (self.b / self.n)
        return val.reshape(theta.shape)


@dataclass
class BoundaryCurve:
    """Boundary of ``Omega_delta`` parameterised by arclength ``xi``.

    Orientation is counter-clockwise, so the inward normal is the tangent
    rotated by +90 degrees.
    """

    shape: ShapeSpec
    delta: float
    resolution: int
    radius_series: TrigSeries
    speed_series: TrigSeries
    length: float
    theta_table: np.ndarray
    xi_table: np.ndarray
    curvature_table: np.ndarray
    curvature_slope_table: np.ndarray
    area: float
    _inverse: PchipInterpolator = field(repr=False, default=None)

    # -- radial function and arclength -------------------------------------------------
    def radius(self, theta, deriv=0):
        return self.radius_series(theta, deriv)

    def xi_of_theta(self, theta):
        theta = np.asarray(theta, dtype=float)
        turns = np.floor(theta / TWO_PI)
        base = theta - turns * TWO_PI
        return self.speed_series.integral(base) + turns * self.length

    def theta_of_xi(self, xi):
        """Inverse arclength map; Newton-polished pchip guess, periodic in xi."""
        xi = np.asarray(xi, dtype=float)
        turns = np.floor(xi / self.length)
        xr = xi - turns * self.length
        th = self._inverse(xr)
        for _ in range(6):
            res = self.speed_series.integral(th) - xr
            th = th - res / self.speed_series(th)
            if np.all(np.abs(res) < 1e-14 * self.length):
                break
        return th + turns * TWO_PI

    # -- differential geometry ---------------------------------------------------------
    def _curvature_theta(self, theta):
        r = self.radius(theta)
        r1 = self.radius(theta, 1)
        r2 = self.radius(theta, 2)
        r3 = self.radius(theta, 3)
        sp = r * r + r1 * r1
        p = r * r + 2 * r1 * r1 - r * r2
        dp = 2 * r * r1 + 3 * r1 * r2 - r * r3
        dsp = 2 * r * r1 + 2 * r1 * r2
        k = p * sp**-1.5
        dk_dtheta = dp * sp**-1.5 - 1.5 * p * sp**-2.5 * dsp
        return k, dk_dtheta / np.sqrt(sp)

    def curvature(self, xi):
        """Return (K, dK/dxi) at arclength ``xi``."""
        return self._curvature_theta(self.theta_of_xi(xi))

    def point(self, xi):
        th = self.theta_of_xi(xi)
        r = self.radius(th)
        return np.stack([r * np.cos(th), r * np.sin(th)], axis=-1)

    def frame(self, xi):
        """Return (point, unit tangent, inward unit normal) at arclength ``xi``."""
        th = self.theta_of_xi(xi)
        r = self.radius(th)
        r1 = self.radius(th, 1)
        c, s = np.cos(th), np.sin(th)
        dz = np.stack([r1 * c - r * s, r1 * s + r * c], axis=-1)
        tangent = dz / np.linalg.norm(dz, axis=-1, keepdims=True)
        normal = np.stack([-tangent[..., 1], tangent[..., 0]], axis=-1)
        point = np.stack([r * c, r * s], axis=-1)
        return point, tangent, normal

    def wrap(self, xi):
        return np.mod(xi, self.length)

    def arc_difference(self, xi1, xi0):
        """Signed periodic difference xi1 - xi0 mapped into [-L/2, L/2)."""
        d = np.asarray(xi1) - np.asarray(xi0)
        return (d + 0.5 * self.length) % self.length - 0.5 * self.length

    def shape_hash(self):
        import hashlib

        text = f"{self.shape.describe()}|delta={self.delta!r}|res={self.resolution}"
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def build_boundary(shape, delta, resolution=512):
    """Tabulate the boundary of ``Omega_delta = Omega/delta``.

    Raises NonStarShaped if the radial function is not strictly positive and
    ResolutionTooLow if the discrete Gauss-Bonnet identity fails at 1e-6.
    """
    if resolution < 64:
        raise ResolutionTooLow(f"resolution {resolution} < 64")
    if delta <= 0:
        raise ValueError("delta must be positive")
    theta = TWO_PI * np.arange(resolution) / resolution
    dense = TWO_PI * np.arange(8 * resolution) / (8 * resolution)
    r_dense = shape.radial(dense)
    if np.any(r_dense <= 0) or np.any(~np.isfinite(r_dense)):
        raise NonStarShaped(f"radial function of {shape.describe()} is not strictly positive")
    radius = TrigSeries(shape.radial(theta) / delta)
    r, r1 = radius(theta), radius(theta, 1)
    speed = TrigSeries(np.sqrt(r * r + r1 * r1))
    length = TWO_PI * speed.mean
    xi_tab = speed.integral(theta)
    area = 0.5 * TWO_PI * np.mean(r * r)

    curve = BoundaryCurve(
        shape=shape,
        delta=float(delta),
        resolution=int(resolution),
        radius_series=radius,
        speed_series=speed,
        length=float(length),
        theta_table=theta,
        xi_table=xi_tab,
        curvature_table=np.empty(0),
        curvature_slope_table=np.empty(0),
        area=float(area),
    )
    curve._inverse = PchipInterpolator(
        np.append(xi_tab, length), np.append(theta, TWO_PI), extrapolate=True
    )
    k, kp = curve._curvature_theta(theta)
    curve.curvature_table = k
    curve.curvature_slope_table = kp
    # trapezoid in theta is spectrally accurate for the periodic integrand K * dxi/dtheta
    total_turning = TWO_PI * np.mean(k * speed(theta))
    if abs(total_turning - TWO_PI) > 1e-6 * TWO_PI:
        raise ResolutionTooLow(
            f"Gauss-Bonnet check failed: int K dxi = {total_turning:.12g} at resolution {resolution}"
        )
    return curve


def curvature_and_derivative(curve, xi):
    return curve.curvature(xi)


def boundary_frame(curve, xi):
    return curve.frame(xi)


@dataclass(frozen=True)
class InterfaceGeometry:
    """Semicircular interface of radius ``rho`` centred at ``z(xi)``."""

    xi: float
    center: np.ndarray
    rho: float
    tangent: np.ndarray
    normal: np.ndarray

    @classmethod
    def at(cls, curve, xi, rho):
        p, t, n = curve.frame(float(xi))
        return cls(float(xi), p, float(rho), t, n)


def signed_distance(geom, x):
    """r = |x - z| - rho; negative inside the half-disk where u -> -1."""
    x = np.asarray(x, dtype=float)
    return np.linalg.norm(x - geom.center, axis=-1) - geom.rho
