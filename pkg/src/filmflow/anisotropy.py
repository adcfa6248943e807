"""Surface-tension densities: positively one-homogeneous, C2 away from 0.

Three built-in families:

* ``isotropic``: psi(xi) = |xi|.
* ``cubic(a)``: psi(xi) = |xi| (1 + a (xi1^4 + xi2^4 + xi3^4)/|xi|^4),
  strictly convex for small a, losing tangential convexity as a grows.
* ``faceted(beta, gamma, smoothing)``: a smoothed crystalline density
  whose Wulff boundary carries an approximately flat horizontal facet of
  radius ~beta at height gamma = psi(e3),

      psi(xi) = gamma * sqrt(xi3^2 + s^2 |xi_h|^2)
              + beta * |xi_h|^4 / (|xi_h|^3 + s^3 |xi|^3),

  with xi_h the horizontal pair and s the smoothing.  The second term
  vanishes to third order on the vertical axis, so the tangential
  Hessian at e3 is gamma*s^2 (degenerate as s -> 0), while away from a
  polar cap of width ~s it restores the cone growth beta*|xi_h| that
  supports the facet.  Support planes of the smoothed density are
  violated by the facet by at most ~beta*s, which ``facet_tol`` records.

All evaluation routines broadcast over leading axes: xi may have shape
(..., 3).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

__all__ = [
    "Anisotropy",
    "WulffReport",
    "tangential_convexity",
    "wulff_facet_test",
]

_EYE3 = np.eye(3)
_EYE_H = np.diag([1.0, 1.0, 0.0])


def _norm(xi):
    return np.sqrt(np.einsum("...k,...k->...", xi, xi))


def _check_nonzero(xi):
    r = _norm(xi)
    if np.any(r == 0.0):
        raise ValueError("anisotropy is undefined at xi = 0")
    return r


@dataclass(frozen=True)
class Anisotropy:
    """A one-homogeneous surface-tension density with derivatives.

    ``bound_constant`` is the family's constant c in
    |xi|/c <= psi(xi) <= c |xi|.  ``facet_tol`` is only set by the
    faceted family: the support-plane slack its smoothing introduces.
    """

    family: str
    cubic_a: float = 0.0
    facet_beta: float = 0.0
    facet_gamma: float = 0.0
    smoothing: float = 0.0
    bound_constant: float = 1.0
    facet_tol: Optional[float] = None

    # -- constructors --------------------------------------------------

    @classmethod
    def isotropic(cls) -> "Anisotropy":
        return cls(family="isotropic", bound_constant=1.0)

    @classmethod
    def cubic(cls, a: float) -> "Anisotropy":
        lo = 1.0 + min(a, a / 3.0)
        hi = 1.0 + max(a, a / 3.0)
        if lo <= 0:
            raise ValueError(f"cubic coefficient a={a} makes the density vanish")
        return cls(family="cubic", cubic_a=a, bound_constant=max(hi, 1.0 / lo))

    @classmethod
    def faceted(
        cls, beta: float, gamma: float, smoothing: Optional[float] = None
    ) -> "Anisotropy":
        if beta <= 0 or gamma <= 0:
            raise ValueError("facet radius and height must be positive")
        s = 1e-3 * gamma if smoothing is None else smoothing
        if not (0 < s < 1):
            raise ValueError(f"smoothing must lie in (0, 1), got {s}")
        c = max(beta + gamma, 1.0 / (gamma * s))
        return cls(
            family="faceted",
            facet_beta=beta,
            facet_gamma=gamma,
            smoothing=s,
            bound_constant=c,
            facet_tol=beta * s,
        )

    # -- evaluation ----------------------------------------------------

    def evaluate(self, xi: np.ndarray) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        r = _check_nonzero(xi)
        if self.family == "isotropic":
            return r
        if self.family == "cubic":
            q = np.einsum("...k->...", xi**4)
            return r + self.cubic_a * q / r**3
        if self.family == "faceted":
            s = self.smoothing
            rh2 = xi[..., 0] ** 2 + xi[..., 1] ** 2
            v = np.sqrt(xi[..., 2] ** 2 + s * s * rh2)
            num = rh2 * rh2
            den = rh2**1.5 + (s * r) ** 3
            return self.facet_gamma * v + self.facet_beta * num / den
        raise ValueError(f"unknown anisotropy family {self.family!r}")

    def gradient(self, xi: np.ndarray) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        r = _check_nonzero(xi)
        if self.family == "isotropic":
            return xi / r[..., None]
        if self.family == "cubic":
            a = self.cubic_a
            q = np.einsum("...k->...", xi**4)
            return (
                xi / r[..., None]
                + 4.0 * a * xi**3 / (r**3)[..., None]
                - 3.0 * a * (q / r**5)[..., None] * xi
            )
        if self.family == "faceted":
            s = self.smoothing
            xih = xi.copy()
            xih[..., 2] = 0.0
            rh2 = xi[..., 0] ** 2 + xi[..., 1] ** 2
            rh = np.sqrt(rh2)
            # vertical part v = |A1 xi|, A1 = diag(s, s, 1)
            a1xi = np.concatenate(
                [s * s * xi[..., :2], xi[..., 2:3]], axis=-1
            )
            v = np.sqrt(xi[..., 2] ** 2 + s * s * rh2)
            dv = a1xi / v[..., None]
            # facet part q = N / M with N = rh^4, M = rh^3 + s^3 r^3
            num = rh2 * rh2
            den = rh2 * rh + (s * r) ** 3
            dnum = 4.0 * rh2[..., None] * xih
            dden = 3.0 * rh[..., None] * xih + 3.0 * s**3 * r[..., None] * xi
            dq = dnum / den[..., None] - (num / den**2)[..., None] * dden
            return self.facet_gamma * dv + self.facet_beta * dq
        raise ValueError(f"unknown anisotropy family {self.family!r}")

    def hessian(self, xi: np.ndarray) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        r = _check_nonzero(xi)
        outer = np.einsum("...i,...j->...ij", xi, xi)
        if self.family == "isotropic":
            return _EYE3 / r[..., None, None] - outer / (r**3)[..., None, None]
        if self.family == "cubic":
            a = self.cubic_a
            q = np.einsum("...k->...", xi**4)
            cube = xi**3
            mix = np.einsum("...i,...j->...ij", cube, xi)
            diag_sq = (xi**2)[..., :, None] * _EYE3
            hess = _EYE3 / r[..., None, None] - outer / (r**3)[..., None, None]
            hess = hess + 12.0 * a * diag_sq / (r**3)[..., None, None]
            hess = hess - 12.0 * a * (mix + np.swapaxes(mix, -1, -2)) / (r**5)[..., None, None]
            hess = hess - 3.0 * a * (q / r**5)[..., None, None] * _EYE3
            hess = hess + 15.0 * a * (q / r**7)[..., None, None] * outer
            return hess
        if self.family == "faceted":
            s = self.smoothing
            xih = xi.copy()
            xih[..., 2] = 0.0
            outer_h = np.einsum("...i,...j->...ij", xih, xih)
            rh2 = xi[..., 0] ** 2 + xi[..., 1] ** 2
            rh = np.sqrt(rh2)
            a1xi = np.concatenate([s * s * xi[..., :2], xi[..., 2:3]], axis=-1)
            v = np.sqrt(xi[..., 2] ** 2 + s * s * rh2)
            a1 = np.diag([s * s, s * s, 1.0])
            d2v = a1 / v[..., None, None] - np.einsum(
                "...i,...j->...ij", a1xi, a1xi
            ) / (v**3)[..., None, None]
            num = rh2 * rh2
            den = rh2 * rh + (s * r) ** 3
            dnum = 4.0 * rh2[..., None] * xih
            dden = 3.0 * rh[..., None] * xih + 3.0 * s**3 * r[..., None] * xi
            d2num = 8.0 * outer_h + 4.0 * rh2[..., None, None] * _EYE_H
            # D2(rh^3) = 3 (xih x xih / rh + rh I_h); limit 0 on the axis
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(rh > 0, 1.0 / np.where(rh > 0, rh, 1.0), 0.0)
            d2rh3 = 3.0 * (outer_h * ratio[..., None, None] + rh[..., None, None] * _EYE_H)
            d2r3 = 3.0 * (outer / r[..., None, None] + r[..., None, None] * _EYE3)
            d2den = d2rh3 + s**3 * d2r3
            cross = np.einsum("...i,...j->...ij", dnum, dden)
            d2q = (
                d2num / den[..., None, None]
                - (cross + np.swapaxes(cross, -1, -2)) / (den**2)[..., None, None]
                - (num / den**2)[..., None, None] * d2den
                + 2.0
                * (num / den**3)[..., None, None]
                * np.einsum("...i,...j->...ij", dden, dden)
            )
            return self.facet_gamma * d2v + self.facet_beta * d2q
        raise ValueError(f"unknown anisotropy family {self.family!r}")

    # convenience for graph surfaces: psi and derivatives at (-Dh, 1)

    def on_graph(self, grad_h: np.ndarray):
        """Evaluate (psi, Dpsi) at xi = (-Dh, 1) for an (n, n, 2) gradient."""
        xi = np.empty(grad_h.shape[:-1] + (3,))
        xi[..., :2] = -grad_h
        xi[..., 2] = 1.0
        return self.evaluate(xi), self.gradient(xi)


def _tangent_basis(xi: np.ndarray):
    e = np.array([1.0, 0.0, 0.0]) if abs(xi[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    w1 = e - np.dot(e, xi) * xi
    w1 /= np.linalg.norm(w1)
    w2 = np.cross(xi, w1)
    return w1, w2


def tangential_convexity(psi: Anisotropy, xi: np.ndarray) -> float:
    """Smallest eigenvalue of D2 psi(xi) restricted to the plane xi-perp.

    xi must be a unit vector.  Computed exactly from the restricted 2x2
    matrix; invariant under the choice of orthonormal basis.
    """
    xi = np.asarray(xi, dtype=float)
    if abs(np.linalg.norm(xi) - 1.0) > 1e-9:
        raise ValueError("tangential_convexity expects a unit direction")
    w1, w2 = _tangent_basis(xi)
    hess = psi.hessian(xi)
    m11 = w1 @ hess @ w1
    m22 = w2 @ hess @ w2
    m12 = w1 @ hess @ w2
    half_tr = 0.5 * (m11 + m22)
    disc = np.sqrt(0.25 * (m11 - m22) ** 2 + m12**2)
    return float(half_tr - disc)


@dataclass(frozen=True)
class WulffReport:
    facet_found: bool
    facet_radius: float
    facet_height: float
    min_tangential_eigenvalue: float

    def __post_init__(self):
        if self.facet_found and not (self.facet_radius > 0 and self.facet_height > 0):
            raise ValueError("a found facet must have positive radius and height")


def _fibonacci_sphere(samples: int) -> np.ndarray:
    k = np.arange(samples)
    z = 1.0 - 2.0 * (k + 0.5) / samples
    phi = k * np.pi * (3.0 - np.sqrt(5.0))
    rho = np.sqrt(1.0 - z * z)
    return np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=-1)


def wulff_facet_test(psi: Anisotropy, samples: int = 2000, tol: float = 1e-8) -> WulffReport:
    """Probe the Wulff shape for a horizontal facet at height psi(e3).

    Support planes are sampled on a Fibonacci sphere.  A candidate disk
    {|x| <= beta, y = gamma} is accepted when all of its rim points
    satisfy z . nu <= psi(nu) + tol against every sampled plane; the
    largest such beta is found by bisection.  The facet is reported as
    found when that radius exceeds 5% of the height.  For densities
    smoothed from a crystalline one, pass the family's ``facet_tol`` as
    ``tol`` (the smoothing perturbs support planes by that much).
    """
    if samples < 1000:
        raise ValueError("need at least 1000 sampled directions")
    dirs = _fibonacci_sphere(samples)
    psivals = psi.evaluate(dirs)
    gamma = float(psi.evaluate(np.array([0.0, 0.0, 1.0])))

    azimuths = np.linspace(0.0, 2.0 * np.pi, 16, endpoint=False)
    rim_unit = np.stack(
        [np.cos(azimuths), np.sin(azimuths), np.zeros_like(azimuths)], axis=-1
    )

    def disk_ok(beta: float) -> bool:
        pts = beta * rim_unit
        pts[:, 2] = gamma
        worst = np.max(pts @ dirs.T - psivals[None, :])
        return bool(worst <= tol)

    if not disk_ok(0.0):  # apex itself outside the Wulff shape
        beta = 0.0
    else:
        hi = float(np.max(psivals))
        if disk_ok(hi):
            beta = hi
        else:
            lo = 0.0
            for _ in range(50):
                mid = 0.5 * (lo + hi)
                if disk_ok(mid):
                    lo = mid
                else:
                    hi = mid
            beta = lo

    # tangential convexity spectrum over the same sampled directions
    min_eig = min(tangential_convexity(psi, d) for d in dirs)

    return WulffReport(
        facet_found=bool(beta >= 0.05 * gamma),
        facet_radius=beta,
        facet_height=gamma,
        min_tangential_eigenvalue=min_eig,
    )
