"""Configuration energy, incremental objective, and its first variation.

The total energy of a configuration is

    F(h, u) = elastic(u) + int_Q psi(-Dh, 1) dx
            + (eps/p) int_Q |H|^p J dx,

where the anisotropic surface integral has been converted to Q by
one-homogeneity of psi and H, J come from the geometry module.  One
incremental step adds the penalization

    P(h) = 1/(2 tau) int_Q (h - h_prev)^2 / J_prev dx,

with the area weight lagged to the previous profile.

``first_variation`` returns the exact gradient of the *discrete*
objective: every stencil that enters the energy is transposed exactly
(central differences are skew-adjoint on the periodic grid, second
differences self-adjoint), so pairing the returned field against any
test field reproduces the directional derivative of the grid functional
to roundoff.  The elastic term follows the frozen-displacement
convention: it contributes the surface trace of the energy density of
the supplied state, and re-solves happen only between outer iterations
of the step solver.  The classical coordinate form of the stationarity
condition, which expands the curvature instead of keeping it in
divergence form, is provided as ``first_variation_expanded`` for
cross-checks; the two fields agree to discretization order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from filmflow.anisotropy import Anisotropy
from filmflow.elasticity import ElasticState
from filmflow.geometry import (
    GridProfile,
    differentiate,
    grid_divergence,
    grid_gradient,
    grid_hessian,
    grid_laplacian,
)

__all__ = [
    "RegularizationParams",
    "EnergyBreakdown",
    "surface_energy",
    "total_energy",
    "penalization",
    "first_variation",
    "first_variation_pairing",
    "first_variation_expanded",
    "l2_norm",
]


@dataclass(frozen=True)
class RegularizationParams:
    """Curvature regularization (eps, p), time step tau, gradient bound."""

    epsilon: float
    p: float
    tau: float
    lambda0: float

    def __post_init__(self):
        if not (self.epsilon > 0):
            raise ValueError("epsilon must be positive")
        if not (self.p > 2):
            raise ValueError(f"curvature exponent must satisfy p > 2, got {self.p}")
        if not (self.tau > 0):
            raise ValueError("time step must be positive")
        if not (self.lambda0 > 0):
            raise ValueError("gradient bound must be positive")


@dataclass(frozen=True)
class EnergyBreakdown:
    elastic: float
    surface_aniso: float
    surface_reg: float
    penalization: float
    total: float

    def __post_init__(self):
        parts = self.elastic + self.surface_aniso + self.surface_reg
        if abs(self.total - parts) > 1e-12 * max(1.0, abs(parts)):
            raise ValueError("total energy must equal the sum of its parts")

    @classmethod
    def build(cls, elastic, surface_aniso, surface_reg, pen=0.0):
        return cls(
            elastic=float(elastic),
            surface_aniso=float(surface_aniso),
            surface_reg=float(surface_reg),
            penalization=float(pen),
            total=float(elastic + surface_aniso + surface_reg),
        )

    def csv_row(self, step: int, time: float) -> str:
        cols = (
            self.elastic,
            self.surface_aniso,
            self.surface_reg,
            self.penalization,
            self.total,
        )
        return f"{step},{time:.17g}," + ",".join(f"{x:.17g}" for x in cols)


def l2_norm(fld: np.ndarray, spacing: float) -> float:
    return float(np.sqrt(np.sum(fld * fld) * spacing * spacing))


def _signed_power(hfield: np.ndarray, p: float) -> np.ndarray:
    """|H|^{p-2} H, continuous at 0 for p > 2."""
    return np.sign(hfield) * np.abs(hfield) ** (p - 1.0)


def surface_energy(h: GridProfile, psi: Anisotropy, params: RegularizationParams) -> EnergyBreakdown:
    """Anisotropic part int_Q psi(-Dh, 1) dx plus curvature part."""
    d = h.spec.spacing
    geom = differentiate(h)
    psi_vals, _ = psi.on_graph(geom.grad)
    aniso = float(np.sum(psi_vals) * d * d)
    reg = float(
        (params.epsilon / params.p)
        * np.sum(np.abs(geom.curvature_sum) ** params.p * geom.area_elem)
        * d
        * d
    )
    return EnergyBreakdown.build(0.0, aniso, reg)


def total_energy(
    h: GridProfile,
    state: Optional[ElasticState],
    psi: Anisotropy,
    params: RegularizationParams,
) -> EnergyBreakdown:
    if state is not None and not np.array_equal(state.profile.values, h.values):
        raise ValueError("elastic state does not belong to this profile")
    surf = surface_energy(h, psi, params)
    elastic = 0.0 if state is None else state.energy
    return EnergyBreakdown.build(elastic, surf.surface_aniso, surf.surface_reg)


def penalization(
    h: GridProfile,
    h_prev: GridProfile,
    tau: float,
    j_prev: Optional[np.ndarray] = None,
) -> float:
    """Weighted squared L2 distance (1/2tau) int (h - h_prev)^2 / J_prev dx.

    The lagged area element J_prev may be passed in to avoid
    recomputing the previous profile's geometry in inner loops.
    """
    if tau <= 0:
        raise ValueError("penalization requires tau > 0")
    if h.spec != h_prev.spec:
        raise ValueError("profiles live on different grids")
    d = h.spec.spacing
    if j_prev is None:
        j_prev = differentiate(h_prev).area_elem
    diff = h.values - h_prev.values
    return float(np.sum(diff * diff / j_prev) * d * d / (2.0 * tau))


def _regularization_flux(h: GridProfile, params: RegularizationParams):
    """Shared pieces of the curvature-term variation in divergence form.

    Returns (geom, b) where b is the vector field whose pairing with
    D(phi) gives the exact derivative of the discrete curvature energy:
    the energy is (eps/p) sum |H|^p J with H = -div(Dh/J), so along a
    perturbation phi,

        dH = -div(Dphi/J - Dh <Dh, Dphi>/J^3),
        dJ = <Dh, Dphi>/J,

    and transposing the outer divergence against eps |H|^{p-2} H J
    collects everything into one vector field.
    """
    d = h.spec.spacing
    geom = differentiate(h)
    grad = geom.grad
    j = geom.area_elem
    w = _signed_power(geom.curvature_sum, params.p)
    v = grid_gradient(params.epsilon * w * j, d)  # v_k = D_k(eps w J)
    v_dot_grad = np.einsum("...k,...k->...", v, grad)
    b = (
        v / j[..., None]
        - (v_dot_grad / j**3)[..., None] * grad
        + (params.epsilon / params.p)
        * (np.abs(geom.curvature_sum) ** params.p / j)[..., None]
        * grad
    )
    return geom, b


def first_variation(
    h: GridProfile,
    psi: Anisotropy,
    params: RegularizationParams,
    state: Optional[ElasticState] = None,
    h_prev: Optional[GridProfile] = None,
    j_prev: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Gradient field of the incremental objective at h.

    Terms included: surface trace of the elastic density (when a state
    is given, frozen-displacement convention), the anisotropy term in
    divergence form, the curvature-regularization terms, and the
    velocity term (h - h_prev)/(tau J_prev) (when h_prev is given).
    Pairing the result with any phi via sum(g phi) dx^2 equals the
    directional derivative of the discrete objective.
    """
    d = h.spec.spacing
    geom, b = _regularization_flux(h, params)
    _, dpsi = psi.on_graph(geom.grad)
    g = grid_divergence(dpsi[..., :2], d) - grid_divergence(b, d)
    if state is not None:
        g = g + state.surface_trace
    if h_prev is not None:
        if j_prev is None:
            j_prev = differentiate(h_prev).area_elem
        g = g + (h.values - h_prev.values) / (params.tau * j_prev)
    return g


def first_variation_pairing(
    h: GridProfile,
    psi: Anisotropy,
    params: RegularizationParams,
    phi: np.ndarray,
    state: Optional[ElasticState] = None,
    h_prev: Optional[GridProfile] = None,
) -> float:
    """Directional derivative assembled term by term against phi.

    Same stencils as ``first_variation`` but paired directly with the
    derivatives of phi, without transposition; agrees with
    sum(first_variation * phi) dx^2 to roundoff.
    """
    d = h.spec.spacing
    geom, b = _regularization_flux(h, params)
    _, dpsi = psi.on_graph(geom.grad)
    dphi = grid_gradient(phi, d)
    total = -np.sum(np.einsum("...k,...k->...", dpsi[..., :2], dphi))
    total += np.sum(np.einsum("...k,...k->...", b, dphi))
    if state is not None:
        total += np.sum(state.surface_trace * phi)
    if h_prev is not None:
        j_prev = differentiate(h_prev).area_elem
        total += np.sum((h.values - h_prev.values) / (params.tau * j_prev) * phi)
    return float(total * d * d)


def first_variation_expanded(
    h: GridProfile,
    psi: Anisotropy,
    params: RegularizationParams,
    state: Optional[ElasticState] = None,
    h_prev: Optional[GridProfile] = None,
) -> np.ndarray:
    """Stationarity field in the expanded coordinate form.

    The curvature terms are written out against the test function as
    W phi, <Dpsi, (-Dphi, 0)>, (eps/p)|H|^p <Dh,Dphi>/J, the four
    |H|^{p-2}H terms in lap(phi), <D2phi Dh, Dh>/J^2, lap(h)<Dh,Dphi>/J^2
    and <D2h Dh, Dphi>/J^2, the coefficient-3 term in J^4, and the
    velocity; each is transposed with the matching stencil.  Useful as a
    consistency check: differs from ``first_variation`` by O(spacing^2).
    """
    d = h.spec.spacing
    eps, p = params.epsilon, params.p
    geom = differentiate(h)
    grad, j = geom.grad, geom.area_elem
    hess = geom.hess
    curv = geom.curvature_sum
    w = _signed_power(curv, p)
    lap_h = grid_laplacian(h.values, d)
    hess_grad = np.einsum("...kl,...l->...k", hess, grad)
    hgg = np.einsum("...k,...k->...", hess_grad, grad)

    _, dpsi = psi.on_graph(grad)
    g = grid_divergence(dpsi[..., :2], d)
    g = g - grid_divergence(((eps / p) * np.abs(curv) ** p / j)[..., None] * grad, d)

    # -eps w lap(phi): second-difference stencil is self-adjoint
    g = g - eps * grid_laplacian(w, d)
    # +eps w <D2phi Dh, Dh>/J^2: adjoint of each Hessian entry stencil
    m = (eps * w / j**2)[..., None, None] * np.einsum("...k,...l->...kl", grad, grad)
    g = g + _hessian_adjoint(m, d)
    # +eps w lap(h) <Dh, Dphi>/J^2 and +2 eps w <D2h Dh, Dphi>/J^2
    g = g - grid_divergence((eps * w * lap_h / j**2)[..., None] * grad, d)
    g = g - grid_divergence(2.0 * (eps * w / j**2)[..., None] * hess_grad, d)
    # -3 eps w <D2h Dh, Dh> <Dh, Dphi>/J^4
    g = g + grid_divergence(3.0 * (eps * w * hgg / j**4)[..., None] * grad, d)

    if state is not None:
        g = g + state.surface_trace
    if h_prev is not None:
        j_prev = differentiate(h_prev).area_elem
        g = g + (h.values - h_prev.values) / (params.tau * j_prev)
    return g


def _hessian_adjoint(m: np.ndarray, spacing: float) -> np.ndarray:
    """Adjoint of phi -> sum_kl M_kl D_k D_l phi for symmetric M fields."""
    from filmflow.geometry import _d, _d2  # same stencils, transposed

    out = _d2(m[..., 0, 0], 0, spacing) + _d2(m[..., 1, 1], 1, spacing)
    out += 2.0 * _d(_d(m[..., 0, 1], 0, spacing), 1, spacing)
    return out
