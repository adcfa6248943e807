"""Differential geometry of periodic graph surfaces on a uniform grid.

The film surface is the graph of a height field h sampled on an n-by-n
grid over the periodic square (0, ell)^2.  All derivatives use
second-order central differences with wrap-around indexing, so every
derived field is itself periodic.  The curvature sum is assembled in
divergence form, -div(Dh / sqrt(1 + |Dh|^2)), because that stencil
telescopes: its grid mean vanishes identically up to roundoff for any
profile.  The algebraically expanded curvature is kept as a separate
field for cross-checking; the two agree to discretization order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GridSpec",
    "GridProfile",
    "SurfaceGeometry",
    "differentiate",
    "sobolev_w2p_norm",
    "lipschitz_seminorm",
    "save_profile",
    "load_profile",
    "grid_gradient",
    "grid_divergence",
    "grid_laplacian",
    "grid_hessian",
]


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic sampling of the square (0, ell)^2."""

    ell: float
    n: int

    def __post_init__(self):
        if not (self.ell > 0):
            raise ValueError(f"side length must be positive, got ell={self.ell}")
        if self.n < 8:
            raise ValueError(f"need at least 8 samples per axis, got n={self.n}")

    @property
    def spacing(self) -> float:
        return self.ell / self.n

    def coords(self) -> np.ndarray:
        """1d sample coordinates, shared by both axes."""
        return self.spacing * np.arange(self.n)

    def meshgrid(self):
        x = self.coords()
        return np.meshgrid(x, x, indexing="ij")


@dataclass(frozen=True)
class GridProfile:
    """Sampled height field over a GridSpec.  values[i, j] = h(i*d, j*d)."""

    spec: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.spec.n, self.spec.n):
            raise ValueError(
                f"profile shape {v.shape} does not match grid n={self.spec.n}"
            )
        if not np.isfinite(v).all():
            bad = np.argwhere(~np.isfinite(v))[0]
            raise ValueError(
                f"non-finite height at grid index ({int(bad[0])}, {int(bad[1])})"
            )
        object.__setattr__(self, "values", v)

    def is_admissible(self) -> bool:
        """Nonnegative heights (membership in the admissible class)."""
        return bool(self.values.min() >= 0.0)

    def shifted(self, delta: float) -> "GridProfile":
        return GridProfile(self.spec, self.values + delta)


# -- periodic central-difference stencils -----------------------------------
#
# Axis 0 is the first spatial coordinate.  np.roll(f, -1, axis)[i] = f[i+1],
# so (roll(f,-1) - roll(f,+1)) / (2 d) is the periodic central difference.


def _d(f: np.ndarray, axis: int, d: float) -> np.ndarray:
    return (np.roll(f, -1, axis=axis) - np.roll(f, 1, axis=axis)) / (2.0 * d)


def _d2(f: np.ndarray, axis: int, d: float) -> np.ndarray:
    return (np.roll(f, -1, axis=axis) - 2.0 * f + np.roll(f, 1, axis=axis)) / (d * d)


def grid_gradient(values: np.ndarray, spacing: float) -> np.ndarray:
    """Periodic gradient, shape (n, n, 2)."""
    return np.stack([_d(values, 0, spacing), _d(values, 1, spacing)], axis=-1)


def grid_divergence(field2: np.ndarray, spacing: float) -> np.ndarray:
    """Periodic divergence of an (n, n, 2) field."""
    return _d(field2[..., 0], 0, spacing) + _d(field2[..., 1], 1, spacing)


def grid_laplacian(values: np.ndarray, spacing: float) -> np.ndarray:
    return _d2(values, 0, spacing) + _d2(values, 1, spacing)


def grid_hessian(values: np.ndarray, spacing: float) -> np.ndarray:
    """Periodic Hessian, shape (n, n, 2, 2), exactly symmetric."""
    h11 = _d2(values, 0, spacing)
    h22 = _d2(values, 1, spacing)
    h12 = _d(_d(values, 0, spacing), 1, spacing)
    hess = np.empty(values.shape + (2, 2))
    hess[..., 0, 0] = h11
    hess[..., 1, 1] = h22
    hess[..., 0, 1] = h12
    hess[..., 1, 0] = h12
    return hess


@dataclass(frozen=True)
class SurfaceGeometry:
    """Pointwise geometric fields of the graph surface of a profile.

    curvature_sum holds the divergence-form curvature (grid mean zero);
    curvature_sum_expanded holds the expanded formula
    -lap(h)/J + <D2h Dh, Dh>/J^3, which equals the trace of the shape
    operator exactly and differs from the divergence form by O(spacing^2).
    """

    grad: np.ndarray
    hess: np.ndarray
    area_elem: np.ndarray
    normal: np.ndarray
    curvature_sum: np.ndarray
    curvature_sum_expanded: np.ndarray
    shape_norm_sq: np.ndarray


def differentiate(h: GridProfile) -> SurfaceGeometry:
    """Compute gradient, Hessian, area element, normal and curvatures.

    The shape operator of the graph is S = -(I - Dh x Dh / J^2) D2h / J;
    its trace is the expanded curvature sum and trace(S^2) is the sum of
    squared principal curvatures.
    """
    d = h.spec.spacing
    v = h.values
    grad = grid_gradient(v, d)
    hess = grid_hessian(v, d)
    grad_sq = np.einsum("...k,...k->...", grad, grad)
    area = np.sqrt(1.0 + grad_sq)

    normal = np.empty(v.shape + (3,))
    normal[..., :2] = -grad / area[..., None]
    normal[..., 2] = 1.0 / area

    # Divergence-form curvature: telescopes to exact zero mean.
    flux = grad / area[..., None]
    curv = -grid_divergence(flux, d)

    # Shape operator S = -(I - Dh x Dh / J^2) D2h / J (Sherman-Morrison).
    proj = np.zeros(v.shape + (2, 2))
    proj[..., 0, 0] = 1.0
    proj[..., 1, 1] = 1.0
    proj -= np.einsum("...i,...j->...ij", grad, grad) / (area**2)[..., None, None]
    shape_op = -np.einsum("...ik,...kj->...ij", proj, hess) / area[..., None, None]
    curv_expanded = np.einsum("...ii->...", shape_op)
    shape_norm_sq = np.einsum("...ij,...ji->...", shape_op, shape_op)

    return SurfaceGeometry(
        grad=grad,
        hess=hess,
        area_elem=area,
        normal=normal,
        curvature_sum=curv,
        curvature_sum_expanded=curv_expanded,
        shape_norm_sq=shape_norm_sq,
    )


def sobolev_w2p_norm(h: GridProfile, p: float) -> float:
    """Discrete W^{2,p} norm by midpoint quadrature of |h|, |Dh|, |D2h|.

    |Dh| is the euclidean norm of the gradient and |D2h| the Frobenius
    norm of the Hessian, both from the central-difference stencils.
    """
    if not (p > 2):
        raise ValueError(f"exponent must satisfy p > 2, got p={p}")
    d = h.spec.spacing
    grad = grid_gradient(h.values, d)
    hess = grid_hessian(h.values, d)
    grad_norm = np.sqrt(np.einsum("...k,...k->...", grad, grad))
    hess_norm = np.sqrt(np.einsum("...ij,...ij->...", hess, hess))
    total = np.sum(
        (np.abs(h.values) ** p + grad_norm**p + hess_norm**p) * d * d
    )
    return float(total ** (1.0 / p))


def lipschitz_seminorm(h: GridProfile) -> float:
    """Maximum pointwise euclidean norm of the discrete gradient."""
    grad = grid_gradient(h.values, h.spec.spacing)
    return float(np.sqrt(np.einsum("...k,...k->...", grad, grad)).max())


# -- structured-grid text format --------------------------------------------


def save_profile(h: GridProfile, path) -> None:
    """Write 'ell n' header then n rows of n heights, row-major."""
    with open(path, "w") as f:
        f.write(f"{h.spec.ell:.17g} {h.spec.n}\n")
        for row in h.values:
            f.write(" ".join(f"{x:.17g}" for x in row) + "\n")


def load_profile(path) -> GridProfile:
    with open(path) as f:
        header = f.readline().split()
        if len(header) != 2:
            raise ValueError(f"{path}: malformed header, expected 'ell n'")
        ell, n = float(header[0]), int(header[1])
        values = np.loadtxt(f, ndmin=2)
    if values.shape != (n, n):
        raise ValueError(
            f"{path}: expected {n}x{n} heights, got shape {values.shape}"
        )
    return GridProfile(GridSpec(ell, n), values)
