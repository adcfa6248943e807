"""Quasistatic linear elasticity in the film bulk.

The film occupies {(x, y): 0 < y < h(x)} over the periodic square.  The
displacement is split as u = affine mismatch field + periodic remainder w,
with w = 0 at the substrate, so the strain is E0 + E(w) with
E0 = diag(e1, e2, 0).  The domain is mapped to the reference slab
Q x (0, 1) by (x, eta) -> (x, eta h(x)) and discretized with trilinear
hexahedra (2x2x2 Gauss points); the mesh topology is fixed along an
evolution, so index structures are cached per (n, layers).

The linear system is solved by conjugate gradients with diagonal
preconditioning to relative residual 1e-10.
"""

from __future__ import annotations

import inspect
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from filmflow.geometry import GridProfile, GridSpec

__all__ = [
    "ElasticTensor",
    "Mismatch",
    "SlabMesh",
    "ElasticState",
    "ElasticityError",
    "solve_equilibrium",
    "flat_equilibrium",
    "boundary_energy_density",
    "save_state",
]

CG_RELATIVE_TOL = 1e-10

_CG_TOL_KW = "rtol" if "rtol" in inspect.signature(spla.cg).parameters else "tol"


class ElasticityError(RuntimeError):
    pass


@dataclass(frozen=True)
class ElasticTensor:
    """Fourth-order stiffness tensor on symmetric 3x3 matrices.

    ``lame`` is set by the convenience constructor and unlocks a faster
    assembly path; a tensor built directly from c4 uses the generic one.
    """

    c4: np.ndarray = field(repr=False)
    k: float
    lame: Optional[tuple] = None

    def __post_init__(self):
        c = np.asarray(self.c4, dtype=float)
        if c.shape != (3, 3, 3, 3):
            raise ValueError("stiffness tensor must have shape (3,3,3,3)")
        if not (
            np.allclose(c, c.transpose(1, 0, 2, 3))
            and np.allclose(c, c.transpose(0, 1, 3, 2))
            and np.allclose(c, c.transpose(2, 3, 0, 1))
        ):
            raise ValueError("stiffness tensor must have minor and major symmetries")
        if not (self.k > 0):
            raise ValueError("coercivity constant must be positive")
        object.__setattr__(self, "c4", c)

    @classmethod
    def from_lame(cls, lam: float, mu: float) -> "ElasticTensor":
        if mu <= 0 or lam < 0:
            raise ValueError("need mu > 0 and lam >= 0")
        eye = np.eye(3)
        c4 = lam * np.einsum("ij,kl->ijkl", eye, eye) + mu * (
            np.einsum("ik,jl->ijkl", eye, eye) + np.einsum("il,jk->ijkl", eye, eye)
        )
        return cls(c4=c4, k=mu, lame=(float(lam), float(mu)))

    def stress(self, strain: np.ndarray) -> np.ndarray:
        return np.einsum("ijkl,...kl->...ij", self.c4, strain)

    def density(self, strain: np.ndarray) -> np.ndarray:
        """Elastic energy density W(E) = (1/2) C E : E."""
        return 0.5 * np.einsum("...ij,ijkl,...kl->...", strain, self.c4, strain)

    def scaled(self, s: float) -> "ElasticTensor":
        return ElasticTensor(c4=s * self.c4, k=s * self.k)


@dataclass(frozen=True)
class Mismatch:
    """Lattice mismatch strains (e1, e2) imposed at the substrate."""

    e0: tuple

    def __post_init__(self):
        e = tuple(float(v) for v in self.e0)
        if len(e) != 2 or any(v < 0 for v in e):
            raise ValueError("mismatch must be a pair of nonnegative strains")
        object.__setattr__(self, "e0", e)

    @property
    def is_zero(self) -> bool:
        return self.e0[0] == 0.0 and self.e0[1] == 0.0

    def base_strain(self) -> np.ndarray:
        return np.diag([self.e0[0], self.e0[1], 0.0])


@dataclass(frozen=True)
class SlabMesh:
    """Reference-slab mesh: the base grid times `layers` vertical elements."""

    spec: GridSpec
    layers: int

    def __post_init__(self):
        if self.layers < 4:
            raise ValueError(f"need at least 4 vertical layers, got {self.layers}")


@dataclass(frozen=True)
class ElasticState:
    """Discrete elastic equilibrium on the mesh of a profile.

    displacement[i, j, k] is the full displacement (mismatch affine plus
    periodic remainder) at node (i dx, j dx, (k/m) h_ij).  strain holds
    element-mean strains, energy the total elastic energy, and
    surface_trace the energy density W(Eu) extrapolated to the film
    surface at the grid points.
    """

    profile: GridProfile
    mesh: SlabMesh
    displacement: np.ndarray = field(repr=False)
    strain: np.ndarray = field(repr=False)
    energy: float
    surface_trace: np.ndarray = field(repr=False)
    cell_energy: np.ndarray = field(repr=False)
    remainder: np.ndarray = field(repr=False)  # flat dof vector, for warm starts
    cg_iterations: int = 0
    residual: float = 0.0


# -- cached mesh index structures -------------------------------------------

_GAUSS = 1.0 / np.sqrt(3.0)
# local hex node order: corners of [-1,1]^3, bottom face then top face
_LOCAL = np.array(
    [
        (-1, -1, -1),
        (1, -1, -1),
        (1, 1, -1),
        (-1, 1, -1),
        (-1, -1, 1),
        (1, -1, 1),
        (1, 1, 1),
        (-1, 1, 1),
    ],
    dtype=float,
)
_OFFSET = ((_LOCAL + 1) / 2).astype(int)  # (di, dj, dk) per local node

_GP = np.array(
    [(sx * _GAUSS, sy * _GAUSS, sz * _GAUSS)
     for sz in (-1, 1) for sy in (-1, 1) for sx in (-1, 1)]
)


def _shape_gradients():
    """Reference shape-function gradients dN[gp, a, :] on [-1,1]^3."""
    dn = np.empty((len(_GP), 8, 3))
    for g, (x, y, z) in enumerate(_GP):
        for a, (xa, ya, za) in enumerate(_LOCAL):
            dn[g, a, 0] = 0.125 * xa * (1 + y * ya) * (1 + z * za)
            dn[g, a, 1] = 0.125 * ya * (1 + x * xa) * (1 + z * za)
            dn[g, a, 2] = 0.125 * za * (1 + x * xa) * (1 + y * ya)
    return dn


_DN = _shape_gradients()

# Gauss-to-corner extrapolation for the 4 top-face corners (z = +1).
_TOP_LOCAL = (4, 5, 6, 7)


def _extrapolation_matrix():
    ex = np.empty((4, len(_GP)))
    for c, a in enumerate(_TOP_LOCAL):
        corner = _LOCAL[a]
        for g, gp in enumerate(_GP):
            w = 1.0
            for dim in range(3):
                w *= 0.5 * (1.0 + np.sign(gp[dim]) * corner[dim] * np.sqrt(3.0))
            ex[c, g] = w
    return ex


_EXTRAP = _extrapolation_matrix()

_MESH_CACHE: dict = {}


def _mesh_tables(n: int, m: int):
    """Index structures shared by every solve on an (n, m) mesh."""
    key = (n, m)
    if key in _MESH_CACHE:
        return _MESH_CACHE[key]

    ei, ej, ek = np.meshgrid(
        np.arange(n), np.arange(n), np.arange(m), indexing="ij"
    )
    ei, ej, ek = ei.ravel(), ej.ravel(), ek.ravel()
    nel = ei.size

    ii = (ei[:, None] + _OFFSET[None, :, 0]) % n          # (nel, 8)
    jj = (ej[:, None] + _OFFSET[None, :, 1]) % n
    kk = ek[:, None] + _OFFSET[None, :, 2]

    # dof numbering: k = 0 is clamped; node (i, j, k>=1) -> (k-1) n^2 + i n + j
    node = np.where(kk == 0, -1, (kk - 1) * n * n + ii * n + jj)
    edof = np.where(
        node[:, :, None] < 0, -1, 3 * node[:, :, None] + np.arange(3)
    ).reshape(nel, 24)
    ndof = 3 * n * n * m

    rows = np.broadcast_to(edof[:, :, None], (nel, 24, 24))
    cols = np.broadcast_to(edof[:, None, :], (nel, 24, 24))
    mask = (rows >= 0) & (cols >= 0)
    r = rows[mask]
    c = cols[mask]

    order = np.lexsort((c, r))
    rs, cs = r[order], c[order]
    new_entry = np.empty(rs.size, dtype=bool)
    new_entry[0] = True
    new_entry[1:] = (np.diff(rs) != 0) | (np.diff(cs) != 0)
    slot_sorted = np.cumsum(new_entry) - 1
    slots = np.empty_like(slot_sorted)
    slots[order] = slot_sorted
    nnz = int(slot_sorted[-1]) + 1
    indices = cs[new_entry]
    counts = np.bincount(rs[new_entry], minlength=ndof)
    indptr = np.concatenate([[0], np.cumsum(counts)])

    top = ek == m - 1

    tables = {
        "nel": nel,
        "ndof": ndof,
        "ii": ii,
        "jj": jj,
        "kk": kk,
        "edof": edof,
        "mask": mask,
        "slots": slots,
        "nnz": nnz,
        "indices": indices.astype(np.int32),
        "indptr": indptr.astype(np.int64),
        "top": top,
        "dof_mask": (edof >= 0),
    }
    _MESH_CACHE[key] = tables
    return tables


def _element_grads(h_values: np.ndarray, spec: GridSpec, m: int, tables):
    """Mapped shape-function gradients and weighted Jacobians per element.

    The in-plane Jacobian is constant (dx/2 per direction); only the
    vertical row varies, so the inverse is formed in closed form.
    """
    d = spec.spacing
    y_nodes = (tables["kk"] / m) * h_values[tables["ii"], tables["jj"]]  # (nel, 8)
    g = np.einsum("ea,gab->egb", y_nodes, _DN)  # (nel, ngp, 3)
    g3 = g[..., 2]
    if np.any(g3 <= 0):
        raise ElasticityError("degenerate slab mapping: film height not positive")

    grads = np.empty((tables["nel"], len(_GP), 8, 3))
    inv = 2.0 / d
    grads[..., 0] = inv * (_DN[None, :, :, 0] - (g[..., 0] / g3)[..., None] * _DN[None, :, :, 2])
    grads[..., 1] = inv * (_DN[None, :, :, 1] - (g[..., 1] / g3)[..., None] * _DN[None, :, :, 2])
    grads[..., 2] = _DN[None, :, :, 2] / g3[..., None]
    detw = (d / 2.0) ** 2 * g3  # Gauss weights are 1
    return grads, detw


def _assemble(h: GridProfile, tensor: ElasticTensor, mismatch: Mismatch, mesh: SlabMesh):
    tables = _mesh_tables(h.spec.n, mesh.layers)
    grads, detw = _element_grads(h.values, h.spec, mesh.layers, tables)
    nel = tables["nel"]

    # K_e[ai, bj] = sum_gp detw C[i,k,j,l] G_ak G_bl
    x = np.sqrt(detw)[..., None, None] * grads  # (nel, ngp, 8, 3)
    if tensor.lame is not None:
        # lam G_ai G_bj + mu G_aj G_bi + mu delta_ij G_ak G_bk
        lam, mu = tensor.lame
        xf = x.reshape(nel, len(_GP), 24)
        outer = np.matmul(xf.transpose(0, 2, 1), xf)  # sum_g X_ai X_bj
        ke = lam * outer
        ke += mu * outer.reshape(nel, 8, 3, 8, 3).transpose(0, 1, 4, 3, 2).reshape(
            nel, 24, 24
        )
        xs = x.transpose(0, 2, 1, 3).reshape(nel, 8, -1)
        dots = np.matmul(xs, xs.transpose(0, 2, 1))  # sum_gk X_ak X_bk
        ke += (
            mu * dots[:, :, None, :, None] * np.eye(3)[None, None, :, None, :]
        ).reshape(nel, 24, 24)
    else:
        # generic tensor: batched GEMMs through P[e, 3a+i, 3i+k] = X[e, a, k]
        c99 = tensor.c4.reshape(9, 9)
        ke = np.zeros((nel, 24, 24))
        pmat = np.zeros((nel, 8, 3, 3, 3))
        for gp in range(len(_GP)):
            pmat[:] = 0.0
            for i in range(3):
                pmat[:, :, i, i, :] = x[:, gp]
            p2 = pmat.reshape(nel, 24, 9)
            ke += (p2 @ c99) @ p2.transpose(0, 2, 1)

    data = np.bincount(
        tables["slots"], weights=ke[tables["mask"]], minlength=tables["nnz"]
    )
    kmat = sp.csr_matrix(
        (data, tables["indices"], tables["indptr"]),
        shape=(tables["ndof"], tables["ndof"]),
    )

    sigma0 = tensor.stress(mismatch.base_strain())
    fe = -np.einsum("eg,ij,egaj->eai", detw, sigma0, grads).reshape(nel, 24)
    dmask = tables["dof_mask"]
    b = np.bincount(
        tables["edof"][dmask], weights=fe[dmask], minlength=tables["ndof"]
    )
    return kmat, b, grads, detw, tables


def _post_process(
    h, tensor, mismatch, mesh, w_flat, grads, detw, tables, cg_iters, resid
):
    n, m = h.spec.n, mesh.layers
    nel = tables["nel"]
    w_nodes = np.zeros((n, n, m + 1, 3))
    w_nodes[:, :, 1:, :] = w_flat.reshape(m, n, n, 3).transpose(1, 2, 0, 3)

    w_e = w_nodes[tables["ii"], tables["jj"], tables["kk"]]  # (nel, 8, 3)
    grad_w = np.einsum("eai,egaj->egij", w_e, grads)
    strain_gp = mismatch.base_strain() + 0.5 * (grad_w + np.swapaxes(grad_w, -1, -2))
    wdens = tensor.density(strain_gp)
    energy = float(np.sum(detw * wdens))
    cell_energy = (np.sum(detw * wdens, axis=1) / np.sum(detw, axis=1)).reshape(n, n, m)

    # surface trace: extrapolate top-layer Gauss strains to the surface nodes
    top = tables["top"]
    strain_c = np.einsum("cg,egij->ecij", _EXTRAP, strain_gp[top])
    wdens_c = tensor.density(strain_c)
    trace = np.zeros((n, n))
    itop = tables["ii"][top][:, _TOP_LOCAL]
    jtop = tables["jj"][top][:, _TOP_LOCAL]
    np.add.at(trace, (itop.ravel(), jtop.ravel()), wdens_c.ravel())
    trace /= 4.0

    coords = h.spec.coords()
    disp = np.zeros((n, n, m + 1, 3))
    disp[..., 0] = mismatch.e0[0] * coords[:, None, None]
    disp[..., 1] = mismatch.e0[1] * coords[None, :, None]
    disp += w_nodes

    return ElasticState(
        profile=h,
        mesh=mesh,
        displacement=disp,
        strain=strain_gp.mean(axis=1).reshape(n, n, m, 3, 3),
        energy=energy,
        surface_trace=trace,
        cell_energy=cell_energy,
        remainder=w_flat,
        cg_iterations=cg_iters,
        residual=resid,
    )


def solve_equilibrium(
    h: GridProfile,
    tensor: ElasticTensor,
    mismatch: Mismatch,
    mesh: SlabMesh,
    x0: Optional[np.ndarray] = None,
    floor: Optional[float] = None,
) -> ElasticState:
    """Minimize the elastic energy over admissible displacements on h.

    Mismatch enters through the substrate Dirichlet row; the film
    surface is traction-free (natural condition) and the in-plane
    directions are periodic.  Raises ElasticityError if the profile
    drops below the positivity floor or conjugate gradients fail to
    reach relative residual 1e-10 within 20 sqrt(#unknowns) iterations.
    """
    if mesh.spec != h.spec:
        raise ValueError("mesh and profile use different grids")
    lo = 1e-9 * h.spec.ell if floor is None else floor
    if h.values.min() < lo:
        raise ElasticityError(
            f"film height {h.values.min():g} below positivity floor {lo:g}"
        )

    kmat, b, grads, detw, tables = _assemble(h, tensor, mismatch, mesh)
    ndof = tables["ndof"]

    if mismatch.is_zero:
        w = np.zeros(ndof)
        return _post_process(h, tensor, mismatch, mesh, w, grads, detw, tables, 0, 0.0)

    diag = kmat.diagonal()
    precond = spla.LinearOperator(
        (ndof, ndof), matvec=lambda x: x / diag, dtype=float
    )
    maxiter = max(int(20 * np.sqrt(ndof)), 100)
    iters = 0

    def count(_):
        nonlocal iters
        iters += 1

    kwargs = {_CG_TOL_KW: CG_RELATIVE_TOL, "atol": 0.0}
    w, info = spla.cg(
        kmat, b, x0=x0, maxiter=maxiter, M=precond, callback=count, **kwargs
    )
    resid = float(np.linalg.norm(b - kmat @ w) / np.linalg.norm(b))
    if info != 0:
        raise ElasticityError(
            f"conjugate gradients failed to converge within {maxiter} iterations "
            f"(relative residual {resid:.3e})"
        )
    return _post_process(h, tensor, mismatch, mesh, w, grads, detw, tables, iters, resid)


def flat_equilibrium(
    d: float, tensor: ElasticTensor, mismatch: Mismatch, mesh: SlabMesh
) -> ElasticState:
    """Closed-form affine equilibrium of the flat film of height d.

    The in-plane strains are the mismatch; the vertical strain column b
    solves the traction-free condition C(E0 + sym(b x e3)) e3 = 0, i.e.
    M b = -(C E0) e3 with the acoustic tensor M[i,k] = C[i,3,k,3].
    """
    if d <= 0:
        raise ValueError("flat film height must be positive")
    n, m = mesh.spec.n, mesh.layers
    e0 = mismatch.base_strain()
    acoustic = tensor.c4[:, 2, :, 2]
    bvec = -np.linalg.solve(acoustic, tensor.stress(e0)[:, 2])
    strain = e0 + 0.5 * (
        np.einsum("i,j->ij", bvec, [0, 0, 1.0]) + np.einsum("i,j->ij", [0, 0, 1.0], bvec)
    )
    wdens = float(tensor.density(strain))
    energy = wdens * mesh.spec.ell**2 * d

    coords = mesh.spec.coords()
    heights = (np.arange(m + 1) / m) * d
    disp = np.zeros((n, n, m + 1, 3))
    disp[..., 0] = mismatch.e0[0] * coords[:, None, None]
    disp[..., 1] = mismatch.e0[1] * coords[None, :, None]
    disp += bvec[None, None, None, :] * heights[None, None, :, None]

    profile = GridProfile(mesh.spec, np.full((n, n), float(d)))
    return ElasticState(
        profile=profile,
        mesh=mesh,
        displacement=disp,
        strain=np.broadcast_to(strain, (n, n, m, 3, 3)).copy(),
        energy=energy,
        surface_trace=np.full((n, n), wdens),
        cell_energy=np.full((n, n, m), wdens),
        remainder=np.zeros(3 * n * n * m) if mismatch.is_zero else _flat_remainder(
            d, bvec, mesh
        ),
        cg_iterations=0,
        residual=0.0,
    )


def _flat_remainder(d: float, bvec: np.ndarray, mesh: SlabMesh) -> np.ndarray:
    """Periodic remainder of the affine flat state (vertical part only)."""
    n, m = mesh.spec.n, mesh.layers
    w = np.zeros((m, n, n, 3))
    heights = (np.arange(1, m + 1) / m) * d
    w += bvec[None, None, None, :] * heights[:, None, None, None]
    return w.reshape(-1)


def boundary_energy_density(state: ElasticState, h: GridProfile) -> np.ndarray:
    """Surface trace of W(Eu) for a state solved on exactly this profile."""
    if state.profile.spec != h.spec or not np.array_equal(
        state.profile.values, h.values
    ):
        raise ValueError("elastic state was not solved on this profile")
    return state.surface_trace


def save_state(state: ElasticState, path) -> None:
    """Structured-grid text dump: displacements, per-cell W(Eu), energy."""
    n, m = state.profile.spec.n, state.mesh.layers
    with open(path, "w") as f:
        f.write(f"{state.profile.spec.ell:.17g} {n} {m}\n")
        f.write("displacement\n")
        for k in range(m + 1):
            for i in range(n):
                row = state.displacement[i, :, k, :].ravel()
                f.write(" ".join(f"{x:.17g}" for x in row) + "\n")
        f.write("cell_energy_density\n")
        for k in range(m):
            for i in range(n):
                f.write(
                    " ".join(f"{x:.17g}" for x in state.cell_energy[i, :, k]) + "\n"
                )
        f.write(f"energy {state.energy:.17g}\n")
