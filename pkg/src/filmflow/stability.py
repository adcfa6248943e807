"""Flat-configuration stability: second variation and long-run experiments.

The reduced functional G(h) = elastic(u_h) + int psi(nu) dH^2 (no
curvature regularization) is probed at the flat state by central second
differences along zero-mean modes, with the displacement re-solved at
every perturbed profile.  Two prechecks gate the asymptotic claim:

  (hyp1) strict tangential convexity of the density over sampled
         directions, and
  (hyp2) positivity of the second variation over a truncated Fourier
         basis.

When either fails (the faceted regime), the experiments report Lyapunov
data only and refuse to claim asymptotic stability.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from filmflow.anisotropy import Anisotropy, tangential_convexity, _fibonacci_sphere
from filmflow.elasticity import ElasticTensor, Mismatch, SlabMesh, solve_equilibrium
from filmflow.energy import RegularizationParams, first_variation, l2_norm
from filmflow.evolution import EvolutionParams, EvolutionTrace, run
from filmflow.geometry import GridProfile, GridSpec, sobolev_w2p_norm
from filmflow.stepper import StepParams

__all__ = [
    "StabilityReport",
    "second_variation_flat",
    "hyp1_precheck",
    "hyp2_spectrum",
    "lyapunov_experiment",
    "asymptotic_experiment",
    "fourier_mode",
]


@dataclass(frozen=True)
class StabilityReport:
    regime: str  # "convex" or "faceted"
    spectrum: tuple  # ((k1, k2, kind), second-variation value) pairs
    hyp1_min: float
    lyapunov_sup: float
    within_threshold: Optional[bool]
    distance_times: tuple
    distances: tuple
    decay_flag: Optional[bool]
    asymptotic_claimed: bool
    refusal_reason: Optional[str]
    terminal_residual: Optional[float]
    flat_height: float
    delta: float
    sigma: Optional[float]

    def to_text(self) -> str:
        lines = [
            f"regime: {self.regime}",
            f"flat_height: {self.flat_height:.17g}",
            f"delta: {self.delta:.17g}",
            f"sigma: {'' if self.sigma is None else format(self.sigma, '.17g')}",
            f"hyp1_min_tangential: {self.hyp1_min:.17g}",
            f"lyapunov_sup: {self.lyapunov_sup:.17g}",
            f"within_threshold: {self.within_threshold}",
            f"asymptotic_claimed: {self.asymptotic_claimed}",
            f"decay_flag: {self.decay_flag}",
            f"refusal_reason: {self.refusal_reason or ''}",
            f"terminal_residual: "
            f"{'' if self.terminal_residual is None else format(self.terminal_residual, '.17g')}",
        ]
        return "\n".join(lines) + "\n"


def _flat_profile(spec: GridSpec, d: float) -> GridProfile:
    return GridProfile(spec, np.full((spec.n, spec.n), float(d)))


def fourier_mode(spec: GridSpec, k1: int, k2: int, kind: str = "cos") -> GridProfile:
    """Unit-amplitude zero-mean Fourier mode on the grid."""
    x1, x2 = spec.meshgrid()
    phase = 2.0 * np.pi * (k1 * x1 + k2 * x2) / spec.ell
    vals = np.cos(phase) if kind == "cos" else np.sin(phase)
    return GridProfile(spec, vals)


def _reduced_energy(
    h: GridProfile,
    psi: Anisotropy,
    tensor: Optional[ElasticTensor],
    mismatch: Optional[Mismatch],
    mesh: Optional[SlabMesh],
) -> float:
    """G(h, u_h): elastic plus anisotropic surface energy, no regularization."""
    from filmflow.geometry import differentiate

    d = h.spec.spacing
    geom = differentiate(h)
    psi_vals, _ = psi.on_graph(geom.grad)
    val = float(np.sum(psi_vals) * d * d)
    if tensor is not None and mismatch is not None and not mismatch.is_zero:
        state = solve_equilibrium(h, tensor, mismatch, mesh)
        val += state.energy
    return val


def second_variation_flat(
    d: float,
    tensor: Optional[ElasticTensor],
    mismatch: Optional[Mismatch],
    psi: Anisotropy,
    mode: GridProfile,
    mesh: Optional[SlabMesh] = None,
    rel_step: float = 1e-3,
    validate: bool = False,
) -> float:
    """Central second difference of the reduced functional at the flat state.

    The mode must have zero grid mean (volume-preserving direction); the
    displacement is re-solved on each perturbed profile.  With
    ``validate`` a Richardson check at half step must agree within 1%.
    """
    if d <= 0:
        raise ValueError("flat height must be positive")
    scale = np.abs(mode.values).max()
    if scale == 0:
        return 0.0
    if abs(mode.values.mean()) > 1e-12 * scale:
        raise ValueError("mode must have zero grid mean")
    spec = mode.spec
    flat = _flat_profile(spec, d)

    def g_at(s: float) -> float:
        prof = GridProfile(spec, flat.values + s * mode.values)
        return _reduced_energy(prof, psi, tensor, mismatch, mesh)

    s = rel_step * d
    g0 = g_at(0.0)
    val = (g_at(s) - 2.0 * g0 + g_at(-s)) / (s * s)
    if validate:
        s2 = 0.5 * s
        val2 = (g_at(s2) - 2.0 * g0 + g_at(-s2)) / (s2 * s2)
        if abs(val2 - val) > 0.01 * max(abs(val), abs(val2), 1e-30):
            raise RuntimeError(
                f"second variation not converged in the step size: {val} vs {val2}"
            )
    return float(val)


def hyp1_precheck(psi: Anisotropy, samples: int = 512, tol: float = 1e-3):
    """Strict tangential convexity over sampled directions."""
    dirs = _fibonacci_sphere(samples)
    vals = np.array([tangential_convexity(psi, v) for v in dirs])
    return bool(vals.min() > tol), float(vals.min())


PARALLEL_JOBS = 1  # set >1 to evaluate independent spectrum modes concurrently


def hyp2_spectrum(
    d: float,
    tensor: Optional[ElasticTensor],
    mismatch: Optional[Mismatch],
    psi: Anisotropy,
    spec: GridSpec,
    mesh: Optional[SlabMesh] = None,
    kmax: int = 4,
    rel_step: float = 1e-3,
):
    """Second-variation values over the truncated Fourier basis |k| <= kmax.

    One representative per +-k pair (both cos and sin phases).  Mode
    evaluations are independent; with PARALLEL_JOBS > 1 they run on a
    thread pool, results kept in deterministic (submission) order.
    """
    tasks = []
    for k1 in range(0, kmax + 1):
        for k2 in range(-kmax, kmax + 1):
            if k1 == 0 and k2 <= 0:
                continue
            if k1 * k1 + k2 * k2 > kmax * kmax:
                continue
            for kind in ("cos", "sin"):
                tasks.append((k1, k2, kind))

    def eval_one(task):
        k1, k2, kind = task
        mode = fourier_mode(spec, k1, k2, kind)
        return second_variation_flat(
            d, tensor, mismatch, psi, mode, mesh, rel_step=rel_step
        )

    if PARALLEL_JOBS > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=PARALLEL_JOBS) as pool:
            vals = list(pool.map(eval_one, tasks))
    else:
        vals = [eval_one(t) for t in tasks]
    return list(zip(tasks, vals))


def _perturbation(spec: GridSpec, delta: float, p: float, mode=None) -> np.ndarray:
    """Zero-mean perturbation normalized to W^{2,p} size delta."""
    if mode is None:
        base = (
            fourier_mode(spec, 1, 0).values
            + 0.5 * fourier_mode(spec, 1, 1).values
        )
    else:
        base = mode.values
    base = base - base.mean()
    norm = sobolev_w2p_norm(GridProfile(spec, base), p)
    return base * (delta * (1.0 - 1e-9) / norm)


def _distances(trace: EvolutionTrace, d: float, p: float):
    spec = trace.records[0].h_new.spec
    ds = [
        sobolev_w2p_norm(GridProfile(spec, r.h_new.values - d), p)
        for r in trace.records
    ]
    return np.array(trace.times), np.array(ds)


def lyapunov_experiment(
    d: float,
    delta: float,
    sigma: float,
    psi: Anisotropy,
    tensor: Optional[ElasticTensor],
    mismatch: Optional[Mismatch],
    evo_params: EvolutionParams,
    step_params: StepParams,
    spec: GridSpec,
    mesh: Optional[SlabMesh] = None,
    mode: Optional[GridProfile] = None,
) -> StabilityReport:
    """Evolve a volume-matched perturbation of size delta; track the
    W^{2,p} excursion from the flat state against the threshold sigma."""
    p = step_params.reg.p
    pert = _perturbation(spec, delta, p, mode) if delta > 0 else np.zeros((spec.n, spec.n))
    h0 = GridProfile(spec, d + pert)
    trace = run(h0, psi, tensor, mismatch, evo_params, step_params, mesh=mesh)
    times, dists = _distances(trace, d, p)
    sup = float(dists.max()) if len(dists) else 0.0
    hyp1_ok, hyp1_min = hyp1_precheck(psi)
    return StabilityReport(
        regime="convex" if hyp1_ok else "faceted",
        spectrum=(),
        hyp1_min=hyp1_min,
        lyapunov_sup=sup,
        within_threshold=bool(sup <= sigma),
        distance_times=tuple(times),
        distances=tuple(dists),
        decay_flag=None,
        asymptotic_claimed=False,
        refusal_reason=None,
        terminal_residual=None,
        flat_height=d,
        delta=delta,
        sigma=sigma,
    )


def asymptotic_experiment(
    d: float,
    delta: float,
    psi: Anisotropy,
    tensor: Optional[ElasticTensor],
    mismatch: Optional[Mismatch],
    evo_params: EvolutionParams,
    step_params: StepParams,
    spec: GridSpec,
    mesh: Optional[SlabMesh] = None,
    kmax: int = 4,
    hyp1_tol: float = 1e-3,
    mode: Optional[GridProfile] = None,
    sigma: Optional[float] = None,
) -> StabilityReport:
    """Long-horizon run gated by the convexity prechecks.

    Asymptotic stability is claimed only when both (hyp1) and (hyp2)
    pass; otherwise the experiment runs the same horizon but reports
    Lyapunov data only, with the refusal reason recorded.  The decay
    flag compares the last reported distance against a tenth of the
    first; the terminal residual certifies proximity to a critical
    profile (velocity term excluded, fresh elastic solve).
    """
    p = step_params.reg.p
    hyp1_ok, hyp1_min = hyp1_precheck(psi, tol=hyp1_tol)
    spectrum = tuple(
        hyp2_spectrum(d, tensor, mismatch, psi, spec, mesh, kmax=kmax)
    )
    hyp2_ok = all(v > 0 for _, v in spectrum)

    pert = _perturbation(spec, delta, p, mode) if delta > 0 else np.zeros((spec.n, spec.n))
    h0 = GridProfile(spec, d + pert)
    trace = run(h0, psi, tensor, mismatch, evo_params, step_params, mesh=mesh)
    times, dists = _distances(trace, d, p)
    sup = float(dists.max()) if len(dists) else 0.0

    # log-spaced reporting times (indices into the trace)
    npts = min(len(times), 20)
    if len(times) > 1:
        idx = np.unique(
            np.clip(
                np.geomspace(1, len(times) - 1, npts).astype(int), 1, len(times) - 1
            )
        )
        idx = np.concatenate([[0], idx])
    else:
        idx = np.array([0])
    rep_t = tuple(times[i] for i in idx)
    rep_d = tuple(dists[i] for i in idx)

    if not (hyp1_ok and hyp2_ok):
        reason = []
        if not hyp1_ok:
            reason.append(f"tangential convexity fails (min {hyp1_min:.3e})")
        if not hyp2_ok:
            worst = min(spectrum, key=lambda kv: kv[1])
            reason.append(
                f"second variation fails at mode {worst[0]} ({worst[1]:.3e})"
            )
        return StabilityReport(
            regime="faceted",
            spectrum=spectrum,
            hyp1_min=hyp1_min,
            lyapunov_sup=sup,
            within_threshold=None if sigma is None else bool(sup <= sigma),
            distance_times=rep_t,
            distances=rep_d,
            decay_flag=None,
            asymptotic_claimed=False,
            refusal_reason="; ".join(reason),
            terminal_residual=None,
            flat_height=d,
            delta=delta,
            sigma=sigma,
        )

    decay = bool(len(dists) > 1 and dists[-1] <= 0.1 * dists[0]) if delta > 0 else True
    h_last = trace.records[-1].h_new
    elastic_on = tensor is not None and mismatch is not None and not mismatch.is_zero
    state = solve_equilibrium(h_last, tensor, mismatch, mesh) if elastic_on else None
    g = first_variation(h_last, psi, step_params.reg, state=state)
    terminal = l2_norm(g, spec.spacing)

    return StabilityReport(
        regime="convex",
        spectrum=spectrum,
        hyp1_min=hyp1_min,
        lyapunov_sup=sup,
        within_threshold=None if sigma is None else bool(sup <= sigma),
        distance_times=rep_t,
        distances=rep_d,
        decay_flag=decay,
        asymptotic_claimed=bool(decay),
        refusal_reason=None,
        terminal_residual=terminal,
        flat_height=d,
        delta=delta,
        sigma=sigma,
    )
