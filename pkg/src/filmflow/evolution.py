"""Outer time loop: iterate incremental steps, interpolants, safeguards.

Each run tracks the discrete dissipation

    sum_i tau_i ||(h_i - h_{i-1})/tau_i||_{L2}^2,

which stays below 2 sqrt(1 + Lambda0^2) F(h_0, u_0) as long as every
accepted step decreased the penalized objective, and a curvature
regularity accumulator sum_i tau_i ||D^2(|H_i|^{p-2} H_i)||_{L2}^2
(reported, not asserted).  After every step the run checks the
safeguards min h >= C0 and ||Dh||_inf < Lambda0 strictly; the first
violation stops the run cleanly and the last safe time is reported as
the empirical horizon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from filmflow.anisotropy import Anisotropy
from filmflow.elasticity import ElasticState, ElasticTensor, Mismatch, SlabMesh, solve_equilibrium
from filmflow.energy import (
    EnergyBreakdown,
    first_variation,
    l2_norm,
    total_energy,
    _signed_power,
)
from filmflow.geometry import (
    GridProfile,
    differentiate,
    grid_hessian,
    lipschitz_seminorm,
)
from filmflow.stepper import StepParams, StepRecord, minimize_step

__all__ = [
    "EvolutionParams",
    "EvolutionTrace",
    "run",
    "interpolate_linear",
    "interpolate_constant",
    "holder_time_diagnostic",
    "HolderReport",
]


@dataclass(frozen=True)
class EvolutionParams:
    final_time: float
    tau: float
    c0_fraction: float = 0.5
    stop_on_saturation: bool = False
    max_retries: int = 3

    def __post_init__(self):
        if not (self.tau > 0):
            raise ValueError("time step must be positive")
        if self.final_time < self.tau:
            raise ValueError("final time must be at least one step")
        if not (0 < self.c0_fraction < 1):
            raise ValueError("the positivity floor must be a fraction in (0, 1)")


@dataclass
class EvolutionTrace:
    """Time-indexed step records plus the quantitative accumulators."""

    records: list  # StepRecord; records[0] is the initial configuration
    times: list
    c0: float
    lambda0: float
    dissipation: float
    curvature_accumulator: float
    t0_empirical: float
    stop_reason: str  # "horizon" | "safeguard" | "step_failed" | "saturated"

    def energies(self) -> np.ndarray:
        return np.array([r.breakdown.total for r in self.records])

    def profiles(self) -> list:
        return [r.h_new for r in self.records]


def _initial_record(h0, state0, psi, reg) -> StepRecord:
    breakdown = total_energy(h0, state0, psi, reg)
    g = first_variation(h0, psi, reg, state=state0)
    return StepRecord(
        h_new=h0,
        state=state0,
        breakdown=breakdown,
        el_residual=l2_norm(g, h0.spec.spacing),
        outer_iterations=0,
        constraint_active=False,
        wall_time=0.0,
        converged=True,
        dt=0.0,
    )


def run(
    h0: GridProfile,
    psi: Anisotropy,
    tensor: Optional[ElasticTensor],
    mismatch: Optional[Mismatch],
    params: EvolutionParams,
    step_params: StepParams,
    mesh: Optional[SlabMesh] = None,
) -> EvolutionTrace:
    """Evolve h0 to the requested horizon by minimizing movements.

    The initial profile must be strictly positive, admissible, and
    satisfy the strict gradient bound.  A non-converged step is retried
    with a halved time step (up to max_retries halvings) before the run
    aborts with a partial trace.
    """
    reg = step_params.reg
    lam0 = reg.lambda0
    if not h0.is_admissible() or h0.values.min() <= 0:
        raise ValueError("initial profile must be strictly positive")
    lip0 = lipschitz_seminorm(h0)
    if lip0 >= lam0:
        raise ValueError(
            f"initial profile gradient {lip0:g} must lie strictly below {lam0:g}"
        )
    c0 = params.c0_fraction * float(h0.values.min())

    elastic_on = tensor is not None and mismatch is not None and not mismatch.is_zero
    state0 = (
        solve_equilibrium(h0, tensor, mismatch, mesh) if elastic_on else None
    )
    rec0 = _initial_record(h0, state0, psi, reg)
    records = [rec0]
    times = [0.0]
    d2 = h0.spec.spacing**2

    dissipation = 0.0
    curvature_acc = 0.0
    t = 0.0
    stop_reason = "horizon"
    nsteps = math.ceil(params.final_time / params.tau - 1e-12)
    floor = step_params.positivity_floor
    step_params = replace(step_params, positivity_floor=max(floor, 0.5 * c0))

    for _ in range(nsteps):
        prev = records[-1]
        rec = None
        tau_i = params.tau
        for _retry in range(params.max_retries + 1):
            sp = replace(step_params, reg=replace(reg, tau=tau_i))
            cand = minimize_step(
                prev.h_new, prev.state, psi, tensor, mismatch, sp, mesh=mesh
            )
            if cand.converged:
                rec = cand
                break
            tau_i *= 0.5
        if rec is None:
            stop_reason = "step_failed"
            break

        h_new = rec.h_new
        if h_new.values.min() < c0 or lipschitz_seminorm(h_new) >= lam0:
            stop_reason = "safeguard"
            break

        f_prev = prev.breakdown.total
        f_new = rec.breakdown.total
        if f_new > f_prev + 1e-10 * max(1.0, abs(f_prev)):
            raise RuntimeError(
                f"energy increased across a step: {f_prev!r} -> {f_new!r}"
            )

        diff = h_new.values - prev.h_new.values
        dissipation += float(np.sum(diff * diff) * d2) / rec.dt
        w = _signed_power(differentiate(h_new).curvature_sum, reg.p)
        d2w = grid_hessian(w, h_new.spec.spacing)
        curvature_acc += rec.dt * float(
            np.sum(np.einsum("...ij,...ij->...", d2w, d2w)) * d2
        )

        t += rec.dt
        records.append(rec)
        times.append(t)

        if params.stop_on_saturation and np.abs(diff).max() <= 1e-13 * h0.spec.ell:
            stop_reason = "saturated"
            t = params.final_time  # stationary continuation is safe
            break

    t0 = t if stop_reason in ("safeguard", "step_failed") else max(t, times[-1])
    if stop_reason == "saturated":
        t0 = params.final_time
    return EvolutionTrace(
        records=records,
        times=times,
        c0=c0,
        lambda0=lam0,
        dissipation=dissipation,
        curvature_accumulator=curvature_acc,
        t0_empirical=t0,
        stop_reason=stop_reason,
    )


def interpolate_linear(trace: EvolutionTrace, t: float) -> GridProfile:
    """Piecewise affine interpolant of the recorded profiles."""
    times = trace.times
    if not (0.0 <= t <= times[-1] + 1e-15 * max(1.0, times[-1])):
        raise ValueError(f"time {t} outside the recorded range [0, {times[-1]}]")
    t = min(t, times[-1])
    i = int(np.searchsorted(times, t, side="right"))
    if i >= len(times):
        return trace.records[-1].h_new
    if i == 0:
        return trace.records[0].h_new
    t0, t1 = times[i - 1], times[i]
    lam = (t - t0) / (t1 - t0)
    vals = (1.0 - lam) * trace.records[i - 1].h_new.values + lam * trace.records[
        i
    ].h_new.values
    return GridProfile(trace.records[0].h_new.spec, vals)


def interpolate_constant(trace: EvolutionTrace, t: float):
    """Right-open piecewise constant interpolant: (profile, elastic state).

    On [t_{i-1}, t_i) the value is the record at t_i; the final instant
    returns the last record.
    """
    times = trace.times
    if not (0.0 <= t <= times[-1] + 1e-15 * max(1.0, times[-1])):
        raise ValueError(f"time {t} outside the recorded range [0, {times[-1]}]")
    if len(times) == 1 or t >= times[-1]:
        rec = trace.records[-1]
        return rec.h_new, rec.state
    i = int(np.searchsorted(times, t, side="right"))
    rec = trace.records[i]
    return rec.h_new, rec.state


@dataclass(frozen=True)
class HolderReport:
    constant: float
    worst_pair: tuple
    exponent_slow: float
    exponent_half: float = 0.5


def holder_time_diagnostic(trace: EvolutionTrace, p: float) -> HolderReport:
    """Best constant C in ||h(t2)-h(t1)||_inf <= C [(dt)^a + (dt)^(1/2)].

    The slow exponent is a = (p^2 - 4)/(8 p^2).  Diagnostic only: the
    continuum constant is not quantified, so no pass/fail is attached.
    """
    a = (p * p - 4.0) / (8.0 * p * p)
    times = np.asarray(trace.times)
    profiles = trace.profiles()
    best = 0.0
    pair = (0, 0)
    stride = max(1, len(profiles) // 200)
    idx = list(range(0, len(profiles), stride))
    if idx[-1] != len(profiles) - 1:
        idx.append(len(profiles) - 1)
    for ai in range(len(idx)):
        for bi in range(ai + 1, len(idx)):
            i, j = idx[ai], idx[bi]
            dt = times[j] - times[i]
            if dt <= 0:
                continue
            diff = float(np.abs(profiles[j].values - profiles[i].values).max())
            c = diff / (dt**a + dt**0.5)
            if c > best:
                best = c
                pair = (i, j)
    return HolderReport(constant=best, worst_pair=pair, exponent_slow=a)
