"""Command-line entry points: simulate, stability, check, energy.

Exit codes: 0 success, 1 configuration/validation failure, 2 runtime
failure.  All numbers are printed with 17 significant digits so outputs
are bit-reproducible across runs with the same configuration.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from filmflow import anisotropy as aniso_mod
from filmflow import energy as energy_mod
from filmflow import evolution as evo_mod
from filmflow import stability as stab_mod
from filmflow.config import ConfigError, RunConfig, load_config, serialize
from filmflow.elasticity import flat_equilibrium, solve_equilibrium
from filmflow.energy import first_variation, first_variation_pairing, l2_norm
from filmflow.geometry import (
    GridProfile,
    differentiate,
    grid_gradient,
    lipschitz_seminorm,
    save_profile,
)
from filmflow.stepper import minimize_step

_CSV_HEADER = (
    "step,time,elastic,surface_aniso,surface_reg,penalization,total,"
    "el_residual,outer_iterations,min_h,lipschitz,constraint_active"
)


def _trace_csv(trace) -> str:
    lines = [_CSV_HEADER]
    for i, (t, rec) in enumerate(zip(trace.times, trace.records)):
        row = rec.breakdown.csv_row(i, t)
        extra = (
            f",{rec.el_residual:.17g},{rec.outer_iterations}"
            f",{rec.h_new.values.min():.17g}"
            f",{lipschitz_seminorm(rec.h_new):.17g}"
            f",{int(rec.constraint_active)}"
        )
        lines.append(row + extra)
    return "\n".join(lines) + "\n"


def run_simulate(cfg: RunConfig, outdir: Path):
    psi = cfg.anisotropy()
    mismatch = cfg.mismatch()
    tensor = cfg.tensor() if mismatch is not None else None
    mesh = cfg.mesh() if mismatch is not None else None
    h0 = cfg.initial_profile()
    trace = evo_mod.run(
        h0, psi, tensor, mismatch, cfg.evolution_params(), cfg.step_params(), mesh=mesh
    )

    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "config_echo.cfg").write_text(serialize(cfg))
    (outdir / "steps.csv").write_text(_trace_csv(trace))

    bound = 2.0 * np.sqrt(1.0 + trace.lambda0**2) * trace.records[0].breakdown.total
    summary = [
        f"stop_reason {trace.stop_reason}",
        f"t0_empirical {trace.t0_empirical:.17g}",
        f"steps {len(trace.records) - 1}",
        f"dissipation {trace.dissipation:.17g}",
        f"dissipation_bound {bound:.17g}",
        f"curvature_accumulator {trace.curvature_accumulator:.17g}",
        f"c0 {trace.c0:.17g}",
    ]
    (outdir / "summary.txt").write_text("\n".join(summary) + "\n")

    every = cfg[("experiment", "dump_every")]
    if every > 0:
        for i, rec in enumerate(trace.records):
            if i % every == 0 or i == len(trace.records) - 1:
                save_profile(rec.h_new, outdir / f"profile_{i:05d}.txt")
    save_profile(trace.records[-1].h_new, outdir / "profile_final.txt")
    return trace


def run_stability(cfg: RunConfig, outdir: Path):
    psi = cfg.anisotropy()
    mismatch = cfg.mismatch()
    tensor = cfg.tensor() if mismatch is not None else None
    mesh = cfg.mesh() if mismatch is not None else None
    spec = cfg.grid_spec()
    d = cfg[("initial", "height")]
    kind = cfg[("experiment", "kind")]
    delta = cfg[("experiment", "delta")]
    sigma = cfg[("experiment", "sigma")]

    if kind == "stability-lyapunov":
        report = stab_mod.lyapunov_experiment(
            d, delta, sigma, psi, tensor, mismatch,
            cfg.evolution_params(), cfg.step_params(), spec, mesh=mesh,
        )
    elif kind == "stability-asymptotic":
        report = stab_mod.asymptotic_experiment(
            d, delta, psi, tensor, mismatch,
            cfg.evolution_params(), cfg.step_params(), spec, mesh=mesh,
            kmax=cfg[("experiment", "kmax")],
            hyp1_tol=cfg[("experiment", "hyp1_tol")],
            sigma=sigma,
        )
    else:
        raise ValueError(
            "stability needs experiment.kind = stability-lyapunov or "
            "stability-asymptotic"
        )

    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "config_echo.cfg").write_text(serialize(cfg))
    (outdir / "report.txt").write_text(report.to_text())
    spect = ["k1,k2,kind,second_variation"]
    for (k1, k2, knd), val in report.spectrum:
        spect.append(f"{k1},{k2},{knd},{val:.17g}")
    (outdir / "spectrum.csv").write_text("\n".join(spect) + "\n")
    dist = ["time,distance"]
    for t, dd in zip(report.distance_times, report.distances):
        dist.append(f"{t:.17g},{dd:.17g}")
    (outdir / "distances.csv").write_text("\n".join(dist) + "\n")
    return report


def run_check(cfg: RunConfig) -> bool:
    """Invariant self-test battery; prints one line per item."""
    rng = np.random.default_rng(12345)
    results = []

    def item(name, ok):
        results.append(ok)
        print(f"check {name}: {'PASS' if ok else 'FAIL'}")

    spec = cfg.grid_spec()
    psi = cfg.anisotropy()
    reg = cfg.regularization()

    # zero grid mean of the divergence-form curvature
    ok = True
    for _ in range(20):
        vals = _random_band_limited(rng, spec.n, spec.ell)
        geom = differentiate(GridProfile(spec, vals + 2.0 * np.abs(vals).max() + 0.1))
        if abs(geom.curvature_sum.mean()) > 1e-12:
            ok = False
    item("curvature-zero-mean", ok)

    # Euler relation and homogeneity of the configured density
    xi = rng.normal(size=(100, 3))
    xi /= np.linalg.norm(xi, axis=1, keepdims=True)
    euler = np.einsum("nij,nj->ni", psi.hessian(xi), xi)
    item("euler-relation", float(np.abs(euler).max()) <= 1e-10)
    hom = np.abs(psi.evaluate(2.0 * xi) - 2.0 * psi.evaluate(xi))
    item("one-homogeneity", float(hom.max()) <= 1e-12 * 2.0 * psi.bound_constant)

    # elasticity patch test against the affine flat state
    mismatch = cfg.mismatch()
    if mismatch is not None:
        tensor = cfg.tensor()
        mesh = cfg.mesh()
        d = cfg[("initial", "height")]
        flat = GridProfile(spec, np.full((spec.n, spec.n), d))
        fem = solve_equilibrium(flat, tensor, mismatch, mesh)
        exact = flat_equilibrium(d, tensor, mismatch, mesh)
        err = np.abs(fem.displacement - exact.displacement).max()
        item("elastic-patch-test", err <= 1e-9 * max(1.0, np.abs(exact.displacement).max()))
    else:
        item("elastic-patch-test(skipped: zero mismatch)", True)

    # duality exactness and gradient consistency of the first variation
    h = GridProfile(spec, 0.2 * spec.ell + 0.02 * spec.ell * _random_band_limited(rng, spec.n, spec.ell))
    ok_dual = True
    ok_grad = True
    for _ in range(3):
        phi = _random_band_limited(rng, spec.n, spec.ell)
        g = first_variation(h, psi, reg, h_prev=h)
        lhs = float(np.sum(g * phi)) * spec.spacing**2
        rhs = first_variation_pairing(h, psi, reg, phi, h_prev=h)
        scale = max(abs(lhs), abs(rhs), 1e-30)
        if abs(lhs - rhs) > 1e-12 * scale:
            ok_dual = False
        num = _directional_difference(h, psi, reg, phi)
        if abs(lhs - num) > 1e-5 * max(abs(num), 1e-30):
            ok_grad = False
    item("variation-duality", ok_dual)
    item("variation-gradient-consistency", ok_grad)

    return all(results)


def _random_band_limited(rng, n, ell, kmax=4):
    x = np.arange(n) / n
    x1, x2 = np.meshgrid(x, x, indexing="ij")
    vals = np.zeros((n, n))
    for k1 in range(-kmax, kmax + 1):
        for k2 in range(-kmax, kmax + 1):
            if k1 == 0 and k2 == 0:
                continue
            amp = rng.normal() / (1.0 + k1 * k1 + k2 * k2)
            phase = rng.uniform(0, 2 * np.pi)
            vals += amp * np.cos(2 * np.pi * (k1 * x1 + k2 * x2) + phase)
    return vals / max(1.0, np.abs(vals).max())


def _directional_difference(h, psi, reg, phi, s=1e-6):
    from filmflow.energy import penalization, surface_energy

    def g_of(hh):
        return surface_energy(hh, psi, reg).total + penalization(hh, h, reg.tau)

    hp = GridProfile(h.spec, h.values + s * phi)
    hm = GridProfile(h.spec, h.values - s * phi)
    return (g_of(hp) - g_of(hm)) / (2.0 * s)


def run_energy(cfg: RunConfig, outdir: Path):
    psi = cfg.anisotropy()
    mismatch = cfg.mismatch()
    h0 = cfg.initial_profile()
    state = (
        solve_equilibrium(h0, cfg.tensor(), mismatch, cfg.mesh())
        if mismatch is not None
        else None
    )
    breakdown = energy_mod.total_energy(h0, state, psi, cfg.regularization())
    row = breakdown.csv_row(0, 0.0)
    print("step,time,elastic,surface_aniso,surface_reg,penalization,total")
    print(row)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "energy.csv").write_text(
        "step,time,elastic,surface_aniso,surface_reg,penalization,total\n" + row + "\n"
    )
    return breakdown


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="filmflow",
        description="Strained-film evolution by minimizing movements",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "stability", "check", "energy"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True)
        sp.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a config entry (section.key=value)",
        )
        if name == "stability":
            sp.add_argument(
                "--jobs", type=int, default=1,
                help="parallel workers for independent stability modes",
            )
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, overrides=args.overrides)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        for v in exc.violations:
            print(f"config error: {v}", file=sys.stderr)
        return 1

    outdir = Path(cfg[("experiment", "output_dir")])
    try:
        if args.command == "simulate":
            run_simulate(cfg, outdir)
        elif args.command == "stability":
            if getattr(args, "jobs", 1) > 1:
                stab_mod.PARALLEL_JOBS = args.jobs
            run_stability(cfg, outdir)
        elif args.command == "check":
            if not run_check(cfg):
                return 2
        elif args.command == "energy":
            run_energy(cfg, outdir)
    except (ValueError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
