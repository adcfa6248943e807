import numpy as np
import pytest

from filmflow.anisotropy import Anisotropy
from filmflow.elasticity import ElasticTensor, Mismatch, SlabMesh
from filmflow.energy import RegularizationParams, penalization, surface_energy, total_energy
from filmflow.geometry import GridProfile, GridSpec, lipschitz_seminorm
from filmflow.stepper import StepParams, minimize_step

from conftest import band_limited


def make_params(tau=1e-3, el_tol=1e-8, **kw):
    reg = RegularizationParams(epsilon=1e-3, p=3.0, tau=tau, lambda0=1.0)
    return StepParams(reg=reg, el_tol=el_tol, **kw)


def sinusoid(spec, base, amp):
    x1, _ = spec.meshgrid()
    return GridProfile(spec, base + amp * np.sin(2 * np.pi * x1 / spec.ell))


class TestStationarity:
    def test_flat_no_mismatch_is_fixed_point(self, spec16):
        h = GridProfile(spec16, np.full((16, 16), 0.2))
        rec = minimize_step(h, None, Anisotropy.isotropic(), None, None, make_params())
        assert rec.outer_iterations == 0
        assert rec.el_residual == 0.0
        assert np.array_equal(rec.h_new.values, h.values)
        assert rec.converged

    def test_flat_any_family_is_fixed_point(self, spec16):
        h = GridProfile(spec16, np.full((16, 16), 0.2))
        for psi in (Anisotropy.cubic(0.1), Anisotropy.faceted(0.5, 1.0)):
            rec = minimize_step(h, None, psi, None, None, make_params())
            assert rec.outer_iterations == 0


class TestDescent:
    def test_objective_chain_inequality(self, spec16):
        psi = Anisotropy.isotropic()
        params = make_params()
        h_prev = sinusoid(spec16, 0.2, 0.05)
        rec = minimize_step(h_prev, None, psi, None, None, params)
        f_prev = surface_energy(h_prev, psi, params.reg).total
        g_new = rec.breakdown.total + rec.breakdown.penalization
        assert g_new <= f_prev + 1e-10
        assert rec.breakdown.total <= f_prev + 1e-10  # energy decrease
        assert rec.converged

    def test_feasibility_preserved(self, spec16):
        params = make_params(tau=1e-2)
        h_prev = sinusoid(spec16, 0.2, 0.05)
        rec = minimize_step(h_prev, None, Anisotropy.isotropic(), None, None, params)
        assert lipschitz_seminorm(rec.h_new) <= params.reg.lambda0
        assert rec.h_new.values.min() > 0

    def test_projected_gradient_variant(self, spec16):
        params = make_params(method="projected-gradient", el_tol=1e-7, max_outer=500)
        h_prev = sinusoid(spec16, 0.2, 0.03)
        rec = minimize_step(h_prev, None, Anisotropy.isotropic(), None, None, params)
        assert rec.converged
        f_prev = surface_energy(h_prev, Anisotropy.isotropic(), params.reg).total
        assert rec.breakdown.total + rec.breakdown.penalization <= f_prev + 1e-10

    def test_infeasible_start_rejected(self, spec16):
        params = make_params()
        steep = sinusoid(spec16, 0.5, 0.4)  # slope 0.4*2pi > lambda0
        with pytest.raises(ValueError):
            minimize_step(steep, None, Anisotropy.isotropic(), None, None, params)
        with pytest.raises(ValueError):
            nonpos = GridProfile(spec16, np.zeros((16, 16)))
            minimize_step(nonpos, None, Anisotropy.isotropic(), None, None, params)

    def test_nonconverged_flag_on_tiny_budget(self, spec16):
        params = make_params(max_outer=1, el_tol=1e-14)
        h_prev = sinusoid(spec16, 0.2, 0.05)
        rec = minimize_step(h_prev, None, Anisotropy.isotropic(), None, None, params)
        assert not rec.converged
        assert rec.el_residual > params.el_tol


class TestElasticStep:
    def test_energy_decreases_with_elasticity(self, rng, spec16):
        mesh = SlabMesh(spec16, 4)
        tensor = ElasticTensor.from_lame(1.0, 1.0)
        mism = Mismatch((0.04, 0.04))
        psi = Anisotropy.isotropic()
        params = make_params(tau=1e-3, el_tol=1e-6)
        h_prev = sinusoid(spec16, 0.25, 0.02)
        rec = minimize_step(h_prev, None, psi, tensor, mism, params, mesh=mesh)
        from filmflow.elasticity import solve_equilibrium

        state_prev = solve_equilibrium(h_prev, tensor, mism, mesh)
        f_prev = total_energy(h_prev, state_prev, psi, params.reg).total
        assert rec.breakdown.total <= f_prev + 1e-10
        assert rec.breakdown.total + rec.breakdown.penalization <= f_prev + 1e-10
        assert rec.state is not None
        assert rec.converged

    def test_mesh_required_when_elastic(self, spec16):
        params = make_params()
        h_prev = sinusoid(spec16, 0.25, 0.02)
        with pytest.raises(ValueError):
            minimize_step(
                h_prev, None, Anisotropy.isotropic(),
                ElasticTensor.from_lame(1.0, 1.0), Mismatch((0.02, 0.02)), params,
            )
