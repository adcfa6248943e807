import numpy as np
import pytest
from scipy.optimize import brentq

from filmflow.anisotropy import (
    Anisotropy,
    WulffReport,
    tangential_convexity,
    wulff_facet_test,
)

E3 = np.array([0.0, 0.0, 1.0])


def families():
    return [
        Anisotropy.isotropic(),
        Anisotropy.cubic(0.1),
        Anisotropy.faceted(0.5, 1.0),
    ]


def fd_gradient(psi, xi, step):
    g = np.zeros(3)
    for i in range(3):
        e = np.zeros(3)
        e[i] = step
        g[i] = (psi.evaluate(xi + e) - psi.evaluate(xi - e)) / (2 * step)
    return g


def fd_hessian(psi, xi, step):
    h = np.zeros((3, 3))
    for i in range(3):
        e = np.zeros(3)
        e[i] = step
        h[:, i] = (psi.gradient(xi + e) - psi.gradient(xi - e)) / (2 * step)
    return 0.5 * (h + h.T)


class TestFamilies:
    def test_isotropic_at_pole(self):
        psi = Anisotropy.isotropic()
        assert psi.evaluate(E3) == 1.0
        assert np.allclose(psi.gradient(E3), E3)
        assert np.allclose(psi.hessian(E3), np.diag([1.0, 1.0, 0.0]))

    def test_cubic_at_pole(self):
        psi = Anisotropy.cubic(0.1)
        assert abs(psi.evaluate(E3) - 1.1) <= 1e-15

    def test_faceted_height_exact(self):
        psi = Anisotropy.faceted(0.5, 1.0)
        assert abs(psi.evaluate(E3) - 1.0) <= 1e-15

    def test_zero_rejected(self):
        for psi in families():
            with pytest.raises(ValueError):
                psi.evaluate(np.zeros(3))

    def test_homogeneity(self, rng):
        for psi in families():
            xi = rng.normal(size=(100, 3))
            t = rng.uniform(0.1, 5.0, size=100)
            lhs = psi.evaluate(t[:, None] * xi)
            rhs = t * psi.evaluate(xi)
            assert np.abs(lhs - rhs).max() <= 1e-12 * np.abs(rhs).max()

    def test_gradient_hessian_vs_finite_differences(self, rng):
        for psi in families():
            for _ in range(10):
                xi = rng.normal(size=3)
                xi /= np.linalg.norm(xi)
                step = 1e-5
                g = psi.gradient(xi)
                assert np.abs(g - fd_gradient(psi, xi, step)).max() <= 1e-6 * max(
                    1.0, np.abs(g).max()
                )
                h = psi.hessian(xi)
                assert np.abs(h - fd_hessian(psi, xi, step)).max() <= 1e-6 * max(
                    1.0, np.abs(h).max()
                )

    def test_euler_relation(self, rng):
        # D2psi(xi) xi = 0 for one-homogeneous densities
        for psi in families():
            xi = rng.normal(size=(100, 3))
            xi /= np.linalg.norm(xi, axis=1, keepdims=True)
            res = np.einsum("nij,nj->ni", psi.hessian(xi), xi)
            assert np.abs(res).max() <= 1e-10

    def test_gradient_zero_homogeneous(self, rng):
        for psi in families():
            xi = rng.normal(size=(50, 3))
            assert np.allclose(
                psi.gradient(3.0 * xi), psi.gradient(xi), atol=1e-10
            )

    def test_frobenius_bounds(self, rng):
        for psi in families():
            xi = rng.normal(size=(10000, 3))
            r = np.linalg.norm(xi, axis=1)
            vals = psi.evaluate(xi)
            c = psi.bound_constant
            assert np.all(vals <= c * r * (1 + 1e-12))
            assert np.all(vals >= r / c * (1 - 1e-12))

    def test_vectorized_evaluation_matches_pointwise(self, rng):
        for psi in families():
            xi = rng.normal(size=(4, 5, 3))
            flat = xi.reshape(-1, 3)
            vals = psi.evaluate(xi).reshape(-1)
            grads = psi.gradient(xi).reshape(-1, 3)
            for row in range(flat.shape[0]):
                assert abs(vals[row] - psi.evaluate(flat[row])) <= 1e-14
                assert np.allclose(grads[row], psi.gradient(flat[row]), atol=1e-14)


class TestTangentialConvexity:
    def test_isotropic_is_one(self, rng):
        psi = Anisotropy.isotropic()
        for _ in range(10):
            xi = rng.normal(size=3)
            xi /= np.linalg.norm(xi)
            assert abs(tangential_convexity(psi, xi) - 1.0) <= 1e-12

    def test_unit_vector_required(self):
        with pytest.raises(ValueError):
            tangential_convexity(Anisotropy.isotropic(), np.array([0.0, 0.0, 2.0]))

    def test_basis_invariance(self, rng):
        # recompute with two random orthonormal bases of the tangent plane
        psi = Anisotropy.cubic(0.15)
        xi = rng.normal(size=3)
        xi /= np.linalg.norm(xi)
        val = tangential_convexity(psi, xi)
        hess = psi.hessian(xi)
        for _ in range(2):
            a = rng.normal(size=3)
            w1 = a - np.dot(a, xi) * xi
            w1 /= np.linalg.norm(w1)
            w2 = np.cross(xi, w1)
            m = np.array(
                [[w1 @ hess @ w1, w1 @ hess @ w2], [w1 @ hess @ w2, w2 @ hess @ w2]]
            )
            lam = np.linalg.eigvalsh(m)[0]
            assert abs(lam - val) <= 1e-12 * max(1.0, abs(val))

    def test_cubic_threshold_by_bisection(self):
        # at the pole the tangential Hessian of the cubic family is
        # (1 - 3a) I, so the sign flips at a = 1/3
        f = lambda a: tangential_convexity(Anisotropy.cubic(a), E3)
        assert f(0.1) > 0
        assert f(0.5) < 0
        root = brentq(f, 0.1, 0.5, xtol=1e-10)
        assert abs(root - 1.0 / 3.0) <= 1e-6

    def test_faceted_degenerate_at_pole(self):
        beta, gamma = 0.5, 1.0
        psi = Anisotropy.faceted(beta, gamma)
        val = tangential_convexity(psi, E3)
        # the facet construction forces degeneracy: gamma * s^2 exactly
        expected = gamma * psi.smoothing**2
        assert 0 <= val <= 10 * expected
        assert abs(val - expected) <= 1e-8 * expected


class TestWulffFacet:
    def test_sample_count_enforced(self):
        with pytest.raises(ValueError):
            wulff_facet_test(Anisotropy.isotropic(), samples=100)

    def test_isotropic_has_no_facet(self):
        report = wulff_facet_test(Anisotropy.isotropic())
        assert not report.facet_found
        assert abs(report.facet_height - 1.0) <= 1e-15
        assert abs(report.min_tangential_eigenvalue - 1.0) <= 1e-10

    def test_cubic_small_a_has_no_facet(self):
        report = wulff_facet_test(Anisotropy.cubic(0.05))
        assert not report.facet_found

    def test_faceted_family_reports_design_facet(self):
        beta, gamma = 0.5, 1.0
        psi = Anisotropy.faceted(beta, gamma)
        report = wulff_facet_test(psi, samples=4000, tol=psi.facet_tol)
        assert report.facet_found
        assert report.facet_radius >= 0.9 * beta
        assert abs(report.facet_height - gamma) <= 1e-6
        assert report.min_tangential_eigenvalue <= 10 * gamma * psi.smoothing**2

    def test_report_invariant(self):
        with pytest.raises(ValueError):
            WulffReport(
                facet_found=True,
                facet_radius=0.0,
                facet_height=1.0,
                min_tangential_eigenvalue=0.0,
            )
