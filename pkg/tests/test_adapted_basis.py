import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from billiards import adapted_basis as ab
from billiards.elliptic_geometry import EllipseParams, PeriodicFunction, TWO_PI, elliptic_to_cartesian
from billiards.errors import DomainError
from billiards.special_functions import complete_K

E0 = 0.5


def brute_inner(f, g, e0, weighted=True):
    """Straight adaptive quadrature in phi, no substitution and no panels."""
    w = (lambda p: ab.weight(p, e0) ** 2) if weighted else (lambda p: 1.0)
    return integrate.quad(lambda p: float(f(p)) * float(g(p)) * w(p), 0, TWO_PI,
                          epsabs=1e-13, epsrel=1e-13, limit=1000)[0]


@pytest.fixture(scope="module")
def corr():
    return ab.correlation_matrix(E0, 12)


def test_generators_at_circle_are_trig():
    phi = np.linspace(0, TWO_PI, 9)
    np.testing.assert_allclose(ab.generator("rotation", 0.0)(phi), np.sin(2 * phi), atol=1e-15)
    np.testing.assert_allclose(ab.mode("cos", 5, 0.0)(phi), np.cos(5 * phi), atol=1e-14)


def test_mode_rejects():
    with pytest.raises(DomainError):
        ab.mode("cos", 2, E0)
    with pytest.raises(DomainError):
        ab.generator("shear", E0)
    with pytest.raises(DomainError):
        ab.weighted_inner(ab.generator("trans1", E0), ab.generator("trans1", E0), 1.2)


@pytest.mark.parametrize("kind", ab.GENERATORS)
def test_generator_norms(kind):
    g = ab.generator(kind, 0.7)
    assert math.sqrt(brute_inner(g, g, 0.7)) == pytest.approx(ab.raw_weighted_norm(kind, 0.7), rel=1e-12)


@pytest.mark.parametrize("q", [3, 7, 15])
def test_quad_and_spectral_agree(q):
    c = ab.mode("cos", q, E0)
    f = PeriodicFunction(0.2, [0.1, 0.3, -0.2, 0.05, 0.0, 0.0, 0.1], [0.0, 0.2])
    quad = ab.weighted_inner(f, c, E0)
    spec = ab.weighted_inner(f, c, E0, method="spectral")
    assert quad == pytest.approx(spec, abs=1e-11)
    assert spec == pytest.approx(brute_inner(f, c, E0), abs=1e-10)


@pytest.mark.parametrize("q", [3, 8, 20])
def test_mode_norm_by_brute_force(q):
    c = ab.mode("sin", q, E0)
    assert ab.raw_weighted_norm("sin", E0, q) ** 2 == pytest.approx(brute_inner(c, c, E0), rel=1e-10)


def test_mode_l1_norm():
    """int |c_q| dphi over the substituted variable is 4K(k_q) * (2/pi) * 2 pi / 2 pi = 8K/pi."""
    c = ab.mode("cos", 6, E0)
    val = integrate.quad(lambda p: abs(c(p)), 0, TWO_PI, limit=500, epsabs=1e-12)[0]
    assert val == pytest.approx(8 * c.caustic.K / math.pi, rel=1e-8)


def test_norm_bounds():
    lo, hi = ab.norm_bounds(E0)
    for q in range(3, 31):
        for kind in ab.MODES:
            n2 = ab.raw_weighted_norm(kind, E0, q) ** 2
            assert lo <= n2 <= hi


@pytest.mark.parametrize("kind", ab.GENERATORS)
def test_generators_orthogonal_to_modes(kind):
    g = ab.generator(kind, E0)
    for q in range(3, 11):
        for m in ab.MODES:
            b = ab.mode(m, q, E0)
            assert abs(ab.weighted_inner(g, b, E0, weighted=False)) <= 1e-9
            assert abs(ab.weighted_inner(g, b, E0, weighted=False, method="spectral")) <= 1e-9


def test_integrability_residuals_detect_non_integrable():
    e = EllipseParams.from_eccentricity(E0)
    res = ab.integrability_residuals(e, PeriodicFunction(0.0, [0, 0, 0, 0, 1.0]), range(3, 8))
    assert max(abs(c) for _, c, _ in res) > 1e-3
    res = ab.integrability_residuals(e, ab.generator("rotation", E0), range(3, 8))
    assert max(max(abs(c), abs(s)) for _, c, s in res) < 1e-12


def test_basis_indexing():
    labels = [ab.basis_label(k) for k in range(9)]
    assert labels == ["homothety", "trans2", "trans1", "rotation", "hyprotation", "s3", "c3", "s4", "c4"]
    b = ab.basis_element(7, E0)
    assert (b.kind, b.q) == ("sin", 4)
    assert ab.weighted_inner(b, b, E0, method="spectral") == pytest.approx(1.0, abs=1e-13)


def test_gram_matrix():
    g = ab.gram_matrix(E0, 25)
    np.testing.assert_allclose(g, g.T, atol=1e-14)
    np.testing.assert_allclose(np.diag(g), 1.0, atol=1e-12)
    assert np.linalg.eigvalsh(g).min() > 0.5
    np.testing.assert_allclose(ab.gram_matrix(0.0, 15), np.eye(15), atol=1e-13)
    assert g[6, 8] == pytest.approx(ab.weighted_inner(ab.basis_element(6, E0), ab.basis_element(8, E0), E0), abs=1e-10)


@pytest.mark.parametrize("e0", [0.2, 0.5, 0.8])
def test_gram_positive_definite(e0):
    assert np.linalg.eigvalsh(ab.gram_matrix(e0, 25)).min() > 0


def test_correlation_entries_by_brute_force(corr):
    for q, j in [(3, 3), (5, 7), (12, 4), (9, 9)]:
        c = ab.mode("cos", j, E0)
        ref = brute_inner(lambda p: math.cos(q * p), c, E0, weighted=False)
        assert corr.entries[2 * q, 2 * j] == pytest.approx(ref, abs=1e-10)


def test_correlation_circle_is_diagonal():
    m = ab.correlation_matrix(0.0, 8)
    sub = m.entries[6:, 6:]
    np.testing.assert_allclose(np.diag(sub), math.pi, atol=1e-12)
    np.testing.assert_allclose(sub - np.diag(np.diag(sub)), 0.0, atol=1e-12)


def test_correlation_parity_pattern(corr):
    # cos rows never meet sin columns, and only offsets in q - j that are multiples of 2 survive
    assert np.max(np.abs(corr.entries[6::2, 7::2])) < 1e-12
    assert abs(corr.entries[2 * 5, 2 * 6]) < 1e-12
    assert abs(corr.entries[2 * 5, 2 * 7]) > 1e-4


def test_xi_rows_concentrate_on_diagonal():
    m = ab.correlation_matrix(E0, 20, rows="xi")
    for j in (12, 16, 20):
        k = ab.mode_caustic(E0, j // 2).k_lambda
        assert m.diagonal(j) == pytest.approx(2 * complete_K(k), rel=0.01)


def test_decay_fit_on_synthetic_matrix():
    n = 30
    i, h = np.meshgrid(range(n), range(n), indexing="ij")
    fake = ab.CorrelationMatrix(14, E0, np.exp(0.5 - 0.3 * np.abs(i - h)), np.eye(1))
    rho, alpha, r2, _ = ab.decay_fit(fake, 6, 29, envelope=False)
    assert (rho, alpha, r2) == pytest.approx((0.3, 0.5, 1.0), abs=1e-10)


def test_truncated_inversion_solves_system(corr):
    D, diag = ab.truncated_inversion(corr, 5)
    np.testing.assert_allclose(D @ diag["A"], diag["B"], atol=1e-12)
    assert np.all(diag["decay_slopes"] < 0)
    with pytest.raises(DomainError):
        ab.truncated_inversion(corr, 5, size=8)


@pytest.mark.parametrize("x,T", [(0.3, 0.5), (0.7, 0.2), (0.5, 1.0)])
def test_strip_integral_interior(x, T):
    ref = integrate.quad(lambda t: 1 / math.sqrt(1 - (x * math.cosh(t)) ** 2), 0, T, epsrel=1e-13)[0]
    assert ab.strip_integral(x, T) == pytest.approx(ref, rel=1e-11)
    assert ab.strip_integral(0.0, T) == T


@pytest.mark.parametrize("y", [0.2, 0.4, 0.6, 0.8])
def test_endpoint_identity(y):
    assert abs(ab.endpoint_identity(y) - complete_K(math.sqrt(1 - y * y))) <= 1e-10


def test_kappa():
    assert ab.kappa(0.0) == 0.0
    assert ab.kappa(0.5) > 0
    ks = np.linspace(0.05, 0.95, 10)
    assert np.all(np.diff([ab.kappa(k) for k in ks]) > 0)


def test_strip_widths_margins():
    for j, m in [(3, 4), (3, 60), (10, 30), (59, 60)]:
        w = ab.analyticity_widths(E0, j, m)
        assert w.margin_m > 0 and w.margin_inf > 0
    with pytest.raises(DomainError):
        ab.analyticity_widths(E0, 5, 5)


def test_deviation_scaling():
    e = EllipseParams.from_eccentricity(E0)
    rows = ab.deviation_check(e, [20, 40, 80])
    ks = [ab.mode_caustic(E0, q).k_lambda for q in (20, 40, 80)]
    assert all(k > E0 for k in ks) and ks[0] > ks[1] > ks[2]
    vals = [r[1] for r in rows]
    assert max(vals) / min(vals) < 1.1
    lam, bound, _ = ab.lambda_q_bound(e, 7)
    assert lam <= bound


# ---- projection and fitting


@settings(max_examples=15, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=5, max_size=5))
def test_projection_recovers_generator_coefficients(c):
    e = EllipseParams.from_eccentricity(0.4)
    mu = ab.generator_combination(0.4, *c)
    p = ab.project_elliptic_motions(e, mu)
    np.testing.assert_allclose(p.coeffs, c, atol=1e-12)
    assert p.residual.c1_norm() < 1e-11


def test_projection_residual_is_orthogonal():
    e = EllipseParams.from_eccentricity(E0)
    mu = PeriodicFunction(0.1, [0.2, 0.0, 0.3, 0.1], [0.0, -0.2, 0.0, 0.4])
    p = ab.project_elliptic_motions(e, mu)
    for kind in ab.GENERATORS:
        assert abs(ab.weighted_inner(p.residual, ab.generator(kind, E0), E0)) < 1e-12


@pytest.mark.parametrize("e0", [0.0, 0.3, 0.6])
@pytest.mark.parametrize("idx", range(5))
def test_motion_maps_generate_the_generators(e0, idx):
    """The motion read off a coefficient moves the ellipse by that generator to first order."""
    e = EllipseParams.from_eccentricity(e0) if e0 else EllipseParams.circle(1.0)
    coeffs = np.zeros(5)
    coeffs[idx] = eps = 1e-5
    lin, t, *_ = ab._motion(e, coeffs)
    moved = ab._image_ellipse(e, lin, t)
    phi = TWO_PI * np.arange(256) / 256
    pts = elliptic_to_cartesian(moved, moved.mu0, phi)
    mu = ab.perturbation_in_frame(e, pts, 8)
    expected = ab.generator_combination(e0, *coeffs)
    assert np.max(np.abs(mu(phi) - expected(phi))) < 50 * eps ** 2


def test_fit_of_moved_ellipse():
    e = EllipseParams.from_eccentricity(E0)
    target = EllipseParams.from_axes(e.a * (1 + 2e-4), e.b * (1 - 1e-4), 3e-4, -2e-4, 1e-4)
    phi = TWO_PI * np.arange(2048) / 2048
    mu = ab.perturbation_in_frame(e, elliptic_to_cartesian(target, target.mu0, phi))
    fitted, mu_new, rep = ab.best_ellipse_fit(e, mu)
    assert rep.residual_c1 < 1e-3 * rep.input_c1
    assert fitted.a == pytest.approx(target.a, abs=1e-6)


def test_fit_of_unperturbed_ellipse_is_identity():
    e = EllipseParams.from_eccentricity(E0)
    fitted, _, rep = ab.best_ellipse_fit(e, PeriodicFunction())
    assert fitted == e and rep.residual_c1 < 1e-14


@pytest.mark.parametrize("e0", [0.3, 0.6])
def test_fit_is_quadratic(e0):
    e = EllipseParams.from_eccentricity(e0)
    res = []
    for h in (1e-2, 5e-3):
        mu = ab.generator_combination(e0, *(h * np.array([0.7, -0.5, 0.4, 0.6, -0.8])))
        res.append(ab.best_ellipse_fit(e, mu)[2].residual_c1)
    assert 3.0 <= res[0] / res[1] <= 5.5


def test_passes_converge_quadratically_to_moved_ellipse():
    e = EllipseParams.from_eccentricity(E0)
    target = EllipseParams.from_axes(e.a * (1 + 2e-3), e.b * (1 - 1e-3), 3e-3, -2e-3, 1e-3)
    phi = TWO_PI * np.arange(2048) / 2048
    mu = ab.perturbation_in_frame(e, elliptic_to_cartesian(target, target.mu0, phi))
    res = [ab.best_ellipse_fit(e, mu, passes=p)[2].residual_c1 for p in (1, 2, 3)]
    assert res[1] < 10 * res[0] ** 2 / mu.c1_norm()
    assert res[2] < 1e-12
    fitted = ab.best_ellipse_fit(e, mu, passes=3)[0]
    assert (fitted.a, fitted.b, fitted.x0, fitted.y0) == pytest.approx(
        (target.a, target.b, target.x0, target.y0), abs=1e-13)
