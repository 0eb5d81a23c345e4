"""Horizontal spectral transform and surface operators."""

import numpy as np
import pytest

from moistpe.core.errors import GaugeError, GridSizingError
from moistpe.numerics import sphere_ops
from moistpe.numerics.sphere_ops import VectorField


@pytest.fixture(scope="module")
def sphere():
    return sphere_ops.make_grid(7, 12, 24)


def random_coeffs(sphere, rng, levels=None, min_degree=0):
    tr = sphere_ops.get_transform(sphere)
    n = tr.L + 1
    shape = (n, n) if levels is None else (n, n, levels)
    c = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    c[:, 0] = c[:, 0].real
    mask = tr.mask if levels is None else tr.mask[:, :, None]
    c = np.where(mask, c, 0.0)
    c[:min_degree] = 0.0
    return c


@pytest.mark.unit
class TestGrid:
    """Gaussian grid construction."""

    def test_weights_integrate_constants(self, sphere):
        """Quadrature weights sum to the area of the unit sphere."""
        assert sphere.quad_weights.sum() == pytest.approx(4.0 * np.pi, rel=1e-13)

    def test_colatitude_increases(self, sphere):
        """Nodes run from north to south without touching the poles."""
        assert np.all(np.diff(sphere.theta_nodes) > 0)
        assert 0.0 < sphere.theta_nodes[0] and sphere.theta_nodes[-1] < np.pi

    @pytest.mark.parametrize("n_lat,n_lon", [(7, 24), (12, 14)])
    def test_too_coarse_grid_rejected(self, n_lat, n_lon):
        """Node counts below L+1 or 2L+1 are rejected."""
        with pytest.raises(GridSizingError):
            sphere_ops.make_grid(7, n_lat, n_lon)

    def test_alias_free_flag(self, sphere):
        """The test grid satisfies the three-halves rule; the minimal one does not."""
        assert sphere.alias_free
        assert not sphere_ops.make_grid(7, 8, 15).alias_free


@pytest.mark.unit
class TestScalarTransform:
    """Analysis, synthesis and harmonics."""

    def test_synthesis_then_analysis_recovers_coefficients(self, sphere, rng):
        """Band-limited coefficients survive a trip through the grid."""
        tr = sphere_ops.get_transform(sphere)
        c = random_coeffs(sphere, rng, levels=3)
        np.testing.assert_allclose(tr.analyze(tr.synthesize(c)), c, atol=1e-12)

    @pytest.mark.parametrize("l,m", [(0, 0), (1, 0), (3, 2), (7, 7)])
    def test_cosine_harmonic_coefficient(self, sphere, l, m):
        """A real cosine harmonic has a single real coefficient at (l, m)."""
        tr = sphere_ops.get_transform(sphere)
        c = tr.analyze(sphere_ops.spherical_harmonic(sphere, l, m, "cos"))
        expected = np.zeros_like(c)
        expected[l, m] = 1.0 if m == 0 else 1.0 / np.sqrt(2.0)
        np.testing.assert_allclose(c, expected, atol=1e-13)

    def test_harmonics_are_orthonormal(self, sphere):
        """Real harmonics have unit norm and are mutually orthogonal."""
        a = sphere_ops.spherical_harmonic(sphere, 4, 3, "sin")
        b = sphere_ops.spherical_harmonic(sphere, 5, 3, "sin")
        assert sphere_ops.inner(sphere, a, a) == pytest.approx(1.0, rel=1e-13)
        assert abs(sphere_ops.inner(sphere, a, b)) < 1e-14

    def test_harmonic_outside_truncation(self, sphere):
        """Degrees above L are rejected."""
        with pytest.raises(GridSizingError):
            sphere_ops.spherical_harmonic(sphere, 8, 0)

    @pytest.mark.parametrize(
        "l,m,part", [(1, 1, "cos"), (2, 0, "cos"), (5, 4, "sin"), (7, 3, "cos")]
    )
    def test_laplacian_eigenrelation(self, sphere, l, m, part):
        """Every harmonic is an eigenfunction with eigenvalue -l(l+1)."""
        Y = sphere_ops.spherical_harmonic(sphere, l, m, part)
        np.testing.assert_allclose(sphere_ops.lap_scalar(sphere, Y), -l * (l + 1) * Y, atol=1e-11)


@pytest.mark.unit
class TestVectorOperators:
    """Gradient, divergence, vorticity and the Poisson solve."""

    def test_divergence_of_gradient_is_laplacian(self, sphere, rng):
        """div grad h = lap h."""
        tr = sphere_ops.get_transform(sphere)
        h = tr.synthesize(random_coeffs(sphere, rng))
        np.testing.assert_allclose(
            sphere_ops.div(sphere, sphere_ops.grad(sphere, h)),
            sphere_ops.lap_scalar(sphere, h),
            atol=1e-10,
        )

    def test_gradient_has_no_vorticity(self, sphere, rng):
        """Gradients are curl-free."""
        tr = sphere_ops.get_transform(sphere)
        h = tr.synthesize(random_coeffs(sphere, rng))
        assert np.max(np.abs(sphere_ops.vorticity(sphere, sphere_ops.grad(sphere, h)))) < 1e-10

    def test_toroidal_field_is_divergence_free(self, sphere, rng):
        """A pure streamfunction field has zero divergence."""
        tr = sphere_ops.get_transform(sphere)
        psi = random_coeffs(sphere, rng, min_degree=1)
        v = tr.synthesize_vector(np.zeros_like(psi), psi)
        assert np.max(np.abs(sphere_ops.div(sphere, v))) < 1e-10

    def test_vector_analysis_recovers_potentials(self, sphere, rng):
        """(chi, psi) survive synthesis and analysis for degrees l >= 1."""
        tr = sphere_ops.get_transform(sphere)
        chi = random_coeffs(sphere, rng, levels=2, min_degree=1)
        psi = random_coeffs(sphere, rng, levels=2, min_degree=1)
        chi2, psi2 = tr.analyze_vector(tr.synthesize_vector(chi, psi))
        np.testing.assert_allclose(chi2, chi, atol=1e-12)
        np.testing.assert_allclose(psi2, psi, atol=1e-12)

    def test_gradient_orthogonal_to_toroidal_field(self, sphere, rng):
        """<grad h, e_r x grad psi> = 0."""
        tr = sphere_ops.get_transform(sphere)
        g = sphere_ops.grad(sphere, tr.synthesize(random_coeffs(sphere, rng)))
        psi = random_coeffs(sphere, rng, min_degree=1)
        v = tr.synthesize_vector(np.zeros_like(psi), psi)
        scale = np.sqrt(
            sphere_ops.inner_vector(sphere, g, g) * sphere_ops.inner_vector(sphere, v, v)
        )
        assert abs(sphere_ops.inner_vector(sphere, g, v)) <= 1e-12 * scale

    def test_poisson_solve_inverts_laplacian(self, sphere, rng):
        """The mean-zero part of h is recovered from lap h."""
        tr = sphere_ops.get_transform(sphere)
        c = random_coeffs(sphere, rng)
        h = tr.synthesize(c)
        c[0, 0] = 0.0
        recovered = sphere_ops.poisson_solve(sphere, sphere_ops.lap_scalar(sphere, h))
        np.testing.assert_allclose(recovered, tr.synthesize(c), atol=1e-11)

    def test_poisson_gauge_error(self, sphere):
        """A right-hand side with nonzero mean is rejected when projection is off."""
        with pytest.raises(GaugeError):
            sphere_ops.poisson_solve(sphere, np.ones(sphere.shape), project=False)

    def test_poisson_projects_mean(self, sphere):
        """With projection on, a constant right-hand side gives a zero solution."""
        phi = sphere_ops.poisson_solve(sphere, np.ones(sphere.shape))
        assert np.max(np.abs(phi)) < 1e-12

    def test_vector_field_arithmetic(self):
        """Component-wise arithmetic and the pointwise dot product."""
        a = VectorField(np.ones(3), 2.0 * np.ones(3))
        b = VectorField(np.zeros(3), np.ones(3))
        np.testing.assert_array_equal((a + b).phi, 3.0 * np.ones(3))
        np.testing.assert_array_equal((a - b).theta, np.ones(3))
        np.testing.assert_array_equal((2.0 * a).phi, 4.0 * np.ones(3))
        np.testing.assert_array_equal(a.dot(b), 2.0 * np.ones(3))
        assert a.is_finite()
        assert not VectorField(np.array([np.nan]), np.zeros(1)).is_finite()


@pytest.mark.unit
class TestClosedForms:
    """Operators on fields with known closed forms."""

    def test_gradient_of_cosine(self, sphere):
        """grad cos(theta) = (-sin(theta), 0)."""
        h = np.repeat(sphere.cos_theta[:, None], sphere.n_lon, axis=1)
        g = sphere_ops.grad(sphere, h)
        expected = -sphere.sin_theta[:, None] * np.ones(sphere.n_lon)
        np.testing.assert_allclose(g.theta, expected, atol=1e-13)
        np.testing.assert_allclose(g.phi, 0.0, atol=1e-13)

    def test_divergence_of_meridional_field(self, sphere):
        """div (sin(theta), 0) = 2 cos(theta)."""
        ones = np.ones(sphere.n_lon)
        v = VectorField(sphere.sin_theta[:, None] * ones, np.zeros(sphere.shape))
        np.testing.assert_allclose(
            sphere_ops.div(sphere, v), 2.0 * sphere.cos_theta[:, None] * ones, atol=1e-12
        )

    def test_integral_of_cosine_squared(self, sphere):
        """The integral of cos^2(theta) over the sphere is 4 pi / 3."""
        f = np.repeat(sphere.cos_theta[:, None] ** 2, sphere.n_lon, axis=1)
        assert sphere_ops.sphere_integral(sphere, f) == pytest.approx(4.0 * np.pi / 3.0, rel=1e-13)

    def test_integral_keeps_trailing_axes(self, sphere):
        """Level axes survive the surface quadrature."""
        f = np.ones(sphere.shape + (3,)) * np.array([1.0, 2.0, 3.0])
        np.testing.assert_allclose(
            sphere_ops.sphere_integral(sphere, f), 4.0 * np.pi * np.array([1.0, 2.0, 3.0])
        )

    @pytest.mark.parametrize("l,m,part", [(2, 0, "cos"), (3, 1, "cos"), (4, 2, "sin")])
    def test_scalar_advection_by_solid_body_rotation(self, sphere, l, m, part):
        """Rotation about the pole advects a harmonic by its longitude derivative."""
        v = VectorField(np.zeros(sphere.shape), sphere.sin_theta[:, None] * np.ones(sphere.n_lon))
        h = sphere_ops.spherical_harmonic(sphere, l, m, part)
        if m == 0:
            expected = np.zeros(sphere.shape)
        elif part == "cos":
            expected = -m * sphere_ops.spherical_harmonic(sphere, l, m, "sin")
        else:
            expected = m * sphere_ops.spherical_harmonic(sphere, l, m, "cos")
        np.testing.assert_allclose(sphere_ops.advect_scalar(sphere, v, h), expected, atol=1e-12)

    def test_vector_advection_by_solid_body_rotation(self, sphere):
        """A rotating sphere accelerates toward its axis: nabla_v v = (-sin cos, 0)."""
        ones = np.ones(sphere.n_lon)
        v = VectorField(np.zeros(sphere.shape), sphere.sin_theta[:, None] * ones)
        result = sphere_ops.advect_vector(sphere, v, v)
        expected = -(sphere.sin_theta * sphere.cos_theta)[:, None] * ones
        np.testing.assert_allclose(result.theta, expected, atol=1e-12)
        np.testing.assert_allclose(result.phi, 0.0, atol=1e-12)

    def test_vector_advection_keeps_level_axes(self, sphere):
        """Level-stacked velocities are advected level by level."""
        ones = np.ones(sphere.n_lon)
        base = VectorField(np.zeros(sphere.shape), sphere.sin_theta[:, None] * ones)
        stacked = VectorField(
            np.stack([base.theta, 2.0 * base.theta], axis=-1),
            np.stack([base.phi, 2.0 * base.phi], axis=-1),
        )
        result = sphere_ops.advect_vector(sphere, stacked, stacked)
        single = sphere_ops.advect_vector(sphere, base, base)
        np.testing.assert_allclose(result.theta[..., 1], 4.0 * single.theta, atol=1e-12)


@pytest.mark.unit
class TestMinimalGrid:
    """The coarsest alias-free grid, L = 1 on 2 x 4 nodes."""

    @pytest.fixture(scope="class")
    def minimal(self):
        return sphere_ops.make_grid(1, 2, 4)

    def test_quadrature_exact(self, minimal):
        """Two Gaussian latitudes integrate constants and cos^2(theta) exactly."""
        assert minimal.alias_free
        assert minimal.quad_weights.sum() == pytest.approx(4.0 * np.pi, rel=1e-13)
        f = np.repeat(minimal.cos_theta[:, None] ** 2, minimal.n_lon, axis=1)
        assert sphere_ops.sphere_integral(minimal, f) == pytest.approx(4.0 * np.pi / 3.0)

    def test_transform_round_trip(self, minimal, rng):
        """Degree-one coefficients survive synthesis and analysis."""
        tr = sphere_ops.get_transform(minimal)
        c = random_coeffs(minimal, rng)
        np.testing.assert_allclose(tr.analyze(tr.synthesize(c)), c, atol=1e-13)

    @pytest.mark.parametrize("m,part", [(0, "cos"), (1, "cos"), (1, "sin")])
    def test_degree_one_eigenrelation(self, minimal, m, part):
        """Degree-one harmonics have Laplacian eigenvalue -2."""
        Y = sphere_ops.spherical_harmonic(minimal, 1, m, part)
        np.testing.assert_allclose(sphere_ops.lap_scalar(minimal, Y), -2.0 * Y, atol=1e-13)
