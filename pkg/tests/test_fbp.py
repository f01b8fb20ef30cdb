import numpy as np
import pytest

from tomowave import (
    Ball,
    FbpVariant,
    GaussianBlob,
    GridSpec,
    PhantomDescriptor,
    Sinogram,
    analytic_spherical_integrals,
    filter_radial,
    rasterize_phantom,
    reconstruct_fbp,
    relative_l2,
    sphere_surface,
)


def cube_grid(n, half=1.0, dim=3):
    spacing = 2.0 * half / (n - 1)
    return GridSpec((n,) * dim, (spacing,) * dim, (-half,) * dim)


def make_sinogram(fn, n_det_polar=8, n_r=80, r_max=2.0, R=1.0):
    surface = sphere_surface((0, 0, 0), R, n_polar=n_det_polar)
    dr = r_max / n_r
    r = dr * np.arange(n_r + 1)
    values = np.broadcast_to(fn(r), (surface.num_detectors, r.size)).copy()
    return Sinogram(surface, dr, values, "spherical_integral", 1.0)


class TestFilterRadial:
    def test_quadratic_under_second_radial(self):
        g = make_sinogram(lambda r: r**2)
        out = filter_radial(g, FbpVariant.SECOND_RADIAL)
        r = g.radii
        want = 2.0 / r[1:]
        assert np.allclose(out.values[0, 1:], want, rtol=1e-9)

    def test_linear_under_nested_radial(self):
        g = make_sinogram(lambda r: r)
        out = filter_radial(g, FbpVariant.NESTED_RADIAL)
        # g/r is constant, so the nested derivative vanishes
        assert np.max(np.abs(out.values[:, 1:])) <= 1e-10

    def test_g_over_r_for_laplacian_variant(self):
        g = make_sinogram(lambda r: np.sin(r))
        out = filter_radial(g, FbpVariant.LAPLACIAN_OUTSIDE)
        r = g.radii
        assert np.allclose(out.values[0, 1:], np.sin(r[1:]) / r[1:], rtol=1e-12)

    def test_smooth_function_matches_closed_form_derivatives(self):
        # g(r) = sin(a r) * r^2: closed-form radial filters, O(dr^2) match
        a = 2.3

        def g_fn(r):
            return np.sin(a * r) * r**2

        def second_exact(r):
            # d2/dr2 [sin(ar) r^2] / r
            d2 = (
                -(a**2) * r**2 * np.sin(a * r)
                + 4 * a * r * np.cos(a * r)
                + 2 * np.sin(a * r)
            )
            return d2 / r

        errors = []
        for n_r in (100, 200):
            g = make_sinogram(g_fn, n_r=n_r)
            out = filter_radial(g, FbpVariant.SECOND_RADIAL)
            r = g.radii
            err = np.abs(out.values[0, 2:-2] - second_exact(r[2:-2])).max()
            errors.append(err)
        assert errors[0] <= 0.02
        # halving dr should cut the error about 4x (second order)
        assert errors[1] <= errors[0] / 3.0

    def test_too_few_radii_rejected(self):
        surface = sphere_surface((0, 0, 0), 1.0, n_polar=2)
        g = Sinogram(surface, 0.1, np.zeros((8, 4)), "spherical_integral", 1.0)
        with pytest.raises(ValueError):
            filter_radial(g, FbpVariant.SECOND_RADIAL)

    def test_mean_kind_converted(self):
        g = make_sinogram(lambda r: r**2)
        mean = g.as_mean_kind()
        out_int = filter_radial(g, FbpVariant.SECOND_RADIAL)
        out_mean = filter_radial(mean, FbpVariant.SECOND_RADIAL)
        assert np.allclose(out_int.values[:, 2:], out_mean.values[:, 2:], rtol=1e-9)


def gaussian_ball_data(n_polar=16, n_r=200, R=1.0, r_max=2.0):
    # supports sized to fit inside the cube inscribed in the unit sphere
    desc = PhantomDescriptor(
        (
            GaussianBlob((0.12, -0.08, 0.0), 0.095, 1.0),
            GaussianBlob((-0.13, 0.1, 0.05), 0.075, 0.6),
        ),
        0.0,
    )
    surface = sphere_surface((0, 0, 0), R, n_polar=n_polar)
    dr = r_max / n_r
    radii = dr * np.arange(1, n_r + 1)
    values = analytic_spherical_integrals(desc, surface.points, radii)
    values = np.concatenate([np.zeros((values.shape[0], 1)), values], axis=1)
    sino = Sinogram(surface, dr, values, "spherical_integral", 1.0)
    return desc, sino


class TestReconstruct:
    def test_zero_data_zero_image(self):
        surface = sphere_surface((0, 0, 0), 1.0, n_polar=6)
        g = Sinogram(surface, 0.02, np.zeros((surface.num_detectors, 101)),
                     "spherical_integral", 1.0)
        out = reconstruct_fbp(g, FbpVariant.SECOND_RADIAL, cube_grid(16, half=0.5))
        assert np.all(out.values == 0.0)

    def test_pressure_kind_rejected(self):
        surface = sphere_surface((0, 0, 0), 1.0, n_polar=4)
        g = Sinogram(surface, 0.02, np.zeros((surface.num_detectors, 101)), "pressure")
        with pytest.raises(ValueError):
            reconstruct_fbp(g, FbpVariant.SECOND_RADIAL, cube_grid(8, half=0.5))

    def test_points_outside_sphere_rejected(self):
        _, sino = gaussian_ball_data(n_polar=4, n_r=50)
        with pytest.raises(ValueError):
            reconstruct_fbp(sino, FbpVariant.SECOND_RADIAL, cube_grid(16, half=1.2))

    def test_radial_range_warning_and_reject(self):
        desc, sino = gaussian_ball_data(n_polar=4, n_r=40, r_max=1.2)
        grid = cube_grid(8, half=0.4)
        with pytest.warns(UserWarning, match="zero-extending"):
            reconstruct_fbp(sino, FbpVariant.SECOND_RADIAL, grid)
        with pytest.raises(ValueError):
            reconstruct_fbp(sino, FbpVariant.SECOND_RADIAL, grid, zero_extend=False)

    def test_exterior_support_warning(self):
        desc, sino = gaussian_ball_data(n_polar=4, n_r=50)
        big = cube_grid(24, half=1.6)
        truth = rasterize_phantom(
            PhantomDescriptor((Ball((0.0, 0.0, 1.2), 0.15),), 0.0), big
        )
        with pytest.warns(UserWarning, match="outside the observation sphere"):
            reconstruct_fbp(
                sino, FbpVariant.SECOND_RADIAL, cube_grid(8, half=0.5),
                ground_truth=truth,
            )

    @pytest.mark.parametrize(
        "variant",
        [FbpVariant.LAPLACIAN_OUTSIDE, FbpVariant.SECOND_RADIAL, FbpVariant.NESTED_RADIAL],
    )
    def test_gaussian_phantom_reconstruction(self, variant):
        desc, sino = gaussian_ball_data(n_polar=16, n_r=250)
        grid = cube_grid(40, half=0.54)
        truth = rasterize_phantom(desc, grid)
        out = reconstruct_fbp(sino, variant, grid)
        assert relative_l2(out.values, truth.values) <= 0.05

    def test_cross_variant_agreement(self):
        desc, sino = gaussian_ball_data(n_polar=16, n_r=250)
        grid = cube_grid(40, half=0.54)
        fields = [
            reconstruct_fbp(sino, v, grid).values
            for v in (
                FbpVariant.LAPLACIAN_OUTSIDE,
                FbpVariant.SECOND_RADIAL,
                FbpVariant.NESTED_RADIAL,
            )
        ]
        for i in range(3):
            for j in range(i + 1, 3):
                assert relative_l2(fields[i], fields[j]) <= 0.02

    def test_linearity(self):
        desc, sino = gaussian_ball_data(n_polar=6, n_r=60)
        grid = cube_grid(12, half=0.5)
        out1 = reconstruct_fbp(sino, FbpVariant.SECOND_RADIAL, grid)
        scaled = sino.with_values(3.0 * sino.values)
        out3 = reconstruct_fbp(scaled, FbpVariant.SECOND_RADIAL, grid)
        assert np.allclose(out3.values, 3.0 * out1.values, rtol=1e-12, atol=1e-14)
