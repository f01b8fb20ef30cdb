import numpy as np
import pytest

from tomowave import (
    Ball,
    GaussianBlob,
    GridSpec,
    PhantomDescriptor,
    Sinogram,
    analytic_circle_integrals,
    analytic_spherical_integrals,
    circle_surface,
    constant_field,
    means_from_pressure,
    pressure_from_means,
    rasterize_phantom,
    relative_rms,
    solve_wave_forward,
    sphere_surface,
    spherical_integrals_at,
    spherical_mean_transform,
)
from oracles import gaussian_pressure_trace, gaussian_sphere_integral, sphere_cap_integral


def cube_grid(n, half=1.0, dim=3):
    spacing = 2.0 * half / (n - 1)
    return GridSpec((n,) * dim, (spacing,) * dim, (-half,) * dim)


class TestSphericalIntegrals:
    def test_constant_field_gives_sphere_area(self):
        g = cube_grid(24)
        f = constant_field(g, 1.0)
        radii = np.array([0.1, 0.25, 0.4])
        vals = spherical_integrals_at(f, [(0.0, 0.0, 0.0)], radii)
        assert np.allclose(vals[0], 4 * np.pi * radii**2, rtol=1e-12)

    def test_constant_field_2d_gives_circumference(self):
        g = cube_grid(24, dim=2)
        f = constant_field(g, 1.0)
        radii = np.array([0.1, 0.3, 0.5])
        vals = spherical_integrals_at(f, [(0.0, 0.0)], radii)
        assert np.allclose(vals[0], 2 * np.pi * radii, rtol=1e-12)

    def test_cap_area_oracle(self):
        # ball indicator vs the analytic sphere-ball intersection area
        rho, d = 0.3, 0.55
        g = cube_grid(96)
        f = rasterize_phantom(PhantomDescriptor((Ball((0, 0, 0), rho),), 0.0), g)
        center = np.array([0.0, 0.0, -d])
        radii = np.linspace(0.05, 1.0, 39)
        got = spherical_integrals_at(f, [center], radii)[0]
        want = sphere_cap_integral(rho, d, radii)
        assert np.max(np.abs(got - want)) <= 0.005 * np.max(np.abs(want))

    def test_zero_beyond_support(self):
        g = cube_grid(24)
        f = rasterize_phantom(PhantomDescriptor((Ball((0, 0, 0), 0.2),), 0.0), g)
        # farthest support point from this center is 0.2 + 0.3
        vals = spherical_integrals_at(f, [(0.3, 0.0, 0.0)], np.array([0.6, 0.9]))
        assert np.all(vals == 0.0)

    def test_quadrature_matches_analytic_gaussian(self):
        g = cube_grid(64)
        desc = PhantomDescriptor((GaussianBlob((0.1, -0.05, 0.0), 0.15, 2.0),), 0.0)
        f = rasterize_phantom(desc, g)
        centers = np.array([[0.0, 0.0, -0.8], [0.5, 0.5, 0.5]])
        radii = np.linspace(0.1, 1.2, 23)
        got = spherical_integrals_at(f, centers, radii)
        want = analytic_spherical_integrals(desc, centers, radii)
        assert relative_rms(got, want) <= 0.005

    def test_analytic_gaussian_closed_form(self):
        desc = PhantomDescriptor((GaussianBlob((0.0, 0.0, 0.0), 0.2, 1.5),), 0.0)
        center = np.array([[0.0, 0.0, 0.7]])
        radii = np.linspace(0.05, 1.5, 30)
        got = analytic_spherical_integrals(desc, center, radii)[0]
        want = gaussian_sphere_integral(1.5, 0.2, 0.7, radii)
        assert np.allclose(got, want, rtol=1e-12, atol=1e-14)

    def test_analytic_circle_matches_grid_quadrature(self):
        g = cube_grid(96, dim=2)
        desc = PhantomDescriptor((GaussianBlob((0.1, 0.0), 0.15, 1.0),), 0.0)
        f = rasterize_phantom(desc, g)
        centers = np.array([[0.0, -0.9], [0.8, 0.2]])
        radii = np.linspace(0.1, 1.4, 27)
        got = spherical_integrals_at(f, centers, radii)
        want = analytic_circle_integrals(desc, centers, radii)
        assert relative_rms(got, want) <= 0.005

    def test_radii_validation(self):
        g = cube_grid(8)
        f = constant_field(g, 1.0)
        s = sphere_surface((0, 0, 0), 0.9, n_polar=4)
        with pytest.raises(ValueError):
            spherical_mean_transform(f, s, np.array([]))
        with pytest.raises(ValueError):
            spherical_mean_transform(f, s, np.array([0.3, 0.2]))
        with pytest.raises(ValueError):
            spherical_mean_transform(f, s, np.array([0.1, 0.3, 0.7]))

    def test_transform_packs_sinogram(self):
        g = cube_grid(16)
        f = constant_field(g, 1.0)
        s = sphere_surface((0, 0, 0), 0.5, n_polar=4)
        radii = 0.05 * np.arange(1, 6)
        sino = spherical_mean_transform(f, s, radii, c=2.0)
        assert sino.kind == "spherical_integral"
        assert sino.num_times == 6  # implicit r=0 column
        assert np.allclose(sino.radii, 0.05 * np.arange(6))
        assert np.all(sino.values[:, 0] == 0.0)


class TestPressureConversions:
    def trace_setup(self, c=1.0, w=0.1, d=1.0, dt=1e-3, T=3.0, amp=2.0):
        surface = sphere_surface((0, 0, 0), d, n_polar=2)
        t = np.arange(0.0, T, dt)
        desc = PhantomDescriptor((GaussianBlob((0.0, 0.0, 0.0), w, amp),), 0.0)
        g = analytic_spherical_integrals(desc, surface.points, c * t[1:])
        g = np.concatenate([np.zeros((g.shape[0], 1)), g], axis=1)
        means = Sinogram(surface, dt, g, "spherical_integral", c)
        return means, t, surface

    def test_zero_data(self):
        surface = sphere_surface((0, 0, 0), 1.0, n_polar=2)
        means = Sinogram(surface, 0.1, np.zeros((8, 12)), "spherical_integral", 1.0)
        p = pressure_from_means(means)
        assert np.all(p.values == 0.0)
        back = means_from_pressure(p, 1.0)
        assert np.all(back.values == 0.0)

    @pytest.mark.parametrize("c", [1.0, 2.0])
    def test_matches_closed_form_trace(self, c):
        # validates the 1/(4 pi c^2 t) conversion constant for c != 1
        means, t, surface = self.trace_setup(c=c)
        p = pressure_from_means(means)
        want = gaussian_pressure_trace(2.0, 0.1, 1.0, c, t)
        assert relative_rms(p.values[0], want) <= 1e-3

    def test_peak_arrival_time(self):
        dt = 2e-3
        c = 1.5
        w = 0.5 * c * dt
        means, t, surface = self.trace_setup(c=c, w=w, d=1.0, dt=dt, T=1.5)
        p = pressure_from_means(means)
        peak_time = t[np.argmax(np.abs(p.values[0]))]
        assert abs(peak_time - 1.0 / c) <= dt * (1 + 1e-9)

    def test_round_trip_identity(self):
        means, t, surface = self.trace_setup(dt=2.5e-4)
        p = pressure_from_means(means)
        back = means_from_pressure(p, 1.0)
        assert relative_rms(back.values, means.values) <= 1e-6

    def test_2d_rejected(self):
        surface = circle_surface((0, 0), 1.0, 8)
        means = Sinogram(surface, 0.1, np.zeros((8, 12)), "spherical_integral", 1.0)
        with pytest.raises(ValueError):
            pressure_from_means(means)


class TestSolverCrossValidation:
    """Desk-scale version of the forward cross-validation anchor."""

    def test_gaussian_solver_vs_kirchhoff(self):
        n = 64
        grid = cube_grid(n, half=1.15)
        desc = PhantomDescriptor((GaussianBlob((0.0, 0.0, 0.0), 0.13, 1.0),), 0.0)
        f = rasterize_phantom(desc, grid)
        surface = sphere_surface((0, 0, 0), 1.0, n_polar=6)
        c = 1.0
        T = 2.0
        sino = solve_wave_forward(f, c, surface, T)
        t = sino.times
        g = analytic_spherical_integrals(desc, surface.points, c * t[1:])
        g = np.concatenate([np.zeros((g.shape[0], 1)), g], axis=1)
        means = Sinogram(surface, sino.dt, g, "spherical_integral", c)
        want = pressure_from_means(means)
        assert relative_rms(sino.values, want.values) <= 0.02

    def test_ball_cap_area_from_solver(self):
        n = 64
        grid = cube_grid(n, half=1.15)
        desc = PhantomDescriptor((Ball((0.0, 0.0, 0.0), 0.4),), 0.0)
        f = rasterize_phantom(desc, grid)  # smoothed edge
        surface = sphere_surface((0, 0, 0), 1.0, n_polar=6)
        T = 2.0
        sino = solve_wave_forward(f, 1.0, surface, T)
        got = means_from_pressure(sino, 1.0)
        radii = got.radii
        want = analytic_spherical_integrals(
            desc, surface.points, radii[1:], smooth_width=max(grid.spacing)
        )
        want = np.concatenate([np.zeros((want.shape[0], 1)), want], axis=1)
        assert relative_rms(got.values, want) <= 0.02
