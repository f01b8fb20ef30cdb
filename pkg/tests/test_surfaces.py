import numpy as np
import pytest

from tomowave import (
    ObservationSurface,
    Sinogram,
    circle_surface,
    cube_surface,
    read_sinogram,
    sphere_surface,
    surface_from_descriptor,
    write_sinogram,
)
from tomowave.grid import HeaderError, TruncatedPayloadError


class TestSphere:
    def test_weights_sum_to_area(self):
        s = sphere_surface((0.1, -0.2, 0.3), 1.7, n_polar=12)
        assert s.area == pytest.approx(4 * np.pi * 1.7**2, rel=1e-12)
        assert s.num_detectors == 12 * 24

    def test_quadrature_integrates_polynomials(self):
        R = 1.3
        s = sphere_surface((0, 0, 0), R, n_polar=8)
        x, y, z = s.points.T
        # exact values: Int x^2 dA = 4 pi R^4 / 3, Int x y dA = 0
        assert np.sum(s.weights * x**2) == pytest.approx(4 * np.pi * R**4 / 3, rel=1e-12)
        assert np.sum(s.weights * x * y) == pytest.approx(0.0, abs=1e-12)
        assert np.sum(s.weights * z**4) == pytest.approx(4 * np.pi * R**6 / 5, rel=1e-12)

    def test_points_on_sphere_checked(self):
        s = sphere_surface((0, 0, 0), 1.0, n_polar=4)
        bad_points = s.points.copy()
        bad_points[3] *= 1.001
        with pytest.raises(ValueError):
            ObservationSurface(
                "sphere", bad_points, s.normals, s.weights, s.descriptor, s.structure
            )

    def test_positive_weights_required(self):
        s = sphere_surface((0, 0, 0), 1.0, n_polar=4)
        w = s.weights.copy()
        w[0] = 0.0
        with pytest.raises(ValueError):
            ObservationSurface("sphere", s.points, s.normals, w, s.descriptor, s.structure)

    def test_encloses(self):
        s = sphere_surface((0, 0, 0), 1.0, n_polar=6)
        inside = (np.full(3, -0.5), np.full(3, 0.5))
        outside = (np.full(3, -0.9), np.full(3, 0.9))  # corner norm > 1
        assert s.encloses(inside)
        assert not s.encloses(outside)


class TestCircle:
    def test_weights_and_normals(self):
        s = circle_surface((1.0, 2.0), 0.5, 64)
        assert s.area == pytest.approx(np.pi, rel=1e-12)
        assert np.allclose(np.linalg.norm(s.normals, axis=1), 1.0)
        assert np.allclose(s.points, np.array([1.0, 2.0]) + 0.5 * s.normals)


class TestCube:
    def test_2d_perimeter(self):
        s = cube_surface((0.0, 0.0), (2.0, 1.0), 16)
        assert s.area == pytest.approx(6.0, rel=1e-12)
        assert s.num_detectors == 4 * 16

    def test_3d_area_and_normals(self):
        s = cube_surface((0, 0, 0), (1, 1, 1), 8)
        assert s.area == pytest.approx(6.0, rel=1e-12)
        assert s.num_detectors == 6 * 64
        # outward normals: points on the low-x face have normal -e_x
        face0 = s.points[:64]
        assert np.allclose(face0[:, 0], 0.0)
        assert np.allclose(s.normals[:64], [-1.0, 0.0, 0.0])

    def test_encloses(self):
        s = cube_surface((0, 0), (1, 1), 8)
        assert s.encloses((np.array([0.2, 0.2]), np.array([0.8, 0.8])))
        assert not s.encloses((np.array([0.2, 0.2]), np.array([1.2, 0.8])))


class TestDescriptorRoundTrip:
    @pytest.mark.parametrize(
        "surface",
        [
            sphere_surface((0.1, 0.2, -0.3), 1.5, n_polar=6),
            circle_surface((0.0, 1.0), 2.0, 32),
            cube_surface((0, 0, 0), (1, 2, 3), 4),
            cube_surface((-1, -1), (1, 1), 8),
        ],
    )
    def test_rebuild_is_bit_exact(self, surface):
        rebuilt = surface_from_descriptor(surface.descriptor)
        assert np.array_equal(rebuilt.points, surface.points)
        assert np.array_equal(rebuilt.weights, surface.weights)
        assert np.array_equal(rebuilt.normals, surface.normals)


class TestSinogram:
    def make(self, kind="pressure", c=None):
        s = circle_surface((0, 0), 1.0, 8)
        values = np.arange(8.0 * 5).reshape(8, 5)
        return Sinogram(s, 0.1, values, kind, c)

    def test_times_and_radii(self):
        g = self.make("spherical_integral", c=2.0)
        assert np.allclose(g.times, [0.0, 0.1, 0.2, 0.3, 0.4])
        assert np.allclose(g.radii, [0.0, 0.2, 0.4, 0.6, 0.8])

    def test_spherical_kind_requires_speed(self):
        with pytest.raises(ValueError):
            self.make("spherical_mean")

    def test_kind_conversions_invert(self):
        g = self.make("spherical_integral", c=1.0)
        mean = g.as_mean_kind()
        back = mean.as_integral_kind()
        # r=0 column is lost in the mean (area zero); others must round trip
        assert np.allclose(back.values[:, 1:], g.values[:, 1:], rtol=1e-13)
        area = 2 * np.pi * g.radii[1:]
        assert np.allclose(mean.values[:, 1:], g.values[:, 1:] / area)

    def test_io_round_trip(self, tmp_path):
        for surface in (
            circle_surface((0, 0), 1.0, 8),
            sphere_surface((0, 0, 0), 1.0, n_polar=4),
            cube_surface((0, 0), (1, 1), 4),
        ):
            rng = np.random.default_rng(5)
            g = Sinogram(
                surface, 0.05, rng.standard_normal((surface.num_detectors, 7)),
                "pressure", 1.5,
            )
            path = tmp_path / "g.sin"
            write_sinogram(g, path)
            back = read_sinogram(path)
            assert back.kind == "pressure"
            assert back.dt == g.dt
            assert back.sound_speed == 1.5
            assert np.array_equal(back.values, g.values)
            assert np.array_equal(back.surface.points, g.surface.points)

    def test_truncated_sinogram(self, tmp_path):
        g = self.make()
        path = tmp_path / "g.sin"
        write_sinogram(g, path)
        data = path.read_bytes()
        path.write_bytes(data[:-16])
        with pytest.raises(TruncatedPayloadError):
            read_sinogram(path)

    def test_header_error(self, tmp_path):
        path = tmp_path / "g.sin"
        path.write_bytes(b"TATSIN01" + b'{"kind": "pressure"}\n')
        with pytest.raises(HeaderError):
            read_sinogram(path)
