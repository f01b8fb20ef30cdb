import numpy as np
import pytest

from tomowave import (
    Ball,
    EigenBasis,
    GridSpec,
    PhantomDescriptor,
    Sinogram,
    coefficients_from_gk,
    cube_surface,
    dst_output_grid,
    project_boundary_data,
    rasterize_phantom,
    read_coefficients,
    relative_l2,
    solve_wave_forward,
    synthesize_field,
    write_coefficients,
)
from tomowave.series import ModeCoefficients, ModeTimeSeries, modes_up_to_lambda


def unit_square_surface(n=32):
    return cube_surface((-1.0, -1.0), (1.0, 1.0), n)


def normal_derivative(basis, mode_idx, points, normals):
    """Independent evaluation of dpsi/dn at surface points."""
    m = basis.modes[mode_idx]
    L = basis.lengths
    lo = np.asarray(basis.lo)
    k = m * np.pi / L
    vals = np.zeros(points.shape[0])
    for i in range(points.shape[0]):
        n_vec = normals[i]
        ax = int(np.argmax(np.abs(n_vec)))
        prod = np.sqrt(2.0 / L[ax]) * k[ax] * np.cos(k[ax] * (points[i, ax] - lo[ax]))
        for a in range(basis.dim):
            if a != ax:
                prod *= np.sqrt(2.0 / L[a]) * np.sin(k[a] * (points[i, a] - lo[a]))
        vals[i] = prod * np.sign(n_vec[ax])
    return vals


class TestBasis:
    def test_mode_enumeration(self):
        modes = modes_up_to_lambda((0, 0), (1, 1), 1.0, np.pi * np.sqrt(8.0) + 1e-9)
        got = {tuple(m) for m in modes}
        assert got == {(1, 1), (1, 2), (2, 1), (2, 2)}

    def test_lambdas(self):
        basis = EigenBasis((0.0, 0.0), (1.0, 2.0), 2.0, np.array([[1, 1], [2, 3]]))
        want = 2.0 * np.pi * np.sqrt(np.array([1 + 0.25, 4 + 2.25]))
        assert np.allclose(basis.lambdas, want)

    def test_eigenfunctions_orthonormal(self):
        basis = EigenBasis(
            (0.0, 0.0), (1.0, 1.5), 1.0, np.array([[1, 1], [2, 1], [1, 3]])
        )
        n = 400
        grid = GridSpec((n, n), (1.0 / n, 1.5 / n), (0.5 / n, 0.75 / n))
        psi = basis.evaluate_modes(grid)  # midpoint lattice
        cell = grid.cell_volume
        gram = np.einsum("mij,nij->mn", psi, psi) * cell
        assert np.allclose(gram, np.eye(3), atol=1e-6)

    def test_nyquist_truncation(self):
        surface = unit_square_surface(16)
        basis = EigenBasis.for_surface(surface, c=1.0)
        assert basis.modes.max() <= 8
        assert np.all(basis.lambdas <= np.pi * 16 / 2.0 / 2.0 * (1 + 1e-9))


class TestProjection:
    def test_zero_data(self):
        surface = unit_square_surface(16)
        basis = EigenBasis.for_surface(surface, c=1.0)
        g = Sinogram(surface, 0.1, np.zeros((surface.num_detectors, 6)), "pressure")
        gk = project_boundary_data(g, basis)
        assert np.all(gk.values == 0.0)

    def test_single_face_oracle(self):
        surface = unit_square_surface(32)
        basis = EigenBasis.for_surface(surface, c=1.0)
        # target mode (3, 2): boundary data = dpsi/dn on the low-x edge only
        target = int(
            np.nonzero((basis.modes[:, 0] == 3) & (basis.modes[:, 1] == 2))[0][0]
        )
        dpsi = normal_derivative(basis, target, surface.points, surface.normals)
        values = np.zeros((surface.num_detectors, 3))
        values[:32] = dpsi[:32, None]  # face 0 = low-x edge
        g = Sinogram(surface, 0.1, values, "pressure")
        gk = project_boundary_data(g, basis)
        L1 = 2.0
        k1 = 3 * np.pi / L1
        want = (2.0 / L1) * k1**2  # Int over one face of (dpsi/dn)^2
        assert gk.values[target, 0] == pytest.approx(want, rel=1e-12)
        assert gk.values[target, 0] > 0

    def test_orthogonality_across_modes(self):
        surface = unit_square_surface(32)
        basis = EigenBasis.for_surface(surface, c=1.0)
        target = int(
            np.nonzero((basis.modes[:, 0] == 3) & (basis.modes[:, 1] == 2))[0][0]
        )
        dpsi = normal_derivative(basis, target, surface.points, surface.normals)
        g = Sinogram(surface, 0.1, np.tile(dpsi[:, None], (1, 2)), "pressure")
        gk = project_boundary_data(g, basis)
        other = (basis.modes[:, 0] != 3) & (basis.modes[:, 1] != 2)
        scale = np.abs(gk.values[target, 0])
        assert np.max(np.abs(gk.values[other, 0])) <= 1e-10 * scale

    def test_aliasing_guard(self):
        surface = unit_square_surface(8)
        basis = EigenBasis(
            (-1.0, -1.0), (1.0, 1.0), 1.0, np.array([[1, 1], [4, 1]])
        )
        g = Sinogram(surface, 0.1, np.zeros((surface.num_detectors, 3)), "pressure")
        with pytest.raises(ValueError, match="aliasing"):
            project_boundary_data(g, basis)

    def test_box_mismatch_rejected(self):
        surface = unit_square_surface(16)
        basis = EigenBasis((0.0, 0.0), (1.0, 1.0), 1.0, np.array([[1, 1]]))
        g = Sinogram(surface, 0.1, np.zeros((surface.num_detectors, 3)), "pressure")
        with pytest.raises(ValueError, match="box"):
            project_boundary_data(g, basis)


class TestCoefficients:
    def small_basis(self):
        return EigenBasis(
            (-1.0, -1.0), (1.0, 1.0), 1.0, np.array([[1, 1], [2, 1], [2, 2]])
        )

    def test_zero_gk(self):
        basis = self.small_basis()
        gk = ModeTimeSeries(basis, 1e-3, np.zeros((3, 5001)))
        for formula in "ABC":
            coeffs = coefficients_from_gk(gk, formula=formula)
            assert np.all(coeffs.values == 0.0)

    def test_cosine_oracle_formula_c(self):
        basis = self.small_basis()
        lam = basis.lambdas
        T = 5.0
        dt = 5e-4
        t = np.arange(0.0, T + dt / 2, dt)
        values = np.cos(np.outer(lam, t))
        with pytest.warns(UserWarning, match="not decayed"):
            coeffs = coefficients_from_gk(
                ModeTimeSeries(basis, dt, values), formula="C"
            )
        T_end = t[-1]
        want = -(1.0 - np.cos(2 * lam * T_end)) / (4.0 * lam**2)
        assert np.allclose(coeffs.values, want, rtol=0, atol=2e-4 / lam.min() ** 2)

    def test_tail_warning_has_estimate(self):
        basis = self.small_basis()
        values = np.ones((3, 100))
        with pytest.warns(UserWarning, match="tail"):
            coefficients_from_gk(ModeTimeSeries(basis, 0.01, values))

    def test_io_round_trip(self, tmp_path):
        basis = self.small_basis()
        coeffs = ModeCoefficients(
            basis.lo, basis.hi, basis.c, basis.modes, np.array([1.0, -0.5, 0.25]), 9.0
        )
        path = tmp_path / "c.mod"
        write_coefficients(coeffs, path)
        back = read_coefficients(path)
        assert back.lo == coeffs.lo and back.hi == coeffs.hi
        assert np.array_equal(back.modes, coeffs.modes)
        assert np.array_equal(back.values, coeffs.values)
        assert back.lambda_max == 9.0


class TestSynthesis:
    def test_single_mode_reproduces_eigenfunction(self):
        basis = EigenBasis((-1.0, -1.0), (1.0, 1.0), 1.0, np.array([[2, 3]]))
        coeffs = ModeCoefficients(
            basis.lo, basis.hi, 1.0, basis.modes, np.array([1.0]), 10.0
        )
        grid = dst_output_grid(basis.lo, basis.hi, 32)
        out = synthesize_field(coeffs, grid)
        want = basis.evaluate_modes(grid)[0]
        assert np.allclose(out.values, want, atol=1e-12)

    def test_dst_and_direct_agree(self):
        rng = np.random.default_rng(11)
        modes = modes_up_to_lambda((-1, -1), (1, 1), 1.0, 20.0)
        vals = rng.standard_normal(modes.shape[0])
        coeffs = ModeCoefficients((-1, -1), (1, 1), 1.0, modes, vals, 20.0)
        grid = dst_output_grid((-1, -1), (1, 1), 48)
        fast = synthesize_field(coeffs, grid, method="dst")
        direct = synthesize_field(coeffs, grid, method="direct")
        assert np.max(np.abs(fast.values - direct.values)) <= 1e-12

    def test_empty_coefficients_rejected(self):
        coeffs = ModeCoefficients(
            (-1, -1), (1, 1), 1.0, np.zeros((0, 2), dtype=int), np.zeros(0), 0.0
        )
        with pytest.raises(ValueError, match="empty"):
            synthesize_field(coeffs, dst_output_grid((-1, -1), (1, 1), 8))

    def test_grid_outside_box_rejected(self):
        coeffs = ModeCoefficients(
            (-1, -1), (1, 1), 1.0, np.array([[1, 1]]), np.ones(1), 5.0
        )
        bad = GridSpec((4, 4), (1.0, 1.0), (0.0, 0.0))
        with pytest.raises(ValueError, match="inside"):
            synthesize_field(coeffs, bad)


def run_pipeline_2d(n_det=64, with_exterior=False, formula="B", lambda_frac=1.0):
    """Forward solve on a square, project, recover coefficients, synthesize."""
    surface = cube_surface((-1.0, -1.0), (1.0, 1.0), n_det)
    grid = GridSpec((161, 161), (2.5 / 160, 2.5 / 160), (-1.25, -1.25))
    prims = [Ball((0.1, -0.05), 0.35, 1.0)]
    if with_exterior:
        prims.append(Ball((1.13, 0.0), 0.08, 1.0))
    desc = PhantomDescriptor(tuple(prims), 0.0)
    f = rasterize_phantom(desc, grid)
    T = 3.0 * 2.0 * np.sqrt(2.0)
    sino = solve_wave_forward(
        f, 1.0, surface, T, allow_exterior_support=with_exterior
    )
    basis = EigenBasis.for_surface(surface, c=1.0)
    if lambda_frac < 1.0:
        basis = EigenBasis.for_surface(
            surface, c=1.0, lambda_max=lambda_frac * basis.lambdas.max()
        )
    gk = project_boundary_data(sino, basis)
    coeffs = coefficients_from_gk(gk, formula=formula)
    out_grid = dst_output_grid((-1.0, -1.0), (1.0, 1.0), n_det)
    recon = synthesize_field(coeffs, out_grid)
    truth_interior = rasterize_phantom(
        PhantomDescriptor((prims[0],), 0.0), grid
    )
    return basis, coeffs, recon, out_grid, truth_interior, desc


def direct_coefficients(basis, desc, n_fine=512):
    """Independent oracle: midpoint-quadrature inner products <f, psi_k>."""
    lo = np.asarray(basis.lo)
    hi = np.asarray(basis.hi)
    spacing = (hi - lo) / n_fine
    grid = GridSpec(
        (n_fine, n_fine), tuple(spacing), tuple(lo + spacing / 2)
    )
    f = rasterize_phantom(desc, grid, smooth=True)
    psi = basis.evaluate_modes(grid)
    return np.einsum("mij,ij->m", psi, f.values) * grid.cell_volume


class TestPipeline2D:
    @pytest.fixture(scope="class")
    def pipeline(self):
        return run_pipeline_2d()

    def test_coefficients_match_inner_products(self, pipeline):
        basis, coeffs, recon, out_grid, truth, desc = pipeline
        interior_desc = PhantomDescriptor((desc.primitives[0],), 0.0)
        want = direct_coefficients(basis, interior_desc)
        err = np.linalg.norm(coeffs.values - want) / np.linalg.norm(want)
        assert err <= 0.03

    def test_reconstruction_error(self, pipeline):
        basis, coeffs, recon, out_grid, truth, desc = pipeline
        truth_lattice = rasterize_phantom(
            PhantomDescriptor((desc.primitives[0],), 0.0), out_grid
        )
        assert relative_l2(recon.values, truth_lattice.values) <= 0.05

    def test_formulas_agree(self, pipeline):
        basis, coeffs_b, recon, out_grid, truth, desc = pipeline
        surface = cube_surface((-1.0, -1.0), (1.0, 1.0), 64)
        # reuse the same data by re-running projection through the fixture's
        # sinogram is not possible here, so re-derive from formula A and C on
        # fresh gk: cheaper to just rebuild the pipeline per formula
        results = {"B": coeffs_b.values}
        for formula in ("A", "C"):
            _, coeffs, _, _, _, _ = run_pipeline_2d(formula=formula)
            results[formula] = coeffs.values
        for a in "AC":
            diff = np.linalg.norm(results[a] - results["B"])
            assert diff / np.linalg.norm(results["B"]) <= 0.02

    def test_truncation_monotonicity_and_parseval(self, pipeline):
        basis, coeffs, recon, out_grid, truth, desc = pipeline
        interior_desc = PhantomDescriptor((desc.primitives[0],), 0.0)
        truth_lattice = rasterize_phantom(interior_desc, out_grid)
        lam = basis.lambdas
        errors = []
        partial_power = []
        for frac in (0.25, 0.5, 0.75, 1.0):
            keep = lam <= frac * lam.max() + 1e-12
            sub = ModeCoefficients(
                basis.lo, basis.hi, basis.c,
                basis.modes[keep], coeffs.values[keep], float(frac * lam.max()),
            )
            out = synthesize_field(sub, out_grid)
            errors.append(relative_l2(out.values, truth_lattice.values))
            partial_power.append(float(np.sum(sub.values**2)))
        assert all(e2 <= e1 + 1e-12 for e1, e2 in zip(errors, errors[1:]))
        # Parseval: partial sums grow toward ||f||^2 from below
        f_norm2 = float(np.sum(truth_lattice.values**2)) * out_grid.cell_volume
        assert all(p2 >= p1 for p1, p2 in zip(partial_power, partial_power[1:]))
        assert partial_power[-1] <= f_norm2 * 1.02

    def test_exterior_source_does_not_hurt_interior(self, pipeline):
        basis, coeffs, recon, out_grid, truth, desc = pipeline
        _, _, recon_ext, _, _, _ = run_pipeline_2d(with_exterior=True)
        diff = relative_l2(recon_ext.values, recon.values)
        assert diff <= 0.02
