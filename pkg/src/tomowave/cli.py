"""Command-line pipelines: phantom -> simulate -> reconstruct -> metrics,
plus focusing and the conductivity demo. One JSON config per run; every
output file records the config hash, toolkit version and RNG seed, so a
fixed seed gives bit-identical artifacts.

Exit codes: 0 ok, 2 config/schema violation, 3 numerical failure, 4 I/O
failure. Thread count comes from --threads or TOMOWAVE_THREADS (needs the
optional threadpoolctl package to take effect in-process).
"""

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .aet import (
    AetObservation,
    CurrentPattern,
    FocusingBasis,
    InteriorMap,
    interior_functional,
    read_interior_map,
    reconstruct_sigma,
    solve_conductivity,
    synthesize_modulated_measurements,
    synthetic_focus,
    write_interior_map,
    write_modulated,
)
from .fbp import reconstruct_fbp
from .grid import (
    Ball,
    FieldFormatError,
    GaussianBlob,
    GridSpec,
    PhantomDescriptor,
    constant_field,
    rasterize_phantom,
    read_field,
    write_field,
    write_pgm,
)
from .means import analytic_spherical_integrals, spherical_mean_transform
from .metrics import psnr, relative_l2, relative_linf
from .series import EigenBasis, coefficients_from_gk, dst_output_grid, project_boundary_data, synthesize_field
from .sinogram import Sinogram, read_sinogram, write_sinogram
from .surfaces import circle_surface, cube_surface, sphere_surface
from .timereversal import TimeReversalConfig, neumann_refine, time_reverse
from .wave import CFLError, solve_wave_forward


class SchemaError(Exception):
    """Config does not match the expected schema; names the offending field."""


def _require(cfg, field, types, stage):
    if field not in cfg:
        raise SchemaError(f"stage '{stage}': missing field '{field}'")
    value = cfg[field]
    if types is not None and not isinstance(value, types):
        raise SchemaError(f"stage '{stage}': field '{field}' has the wrong type")
    return value


def _enum(cfg, field, allowed, stage, default=None):
    value = cfg.get(field, default)
    if value not in allowed:
        raise SchemaError(
            f"stage '{stage}': field '{field}' must be one of {sorted(allowed)}, "
            f"got {value!r}"
        )
    return value


def _grid_from(cfg, stage):
    spec = _require(cfg, "grid", dict, stage)
    try:
        return GridSpec(
            tuple(spec["shape"]), tuple(spec["spacing"]), tuple(spec["origin"])
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"stage '{stage}': field 'grid' is invalid: {exc}") from exc


def _primitives_from(cfg, stage):
    prims = []
    for i, p in enumerate(_require(cfg, "primitives", list, stage)):
        kind = p.get("type")
        try:
            if kind == "ball":
                prims.append(Ball(tuple(p["center"]), p["radius"], p.get("amplitude", 1.0)))
            elif kind == "gaussian":
                prims.append(
                    GaussianBlob(tuple(p["center"]), p["width"], p.get("amplitude", 1.0))
                )
            else:
                raise SchemaError(
                    f"stage '{stage}': field 'primitives[{i}].type' must be "
                    f"'ball' or 'gaussian', got {kind!r}"
                )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, SchemaError):
                raise
            raise SchemaError(
                f"stage '{stage}': field 'primitives[{i}]' is invalid: {exc}"
            ) from exc
    return PhantomDescriptor(tuple(prims), cfg.get("background", 0.0))


def _surface_from(cfg, stage):
    spec = _require(cfg, "surface", dict, stage)
    kind = _enum(spec, "kind", {"sphere", "circle", "cube"}, stage)
    try:
        if kind == "sphere":
            return sphere_surface(
                spec["center"], spec["radius"], spec.get("n_polar", 24),
                spec.get("n_azimuth"),
            )
        if kind == "circle":
            return circle_surface(
                spec["center"], spec["radius"], spec.get("n_detectors", 128)
            )
        return cube_surface(spec["lo"], spec["hi"], spec.get("n_per_axis", 32))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"stage '{stage}': field 'surface' is invalid: {exc}") from exc


def _speed_from(cfg, grid, stage):
    if "c_field" in cfg:
        return read_field(cfg["c_field"])
    c = cfg.get("c", 1.0)
    if not isinstance(c, (int, float)) or c <= 0:
        raise SchemaError(f"stage '{stage}': field 'c' must be a positive number")
    return constant_field(grid, float(c), "sound_speed")


class StageRunner:
    def __init__(self, config, config_path):
        self.config = config
        self.seed = config.get("seed", 0)
        canonical = json.dumps(config, sort_keys=True).encode("utf-8")
        self.extras = {
            "config_hash": hashlib.sha256(canonical).hexdigest(),
            "toolkit_version": __version__,
            "seed": self.seed,
        }
        self.base = os.path.dirname(os.path.abspath(config_path))

    def path(self, p):
        return p if os.path.isabs(p) else os.path.join(self.base, p)

    # -- stages -------------------------------------------------------------

    def run_stage(self, cfg):
        stage = _enum(
            cfg,
            "stage",
            {"phantom", "simulate", "reconstruct", "focus", "aet", "metrics"},
            cfg.get("stage", "?"),
        )
        getattr(self, f"stage_{stage}")(cfg)

    def _write_field(self, fld, cfg, stage):
        out = self.path(_require(cfg, "output", str, stage))
        write_field(fld, out, extras=self.extras)
        if "pgm" in cfg:
            write_pgm(fld, self.path(cfg["pgm"]))
        print(f"[{stage}] wrote {out}")

    def stage_phantom(self, cfg):
        grid = _grid_from(cfg, "phantom")
        desc = _primitives_from(cfg, "phantom")
        fld = rasterize_phantom(desc, grid, smooth=cfg.get("smooth", True))
        self._write_field(fld, cfg, "phantom")

    def stage_simulate(self, cfg):
        method = _enum(
            cfg, "method", {"wave", "spherical_means", "analytic_means"}, "simulate"
        )
        surface = _surface_from(cfg, "simulate")
        if method == "analytic_means":
            desc = _primitives_from(cfg, "simulate")
            radii_cfg = _require(cfg, "radii", dict, "simulate")
            dr, n = float(radii_cfg["dr"]), int(radii_cfg["n"])
            radii = dr * np.arange(1, n + 1)
            values = analytic_spherical_integrals(
                desc, surface.points, radii, smooth_width=cfg.get("smooth_width", 0.0)
            )
            values = np.concatenate([np.zeros((values.shape[0], 1)), values], axis=1)
            c = cfg.get("c", 1.0)
            sino = Sinogram(surface, dr / c, values, "spherical_integral", c)
        else:
            fld = read_field(self.path(_require(cfg, "input", str, "simulate")))
            if method == "wave":
                c = _speed_from(cfg, fld.grid, "simulate")
                sino = solve_wave_forward(
                    fld,
                    c,
                    surface,
                    _require(cfg, "T", (int, float), "simulate"),
                    dt=cfg.get("dt"),
                    record_every=cfg.get("record_every", 1),
                    sponge_width=cfg.get("sponge_width", 20),
                )
            else:
                radii_cfg = _require(cfg, "radii", dict, "simulate")
                radii = float(radii_cfg["dr"]) * np.arange(1, int(radii_cfg["n"]) + 1)
                sino = spherical_mean_transform(
                    fld, surface, radii, c=cfg.get("c", 1.0)
                )
        out = self.path(_require(cfg, "output", str, "simulate"))
        write_sinogram(sino, out, extras=self.extras)
        print(f"[simulate] wrote {out}")

    def stage_reconstruct(self, cfg):
        method = _enum(
            cfg, "method", {"fbp", "series", "time_reversal", "neumann"}, "reconstruct"
        )
        sino = read_sinogram(self.path(_require(cfg, "input", str, "reconstruct")))
        if method == "fbp":
            variant = _enum(
                cfg,
                "variant",
                {"laplacian_outside", "second_radial", "nested_radial"},
                "reconstruct",
                default="second_radial",
            )
            fld = reconstruct_fbp(sino, variant, _grid_from(cfg, "reconstruct"))
        elif method == "series":
            basis = EigenBasis.for_surface(
                sino.surface, sino.sound_speed or cfg.get("c", 1.0),
                lambda_max=cfg.get("lambda_max"),
            )
            gk = project_boundary_data(sino, basis)
            coeffs = coefficients_from_gk(gk, formula=cfg.get("formula", "B"))
            if "dst_cells" in cfg:
                out_grid = dst_output_grid(basis.lo, basis.hi, int(cfg["dst_cells"]))
            else:
                out_grid = _grid_from(cfg, "reconstruct")
            fld = synthesize_field(coeffs, out_grid)
        else:
            grid = _grid_from(cfg, "reconstruct")
            c = _speed_from(cfg, grid, "reconstruct")
            tr_cfg = TimeReversalConfig(
                T=_require(cfg, "T", (int, float), "reconstruct"),
                cutoff=cfg.get("cutoff", "smoothed"),
                window=cfg.get("window"),
                neumann_iterations=cfg.get("iterations", 0),
            )
            if method == "time_reversal":
                fld = time_reverse(sino, c, tr_cfg)
            else:
                result = neumann_refine(sino, c, tr_cfg)
                fld = result.field
        self._write_field(fld, cfg, "reconstruct")

    def _basis_from(self, cfg, stage):
        spec = _require(cfg, "basis", dict, stage)
        kind = _enum(spec, "kind", {"delta_shell", "n_shaped_shell"}, stage)
        surface = _surface_from(spec, stage)
        try:
            radii = float(spec["dr"]) * np.arange(1, int(spec["n_radii"]) + 1)
            return FocusingBasis(kind, surface, radii, spec.get("pulse_half_width"))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"stage '{stage}': field 'basis' is invalid: {exc}") from exc

    def stage_focus(self, cfg):
        imap = read_interior_map(self.path(_require(cfg, "input", str, "focus")))
        basis = self._basis_from(cfg, "focus")
        m = synthesize_modulated_measurements(
            imap, basis, noise_level=cfg.get("noise_level", 0.0), seed=self.seed
        )
        if "measurements_output" in cfg:
            write_modulated(m, self.path(cfg["measurements_output"]), extras=self.extras)
        focused = synthetic_focus(
            m, _grid_from(cfg, "focus"), lambda_max=cfg.get("lambda_max")
        )
        out = self.path(_require(cfg, "output", str, "focus"))
        write_interior_map(focused, out, extras=self.extras)
        print(f"[focus] wrote {out}")

    _PATTERN_FUNCTIONS = {
        "linear_x": lambda x, y: x,
        "linear_y": lambda x, y: y,
        "diag_sum": lambda x, y: x + y,
        "diag_diff": lambda x, y: x - y,
    }

    def stage_aet(self, cfg):
        grid = _grid_from(cfg, "aet")
        if "sigma_input" in cfg:
            sigma_true = read_field(self.path(cfg["sigma_input"]))
        else:
            desc = _primitives_from(cfg, "aet")
            sigma_true = rasterize_phantom(desc, grid, smooth=cfg.get("smooth", True))
        patterns = []
        for i, name in enumerate(_require(cfg, "patterns", list, "aet")):
            if name not in self._PATTERN_FUNCTIONS:
                raise SchemaError(
                    f"stage 'aet': field 'patterns[{i}]' must be one of "
                    f"{sorted(self._PATTERN_FUNCTIONS)}, got {name!r}"
                )
            patterns.append(
                CurrentPattern.from_function(grid, self._PATTERN_FUNCTIONS[name])
            )
        pairs = cfg.get("pairs") or [[i, i] for i in range(len(patterns))]
        potentials = [solve_conductivity(sigma_true, p) for p in patterns]
        observations = []
        for a, b in pairs:
            w_true = interior_functional(sigma_true, potentials[a], potentials[b])
            if "basis" in cfg:
                basis = self._basis_from(cfg, "aet")
                m = synthesize_modulated_measurements(
                    w_true, basis, noise_level=cfg.get("noise_level", 0.0),
                    seed=self.seed,
                )
                w_obs = synthetic_focus(m, grid, lambda_max=cfg.get("lambda_max"))
            else:
                w_obs = w_true
            observations.append(AetObservation(w_obs, patterns[a], patterns[b]))
        mask = None
        margin = cfg.get("mask_margin", 0.0)
        if margin > 0:
            lo, hi = grid.bounds
            mesh = grid.meshgrid()
            inset = np.ones(grid.shape, dtype=bool)
            for a in range(grid.dim):
                span = (hi[a] - lo[a]) * margin
                inset &= (mesh[a] > lo[a] + span) & (mesh[a] < hi[a] - span)
            mask = inset.astype(float)
        sigma0 = constant_field(grid, cfg.get("background", 1.0), "sigma_init")
        result = reconstruct_sigma(
            observations,
            sigma0,
            beta=cfg.get("beta"),
            mask=mask,
            sigma_bounds=tuple(cfg.get("bounds", (0.1, 10.0))),
            max_iterations=cfg.get("iterations", 150),
        )
        self._write_field(result.field, cfg, "aet")
        if "true_output" in cfg:
            write_field(sigma_true, self.path(cfg["true_output"]), extras=self.extras)
        print(
            f"[aet] {result.message}; objective "
            f"{result.objectives[0]:.6g} -> {result.objectives[-1]:.6g} "
            f"in {len(result.objectives) - 1} accepted steps"
        )

    def stage_metrics(self, cfg):
        cand = read_field(self.path(_require(cfg, "candidate", str, "metrics")))
        ref = read_field(self.path(_require(cfg, "reference", str, "metrics")))
        report = {
            "relative_l2": relative_l2(cand.values, ref.values),
            "relative_linf": relative_linf(cand.values, ref.values),
            "psnr_db": psnr(cand.values, ref.values),
            "config_hash": self.extras["config_hash"],
            "toolkit_version": __version__,
            "seed": self.seed,
        }
        out = self.path(_require(cfg, "output", str, "metrics"))
        with open(out, "w", encoding="utf-8") as fh:
            json.dump(report, fh, sort_keys=True, indent=2)
            fh.write("\n")
        print(f"[metrics] relative_l2={report['relative_l2']:.4g} wrote {out}")
        if "max_relative_l2" in cfg and report["relative_l2"] > cfg["max_relative_l2"]:
            raise ValueError(
                f"relative L2 {report['relative_l2']:.4g} exceeds the configured "
                f"bound {cfg['max_relative_l2']}"
            )


def _apply_threads(n_threads):
    if n_threads is None:
        n_threads = os.environ.get("TOMOWAVE_THREADS")
    if n_threads is None:
        return
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        print(
            "note: threadpoolctl not installed; --threads has no effect",
            file=sys.stderr,
        )
        return
    threadpool_limits(limits=int(n_threads))


def _run_config(path, subcommand):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            config = json.load(fh)
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 4
    except json.JSONDecodeError as exc:
        print(f"error: config is not valid JSON: {exc}", file=sys.stderr)
        return 2
    runner = StageRunner(config, path)
    if subcommand == "pipeline":
        stages = config.get("stages")
        if not isinstance(stages, list) or not stages:
            print("error: pipeline config needs a non-empty 'stages' list", file=sys.stderr)
            return 2
    else:
        stage = dict(config)
        stage.setdefault("stage", subcommand)
        if stage["stage"] != subcommand:
            print(
                f"error: stage '{stage['stage']}' does not match subcommand "
                f"'{subcommand}'",
                file=sys.stderr,
            )
            return 2
        stages = [stage]
    for i, cfg in enumerate(stages):
        label = cfg.get("stage", f"#{i}")
        try:
            runner.run_stage(cfg)
        except SchemaError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        except FieldFormatError as exc:
            print(f"error in stage '{label}': bad input file: {exc}", file=sys.stderr)
            return 4
        except OSError as exc:
            print(f"error in stage '{label}': I/O failure: {exc}", file=sys.stderr)
            return 4
        except (CFLError, FloatingPointError, ValueError) as exc:
            print(f"error in stage '{label}': numerical failure: {exc}", file=sys.stderr)
            return 3
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="tomowave",
        description="Acoustic tomography pipelines driven by JSON configs.",
    )
    parser.add_argument("--threads", type=int, default=None, help="BLAS thread cap")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, desc in (
        ("phantom", "rasterize a phantom descriptor to a field file"),
        ("simulate", "generate boundary data (wave solver or sphere integrals)"),
        ("reconstruct", "invert boundary data (fbp, series, time reversal)"),
        ("focus", "synthesize and refocus shell-basis measurements"),
        ("aet", "run the conductivity-imaging demo"),
        ("metrics", "compare a reconstruction against a reference field"),
        ("pipeline", "run a multi-stage config"),
    ):
        p = sub.add_parser(name, help=desc, description=desc)
        p.add_argument("config", help="path to the JSON config")
    args = parser.parse_args(argv)
    _apply_threads(args.threads)
    return _run_config(args.config, args.command)


if __name__ == "__main__":
    sys.exit(main())
