"""tomowave: acoustic tomography simulation and reconstruction toolkit.

Capabilities: phantom generation on regular grids, free-space wave
propagation to boundary detectors, spherical-mean data synthesis, three
reconstruction families (closed-form backprojection on spheres, sine-series
expansion in boxes, time reversal), synthetic ultrasound focusing, and a
desk-scale conductivity-imaging demo driven by focused interior data.
"""

__version__ = "0.1.0"

from .grid import (
    Ball,
    FieldFormatError,
    GaussianBlob,
    GridSpec,
    HeaderError,
    InvariantError,
    MagicError,
    NonFiniteError,
    PhantomDescriptor,
    PhantomSupportError,
    ScalarField,
    TruncatedPayloadError,
    constant_field,
    rasterize_phantom,
    read_field,
    write_field,
    write_pgm,
)
from .surfaces import (
    ObservationSurface,
    circle_surface,
    cube_surface,
    sphere_surface,
    surface_from_descriptor,
)
from .sinogram import Sinogram, read_sinogram, write_sinogram
from .wave import CFLError, LeapfrogStepper, solve_wave_forward, stable_dt
from .means import (
    analytic_circle_integrals,
    analytic_spherical_integrals,
    means_from_pressure,
    pressure_from_means,
    spherical_integrals_at,
    spherical_mean_transform,
)
from .metrics import psnr, relative_l2, relative_linf, relative_rms
from .fbp import FbpVariant, filter_radial, reconstruct_fbp
from .series import (
    EigenBasis,
    ModeCoefficients,
    coefficients_from_gk,
    dst_output_grid,
    project_boundary_data,
    read_coefficients,
    synthesize_field,
    write_coefficients,
)
from .timereversal import TimeReversalConfig, neumann_refine, time_reverse
from .aet import (
    CurrentPattern,
    FocusingBasis,
    InteriorMap,
    ModulatedMeasurements,
    interior_functional,
    read_interior_map,
    read_modulated,
    reconstruct_sigma,
    solve_conductivity,
    synthesize_modulated_measurements,
    synthetic_focus,
    write_interior_map,
    write_modulated,
)
