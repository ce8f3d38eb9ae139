"""Boundary probing of semilinear elliptic Dirichlet-to-Neumann maps on cube grids."""
from .domain import (
    BoundaryPatches,
    ConfigurationError,
    DomainGrid,
    ExtendedDomain,
    build_domain,
    build_patches,
    extend_domain,
)
from .dtn import DtnMap, make_anchor
from .elliptic import Conductivity, solve_linear, solve_semilinear
from .fitting import fit_slope
from .nonlinearity import Nonlinearity, builtin, perturbed, validate_assumptions
from .probes import Parametrix, build_probe, build_probe_family
from .recovery import calibrate, recover_aprime, sigma_point_estimate, stability_experiment
from .traces import h_half_norm, h_minus_half_norm, op_norm

__version__ = "0.1.0"
