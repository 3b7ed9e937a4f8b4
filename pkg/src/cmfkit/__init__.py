"""Augmented-Lagrangian dual solvers for variational image analysis on grids.

TV denoising, continuous max-flow segmentation (binary, Potts and five
priors) and coarse-to-fine non-rigid registration, together with exact
reference solvers for cross-checking.
"""

from .alm import Diagnostics, SolverConfig, run_alm
from .denoise import denoise, tv_energy
from .estimators import (
    BinarySegmenter,
    CoSegmenter,
    DeformableRegistration,
    PartialOrderSegmenter,
    PottsSegmenter,
    RegionOrderSegmenter,
    TVDenoiser,
)
from .exceptions import InvalidArgumentError, NumericalFailureError
from .grid import Pyramid, build_pyramid, divergence, gradient, total_variation, warp
from .maxflow import BinarySegProblem, threshold
from .maxflow import solve as solve_binary
from .potts import PottsProblem, argmax_label
from .potts import solve as solve_potts
from .priors import (
    OrderChain,
    StarField,
    solve_coseg,
    solve_linear_order,
    solve_partial_order,
    solve_star_prior,
    solve_volume_prior,
    star_vector_field,
)
from .registration import (
    RegParams,
    register_pair,
    register_sequence,
    register_volume_preserving,
    volume_change,
)

__version__ = "0.1.0"
