"""Capacitary p-potentials and starshapedness certificates on the Heisenberg group.

Library layout:

* core        -- group algebra, gauge, dilations, horizontal frame
* exact       -- closed-form p-harmonic oracles and radial barriers
* domains     -- implicit domains, boundary sampling, tangency probes
* grid        -- cartesian grids, node classification, interpolation
* solver      -- variational finite-difference solver for the annulus problem
* verify      -- gradient pairing certificates and level-set extraction
* checkpoint  -- binary field checkpoints with JSON sidecars
* config      -- canonical JSON run configuration
* cli         -- command-line entry points
"""

__version__ = "0.1.0"

from .core import (
    AmbientParams,
    dilate_point,
    dilation_field,
    gauge_distance,
    gauge_norm,
    group_inverse,
    group_product,
    horizontal_frame,
    project_horizontal,
)
from .exact import (
    BarrierSpec,
    ModelPotentialSpec,
    PExponent,
    eval_barrier,
    fundamental_solution,
    fundamental_solution_gradient,
    make_barrier,
    model_potential,
)

__all__ = [
    "AmbientParams",
    "BarrierSpec",
    "ModelPotentialSpec",
    "PExponent",
    "__version__",
    "dilate_point",
    "dilation_field",
    "eval_barrier",
    "fundamental_solution",
    "fundamental_solution_gradient",
    "gauge_distance",
    "gauge_norm",
    "group_inverse",
    "group_product",
    "horizontal_frame",
    "make_barrier",
    "model_potential",
    "project_horizontal",
]
