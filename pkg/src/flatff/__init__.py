"""Exact multirotor feedforward from learned acceleration-error models.

Subpackages:
    trajgen    reference trajectories with analytic derivatives up to snap
    errmodel   linear error models over differentiable feature maps
    flatness   feedforward inversion (direct and numerical routes)
    sim2d      planar multirotor simulator with cascaded PD control
    experiment strategy/disturbance benchmark matrix and report writer
"""

from .errmodel import (
    LinearErrorModel,
    StateVec,
    TrainingSample,
    fit,
    load_model,
    make_feature_map_2d,
    make_feature_map_6d,
    residuals_from_log,
    save_model,
)
from .flatness import (
    FlatControl,
    PhysicalParams,
    Strategy,
    body_ang_accel,
    body_rates,
    ff_generate,
    invert_dependent,
    invert_independent,
    newton_solve,
)
from .trajgen import (
    PolySegment,
    TrajectoryPoint,
    analytic_primitive,
    eval_poly,
    fit_rest_to_rest_poly,
    max_abs_derivatives,
)

__version__ = "0.1.0"

__all__ = [
    "FlatControl",
    "LinearErrorModel",
    "PhysicalParams",
    "PolySegment",
    "StateVec",
    "Strategy",
    "TrainingSample",
    "TrajectoryPoint",
    "analytic_primitive",
    "body_ang_accel",
    "body_rates",
    "eval_poly",
    "ff_generate",
    "fit",
    "fit_rest_to_rest_poly",
    "invert_dependent",
    "invert_independent",
    "load_model",
    "make_feature_map_2d",
    "make_feature_map_6d",
    "max_abs_derivatives",
    "newton_solve",
    "residuals_from_log",
    "save_model",
]
