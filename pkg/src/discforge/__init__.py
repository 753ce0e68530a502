"""Discrepancy minimization toolkit.

Colorers based on regularized-max potentials driven through a sticky walk
on the solid hypercube, plus an LLL-style resampler, instance generators,
and an experiment/verification CLI.
"""

from discforge.instance import (
    Instance,
    gen_gaussian,
    gen_haar,
    gen_regular_system,
    gen_twisted_hypercube,
    haar_moment_estimate,
    load_instance,
    save_instance,
)
from discforge.regmax import (
    RegEval,
    RegParams,
    hess_diag_bound,
    lq_multiplier,
    lq_value_grad,
    smax_value_grad,
    step_cap,
)
from discforge.subspace import (
    SubspaceBasis,
    bottom_eigs,
    orth_complement_within,
    quadratic_subspace,
    sign_select,
)
from discforge.walk import (
    OracleResult,
    PartialColoring,
    WalkTrace,
    boundary_step,
    run_walk,
)
from discforge.spencer import SpencerParams, spencer_color, spencer_color_tight, spencer_oracle
from discforge.pseudorandom import (
    PseudoState,
    beck_fiala_color,
    komlos_color,
    lambda_param,
    row_groups,
)
from discforge.lll import ResampleTrace, lll_color
from discforge.ellipsoid import EllipsoidInstance, ellipsoid_color

__version__ = "0.1.0"

__all__ = [
    "Instance",
    "gen_gaussian",
    "gen_haar",
    "gen_regular_system",
    "gen_twisted_hypercube",
    "haar_moment_estimate",
    "load_instance",
    "save_instance",
    "RegParams",
    "RegEval",
    "lq_multiplier",
    "lq_value_grad",
    "smax_value_grad",
    "hess_diag_bound",
    "step_cap",
    "SubspaceBasis",
    "orth_complement_within",
    "bottom_eigs",
    "quadratic_subspace",
    "sign_select",
    "PartialColoring",
    "WalkTrace",
    "OracleResult",
    "boundary_step",
    "run_walk",
    "SpencerParams",
    "spencer_oracle",
    "spencer_color",
    "spencer_color_tight",
    "PseudoState",
    "lambda_param",
    "row_groups",
    "komlos_color",
    "beck_fiala_color",
    "ResampleTrace",
    "lll_color",
    "EllipsoidInstance",
    "ellipsoid_color",
]
