"""Random-parameter ODE ensembles vs. their Brownian SDE reformulation.

A simulation and statistical toolkit built around a family of benchmark
systems where a model with a fixed-but-unknown parameter (drawn once per
trajectory) is contrasted with the stochastic differential equation obtained
by substituting Brownian increments for the parameter.  The two processes
share their mean but differ in marginal law, increment structure, path
regularity, stability, and joint chance-constraint verdicts; this package
simulates both, provides closed-form oracles, and measures the differences.
"""

from .systems import (
    ParameterPrior,
    BasisFunction,
    FeedbackPolicy,
    SystemKind,
    SystemSpec,
    make_prior,
    sample_parameters,
    catalog_lookup,
    weight_space_gp_draw,
)
from .integrate import (
    TimeGrid,
    PathEnsemble,
    SdeScheme,
    derive_path_stream,
    integrate_parametric,
    integrate_sde,
    iterate_discrete,
)
from .safety import ConstraintSpec, estimate_joint_chance, classify_stability

__version__ = "0.1.0"
