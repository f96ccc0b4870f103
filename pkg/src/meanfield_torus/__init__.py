"""Numerical laboratory for the mean-field equation on unit-area flat tori.

Subpackages:

* torus      -- grids, fields, spectral calculus
* green      -- exact torus Green function, Robin constant, threshold modulus
* functional -- energy functional, gradients, condition checkers
* solver     -- preconditioned descent and continuation
* blowup     -- glued concentration profiles and asymptotics
* hspec      -- mini-language for weight functions
* cli        -- command-line front end
"""

from .torus import (
    Field,
    FlatTorus,
    constant_field,
    dirichlet_energy,
    exp_integral,
    integrate,
    laplacian,
    make_torus,
    project_mean_zero,
    sample_function,
)
from .green import (
    GreenExpansion,
    bernoulli2,
    curvature_identity_defect,
    extract_expansion,
    find_threshold_modulus,
    green_eval,
    green_field,
    green_fourier_oracle,
    robin_constant,
    robin_threshold,
    weak_laplace_residual,
)
from .functional import (
    EnergyBreakdown,
    HLocalData,
    check_average_condition,
    check_peak_condition,
    eval_J,
    l2_gradient,
    mt_ratio,
    normalize_constraint,
    pde_residual,
)
from .solver import SolveResult, SolverConfig, continuation, minimize
from .blowup import (
    AsymptoteFit,
    TestFunctionSpec,
    TestProfileLab,
    build_test_function,
    bubble_profile,
    eval_J_testfunction,
    fit_asymptote,
    green_deviation,
    profile_deviation,
)

__version__ = "0.1.0"
