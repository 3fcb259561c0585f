"""Randomized block-coordinate primal-dual solvers for separable nonsmooth
minimization over linear constraints, with benchmark instance generators.
"""

from .operators import (
    BlockOperator,
    BlockStructure,
    DenseOperator,
    HcatOperator,
    IdentityOperator,
    LowRankOperator,
    SampledDctOperator,
    SparseColumnOperator,
    hcat,
    low_rank_product,
    sampled_transform,
)
from .prox import (
    L1,
    BallIndicator,
    BlockFunction,
    LinearNonneg,
    Nuclear,
    SeparableFunction,
    Zero,
    randomized_svd,
    soft_threshold,
    subdiff_dist_inf_l1,
    svt,
)
from .solvers import (
    DivergenceError,
    FullSteps,
    IndexStream,
    StepSizes,
    beta_coefficients,
    coo_pd_init,
    coo_pda_step,
    default_steps,
    full_steps_from_exponent,
    manual_steps,
    pda_init,
    pda_step,
    run,
    tseng_init,
    tseng_recovered_duals,
    tseng_step,
)
from .problems import (
    GroundTruth,
    ProblemInstance,
    export_instance,
    gen_bp_dct,
    gen_bp_gaussian,
    gen_bp_noisy,
    gen_composite,
    gen_consensus,
    gen_lp,
    gen_rpca,
    lp_vertex_oracle,
)
from .metrics import (
    AllOf,
    BpKkt,
    MaxEpochs,
    NormalEq,
    RpcaKkt,
    RunReport,
    bp_kkt,
    normal_eq_residual,
    rate_probe,
    rpca_kkt,
)

__version__ = "0.1.0"
