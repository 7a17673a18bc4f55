"""Sparse semismooth-Newton augmented Lagrangian solver for SVM-type QPs.

The library solves  min 1/2 x'Qx + c'x  s.t.  a'x = d, l <= x <= u  with Q
given implicitly, and builds classification / regression pipelines on top.
"""

from .apg import ApgOptions, apg_solve
from .data import (
    BoxScaler,
    Dataset,
    conform_features,
    fit_unit_scaler,
    parse_libsvm,
    scale_unit_box,
    split_train_test,
    write_libsvm,
)
from .errors import (
    InfeasibleProblemError,
    InputError,
    LineSearchError,
    ParseError,
    SsnalError,
)
from .kernels import (
    BlockKernelOperator,
    DenseOperator,
    KernelOperator,
    KernelSpec,
    LowRankOperator,
    NystromFactor,
    RffMap,
    kernel_cross,
    kernel_eval,
    nystrom_build,
    rff_build,
)
from .projection import (
    ActiveSetMask,
    BoxLineSet,
    ProjectionResult,
    breakpoints,
    grad_phi,
    hs_jacobian_apply,
    project_box_line,
)
from .solver import (
    AlmOptions,
    QpProblem,
    SolveReport,
    SolverState,
    SsnOptions,
    alm_solve,
    kkt_residual,
    line_search,
    newton_direction,
    psi_eval,
    psi_grad,
    ssn_solve,
)
from .svm import (
    SvmConfig,
    SvmModel,
    build_csvc_dual,
    build_svr_dual,
    cross_validate,
    decision_function,
    evaluate,
    load_model,
    predict,
    recover_bias,
    save_model,
    train,
    warm_start_rff,
)

__version__ = "0.1.0"
