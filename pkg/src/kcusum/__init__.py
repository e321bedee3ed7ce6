"""Streaming change point detection.

Two detectors over a shared alarm model: the classic parametric CUSUM
accumulating log-likelihood ratios, and the kernel CUSUM comparing the
stream against a reference sample through drift-adjusted MMD block scores.
Closed-form run-length bounds and a seeded Monte Carlo harness measure and
check false-alarm and delay behaviour.
"""

from .bounds import (
    cusum_arl2fa_lower,
    cusum_esadd_bound,
    kcusum_arl2fa_lower,
    kcusum_esadd_upper,
    kcusum_rate,
    smallest_h_for_arl2fa,
    sup_crossing_bound,
    walk_exit_bound,
)
from .cusum import AlarmEvent, CusumState, LikelihoodModel, cusum_new, cusum_run, cusum_step, gaussian_model
from .data import (
    ChangeSpec,
    NormalSpec,
    generate,
    generate_multi,
    load_reference,
    read_stream,
    read_stream_array,
    write_stream,
)
from .kernel_cusum import (
    KcusumState,
    ReferencePool,
    kcusum_new,
    kcusum_run,
    kcusum_run_with_reset,
    kcusum_step,
)
from .kernels import KernelSpec, gaussian_kernel, gaussian_kernel_spec
from .mmd import PairBlock, block_score, block_scores, drifted_block_score, mmd_sq_linear, mmd_sq_quadratic
from .simeval import (
    C1Result,
    CusumConfig,
    EvalReport,
    KcusumConfig,
    TradeoffRow,
    TrialRecord,
    estimate_arl2fa,
    estimate_esadd,
    noise_mask,
    simulate_c1,
    tradeoff_curve,
)

__version__ = "0.1.0"
