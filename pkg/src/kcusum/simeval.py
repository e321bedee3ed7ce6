"""Monte Carlo harness for run-length and detection-delay measurement.

Measures average run length to false alarm (ARL2FA) on no-change streams
and worst-case-style detection delay (ESADD) on streams with a planted
change, for both detectors, over seeded independent trials.  Every trial's
randomness derives only from ``(base_seed, trial_id)``, so reports are
bit-identical across reruns regardless of batch layout or worker count.

The essential supremum in the delay criterion is not computable; it is
approximated by the maximum and 95th percentile of delays over randomized
pre-change histories, and reported as such.  Unalarmed trials are censored
at the horizon and censored means are flagged as lower bounds instead of
being extrapolated.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .bounds import kcusum_esadd_upper, smallest_h_for_arl2fa
from .cusum import LikelihoodModel
from .data import ChangeSpec, NormalSpec, generate
from .kernel_cusum import ReferencePool
from .kernels import KernelSpec

__all__ = [
    "CusumConfig",
    "KcusumConfig",
    "TrialRecord",
    "EvalReport",
    "TradeoffRow",
    "C1Result",
    "derive_trial_seeds",
    "estimate_arl2fa",
    "estimate_esadd",
    "tradeoff_curve",
    "noise_mask",
    "simulate_c1",
    "write_trials_csv",
    "write_tradeoff_csv",
]

# rows of doubles a batch may hold at once; keeps peak memory near 150 MB
_ROWS_BUDGET = 4_000_000
_BLOCK_CHUNK = 8192


@dataclass(frozen=True)
class CusumConfig:
    """Parametric detector choice for the harness."""

    model: LikelihoodModel
    h: float

    def describe(self) -> dict:
        return {"kind": "cusum", "h": self.h, "model": dict(self.model.params)}


@dataclass(frozen=True)
class KcusumConfig:
    """Kernel detector choice for the harness."""

    h: float
    delta: float
    kernel: KernelSpec
    pool: ReferencePool

    def describe(self) -> dict:
        return {
            "kind": "kcusum",
            "h": self.h,
            "delta": self.delta,
            "kernel": dict(self.kernel.params) or {"family": "custom", "sup_bound": self.kernel.sup_bound},
            "pool": self.pool.describe(),
        }


DetectorConfig = Union[CusumConfig, KcusumConfig]


@dataclass(frozen=True)
class TrialRecord:
    """One Monte Carlo trial: seed, stopping time and outcome class."""

    trial_id: int
    seed: int
    change_time: Optional[int]
    stop_time: Optional[int]
    outcome: str  # detection | false_alarm | censored
    delay: Optional[int]


@dataclass
class EvalReport:
    """Aggregated Monte Carlo estimates plus per-trial records.

    ``detection_rate`` is the fraction of trials that, having reached the
    change point without a false alarm, detect within the horizon
    (detections / (detections + censored)); trials that false-alarm are
    classified separately, mirroring a protocol where early alarms feed
    the false-alarm estimate rather than the delay sample.
    """

    arl2fa_mean: Optional[float]
    arl2fa_lower_flag: bool
    esadd_mean: Optional[float]
    esadd_p95: Optional[float]
    esadd_max: Optional[float]
    false_alarm_rate: float
    detection_rate: Optional[float]
    detection_count: int
    false_alarm_count: int
    censored_count: int
    trials: List[TrialRecord]
    config_echo: dict = field(default_factory=dict)

    def delays(self) -> np.ndarray:
        return np.array([t.delay for t in self.trials if t.outcome == "detection"], dtype=float)

    def to_dict(self) -> dict:
        return {
            "arl2fa_mean": self.arl2fa_mean,
            "arl2fa_lower_flag": self.arl2fa_lower_flag,
            "esadd_mean": self.esadd_mean,
            "esadd_p95": self.esadd_p95,
            "esadd_max": self.esadd_max,
            "false_alarm_rate": self.false_alarm_rate,
            "detection_rate": self.detection_rate,
            "outcome_counts": {
                "detection": self.detection_count,
                "false_alarm": self.false_alarm_count,
                "censored": self.censored_count,
            },
            "config_echo": self.config_echo,
            "trials": [
                {
                    "trial_id": t.trial_id,
                    "seed": t.seed,
                    "change_time": t.change_time,
                    "stop_time": t.stop_time,
                    "outcome": t.outcome,
                    "delay": t.delay,
                }
                for t in self.trials
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def write_json(self, path: str) -> None:
        with open(path, "w") as handle:
            handle.write(self.to_json())


def write_trials_csv(records: Sequence[TrialRecord], path_or_handle) -> None:
    """Emit trial records with the fixed column set."""
    own = isinstance(path_or_handle, str)
    handle = open(path_or_handle, "w", newline="") if own else path_or_handle
    try:
        writer = csv.writer(handle)
        writer.writerow(["trial_id", "seed", "change_time", "stop_time", "outcome", "delay"])
        for t in records:
            writer.writerow(
                [
                    t.trial_id,
                    t.seed,
                    "" if t.change_time is None else t.change_time,
                    "" if t.stop_time is None else t.stop_time,
                    t.outcome,
                    "" if t.delay is None else t.delay,
                ]
            )
    finally:
        if own:
            handle.close()


def derive_trial_seeds(base_seed: int, trial_id: int) -> Tuple[int, int]:
    """Fixed seed mixing: ``SeedSequence([base_seed, trial_id])`` yields the
    trial's stream seed and reference-draw seed as two 64-bit words."""
    state = np.random.SeedSequence([base_seed, trial_id]).generate_state(2, np.uint64)
    return int(state[0]), int(state[1])


# ---------------------------------------------------------------------------
# batched stopping-time engines
#
# The reflected statistic satisfies z_n = S_n - min(0, min_{k<=n} S_k) for the
# running sum S of increments, which turns stopping-time extraction into
# cumulative sums and running minima over whole trial batches at once.
# ---------------------------------------------------------------------------


def _first_crossing(increments: np.ndarray, h: float) -> np.ndarray:
    """First index (1-based) where the reflected walk reaches ``h``, else 0.

    ``increments`` has shape (trials, steps); works in column chunks so the
    intermediate arrays stay modest.
    """
    nb, steps = increments.shape
    stop = np.zeros(nb, dtype=np.int64)
    alive = np.arange(nb)
    carry_sum = np.zeros(nb)
    carry_min = np.zeros(nb)
    for lo in range(0, steps, _BLOCK_CHUNK):
        if alive.size == 0:
            break
        hi = min(lo + _BLOCK_CHUNK, steps)
        seg = increments[alive, lo:hi]
        totals = np.cumsum(seg, axis=1) + carry_sum[alive, None]
        floor = np.minimum(np.minimum.accumulate(totals, axis=1), carry_min[alive, None])
        z = totals - floor
        crossed = z >= h
        any_cross = crossed.any(axis=1)
        first = np.argmax(crossed, axis=1)
        hit = alive[any_cross]
        stop[hit] = lo + first[any_cross] + 1
        keep = ~any_cross
        carry_sum[alive[keep]] = totals[keep, -1]
        carry_min[alive[keep]] = floor[keep, -1]
        alive = alive[keep]
    return stop


def _block_scores_nd(x0, x1, y0, y1, kernel: KernelSpec) -> np.ndarray:
    """Vectorized block scores on (trials, blocks, d) arrays."""
    lead = x0.shape[:-1]
    d = x0.shape[-1]

    def rw(a, b):
        return kernel.rowwise(a.reshape(-1, d), b.reshape(-1, d)).reshape(lead)

    return rw(x0, x1) + rw(y0, y1) - rw(x0, y1) - rw(x1, y0)


def _kcusum_stop_times(streams: np.ndarray, pool: ReferencePool, pool_seeds: Sequence[int],
                       h: float, delta: float, kernel: KernelSpec) -> np.ndarray:
    """Stopping times (samples, 0 = none) for a batch of kernel-detector trials.

    Reference draws replay the per-step detector exactly: one pool index per
    observation from the trial's draw generator.
    """
    nb, length, d = streams.shape
    n_blocks = length // 2
    ys = np.empty((nb, 2 * n_blocks, d))
    for i in range(nb):
        rng = np.random.default_rng(pool_seeds[i])
        idx = rng.integers(0, pool.size, size=length)
        ys[i] = pool.samples[idx[: 2 * n_blocks]]
    x = streams[:, : 2 * n_blocks]
    scores = _block_scores_nd(x[:, 0::2], x[:, 1::2], ys[:, 0::2], ys[:, 1::2], kernel) - delta
    blocks = _first_crossing(scores, h)
    return 2 * blocks


def _cusum_stop_times(streams: np.ndarray, model: LikelihoodModel, h: float) -> np.ndarray:
    ratios = model.log_ratio(streams[..., 0])
    return _first_crossing(ratios, h)


def _batch_bounds(trials: int, length: int, dimension: int) -> List[Tuple[int, int]]:
    per = max(1, min(trials, _ROWS_BUDGET // max(1, length * dimension)))
    return [(lo, min(lo + per, trials)) for lo in range(0, trials, per)]


def _run_stop_times(
    detector: DetectorConfig,
    trials: int,
    base_seed: int,
    make_stream,
    length: int,
    dimension: int,
    workers: int,
) -> Tuple[np.ndarray, List[int]]:
    """Stopping times and stream seeds for ``trials`` independent trials.

    ``make_stream(trial_id, stream_seed) -> (length, d) array``.  The batch
    partition depends only on trial count and stream size, never on
    ``workers``, so results are identical for any worker count.
    """

    def run_batch(span):
        lo, hi = span
        nb = hi - lo
        streams = np.empty((nb, length, dimension))
        seeds = []
        pool_seeds = []
        for i in range(nb):
            stream_seed, pool_seed = derive_trial_seeds(base_seed, lo + i)
            seeds.append(stream_seed)
            pool_seeds.append(pool_seed)
            streams[i] = make_stream(lo + i, stream_seed)
        if isinstance(detector, KcusumConfig):
            stops = _kcusum_stop_times(streams, detector.pool, pool_seeds, detector.h, detector.delta, detector.kernel)
        else:
            stops = _cusum_stop_times(streams, detector.model, detector.h)
        return lo, stops, seeds

    spans = _batch_bounds(trials, length, dimension)
    stops = np.zeros(trials, dtype=np.int64)
    seeds: List[int] = [0] * trials
    if workers > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_batch, spans))
    else:
        results = [run_batch(s) for s in spans]
    for lo, st, sd in sorted(results, key=lambda r: r[0]):
        stops[lo : lo + len(st)] = st
        seeds[lo : lo + len(sd)] = sd
    return stops, seeds


def _detector_dimension(detector: DetectorConfig) -> int:
    return detector.kernel.dimension if isinstance(detector, KcusumConfig) else 1


def _validate_detector_task(detector: DetectorConfig, dimension: int) -> None:
    want = _detector_dimension(detector)
    if want != dimension:
        raise ValueError(f"detector expects dimension {want}, task has dimension {dimension}")
    if isinstance(detector, KcusumConfig) and detector.pool.dimension != dimension:
        raise ValueError(
            f"reference pool dimension {detector.pool.dimension} does not match task dimension {dimension}"
        )


def estimate_arl2fa(
    detector: DetectorConfig,
    stream_dist: NormalSpec,
    trials: int,
    horizon: int,
    base_seed: int = 0,
    workers: int = 1,
) -> EvalReport:
    """Mean run length on no-change streams, censored at ``horizon``.

    Unalarmed runs contribute the horizon to the mean and set the
    lower-bound flag; any alarm under the no-change measure is a false
    alarm by definition.
    """
    if trials < 1:
        raise ValueError(f"need at least one trial, got {trials}")
    if horizon < 1:
        raise ValueError(f"horizon must be positive, got {horizon}")
    _validate_detector_task(detector, stream_dist.dimension)

    def make_stream(trial_id, stream_seed):
        rng = np.random.default_rng(stream_seed)
        return stream_dist.sample(rng, horizon)

    stops, seeds = _run_stop_times(detector, trials, base_seed, make_stream, horizon, stream_dist.dimension, workers)

    records = []
    for i in range(trials):
        alarmed = stops[i] > 0
        records.append(
            TrialRecord(
                trial_id=i,
                seed=int(seeds[i]),
                change_time=None,
                stop_time=int(stops[i]) if alarmed else None,
                outcome="false_alarm" if alarmed else "censored",
                delay=None,
            )
        )
    run_lengths = np.where(stops > 0, stops, horizon)
    censored = int(np.sum(stops == 0))
    echo = {
        "op": "estimate_arl2fa",
        "detector": detector.describe(),
        "stream": stream_dist.describe(),
        "trials": trials,
        "horizon": horizon,
        "base_seed": base_seed,
        "seed_derivation": "SeedSequence([base_seed, trial_id]) -> (stream, reference) words",
    }
    return EvalReport(
        arl2fa_mean=float(np.mean(run_lengths)),
        arl2fa_lower_flag=censored > 0,
        esadd_mean=None,
        esadd_p95=None,
        esadd_max=None,
        false_alarm_rate=float(np.mean(stops > 0)),
        detection_rate=None,
        detection_count=0,
        false_alarm_count=trials - censored,
        censored_count=censored,
        trials=records,
        config_echo=echo,
    )


def noise_mask(stream, seed: int) -> np.ndarray:
    """Add standard normal noise per coordinate, deterministic in the seed."""
    stream = np.asarray(stream, dtype=float)
    rng = np.random.default_rng(seed)
    return stream + rng.normal(0.0, 1.0, size=stream.shape)


def estimate_esadd(
    detector: DetectorConfig,
    change: ChangeSpec,
    trials: int,
    post_horizon: int,
    base_seed: int = 0,
    mask_noise: bool = False,
    workers: int = 1,
) -> EvalReport:
    """Detection-delay estimates on streams with a change planted at ``change.change_time``.

    Each trial runs on ``change_time - 1`` pre-change samples plus
    ``post_horizon`` post-change samples.  With ``mask_noise`` a single
    base stream (seeded by ``change.seed``) is overlaid with per-trial
    standard normal noise; otherwise each trial draws a fresh stream from
    its own seed and ``change.seed`` is unused.  Outcomes: an alarm before
    the change is a false alarm, at or after it a detection with delay
    ``T - change_time``, and no alarm by the end is censored.
    """
    if trials < 1:
        raise ValueError(f"need at least one trial, got {trials}")
    if post_horizon < 1:
        raise ValueError(f"post_horizon must be positive, got {post_horizon}")
    _validate_detector_task(detector, change.dimension)
    t = change.change_time
    length = t - 1 + post_horizon
    task = replace(change, length=length)

    if mask_noise:
        base = generate(task)

        def make_stream(trial_id, stream_seed):
            rng = np.random.default_rng(stream_seed)
            return base + rng.normal(0.0, 1.0, size=base.shape)

    else:

        def make_stream(trial_id, stream_seed):
            return generate(replace(task, seed=stream_seed))

    stops, seeds = _run_stop_times(detector, trials, base_seed, make_stream, length, change.dimension, workers)

    records = []
    for i in range(trials):
        s = int(stops[i])
        if s == 0:
            outcome, stop_time, delay = "censored", None, None
        elif s < t:
            outcome, stop_time, delay = "false_alarm", s, None
        else:
            outcome, stop_time, delay = "detection", s, s - t
        records.append(
            TrialRecord(
                trial_id=i,
                seed=int(seeds[i]),
                change_time=t,
                stop_time=stop_time,
                outcome=outcome,
                delay=delay,
            )
        )
    delays = np.array([r.delay for r in records if r.outcome == "detection"], dtype=float)
    n_det = delays.size
    n_fa = sum(1 for r in records if r.outcome == "false_alarm")
    n_cens = trials - n_det - n_fa
    echo = {
        "op": "estimate_esadd",
        "detector": detector.describe(),
        "task": task.describe(),
        "trials": trials,
        "post_horizon": post_horizon,
        "noise_mask": mask_noise,
        "base_seed": base_seed,
        "seed_derivation": "SeedSequence([base_seed, trial_id]) -> (stream, reference) words",
    }
    return EvalReport(
        arl2fa_mean=None,
        arl2fa_lower_flag=False,
        esadd_mean=float(np.mean(delays)) if n_det else None,
        esadd_p95=float(np.percentile(delays, 95)) if n_det else None,
        esadd_max=float(np.max(delays)) if n_det else None,
        false_alarm_rate=n_fa / trials,
        detection_rate=(n_det / (n_det + n_cens)) if (n_det + n_cens) else None,
        detection_count=n_det,
        false_alarm_count=n_fa,
        censored_count=n_cens,
        trials=records,
        config_echo=echo,
    )


@dataclass(frozen=True)
class TradeoffRow:
    """One false-alarm level on the delay trade-off curve."""

    level: float
    h: float
    delay_bound: float
    measured_delay: Optional[float]


def tradeoff_curve(
    detector: KcusumConfig,
    change: ChangeSpec,
    dk_sq: float,
    levels: Sequence[float],
    trials: int = 1000,
    base_seed: int = 0,
    post_horizon: Optional[int] = None,
    measure: bool = True,
    workers: int = 1,
) -> List[TradeoffRow]:
    """Delay against guaranteed false-alarm level.

    For each level the smallest threshold whose false-alarm lower bound
    meets it is computed, the closed-form delay bound evaluated, and
    (optionally) the mean delay measured on the supplied change task at
    that threshold.  Rows are suitable for log-x plotting.
    """
    if not levels:
        raise ValueError("need at least one false-alarm level")
    if any(lvl < 2 for lvl in levels):
        raise ValueError("false-alarm levels below 2 are unreachable")
    k_inf = detector.kernel.sup_bound
    rows = []
    for idx, level in enumerate(levels):
        h = smallest_h_for_arl2fa(level, detector.delta, k_inf)
        bound = kcusum_esadd_upper(h, detector.delta, k_inf, dk_sq)
        measured = None
        if measure:
            horizon = post_horizon if post_horizon is not None else int(3 * bound) + 64
            level_seed = int(np.random.SeedSequence([base_seed, idx]).generate_state(1, np.uint64)[0])
            report = estimate_esadd(
                replace(detector, h=h), change, trials, horizon, base_seed=level_seed, workers=workers
            )
            measured = report.esadd_mean
        rows.append(TradeoffRow(level=float(level), h=h, delay_bound=bound, measured_delay=measured))
    return rows


def write_tradeoff_csv(rows: Sequence[TradeoffRow], path_or_handle, config: Optional[dict] = None) -> None:
    own = isinstance(path_or_handle, str)
    handle = open(path_or_handle, "w", newline="") if own else path_or_handle
    try:
        if config is not None:
            handle.write("# config: " + json.dumps(config, sort_keys=True) + "\n")
        writer = csv.writer(handle)
        writer.writerow(["level", "h", "delay_bound", "measured_delay"])
        for r in rows:
            writer.writerow(
                [
                    "%.17g" % r.level,
                    "%.17g" % r.h,
                    "%.17g" % r.delay_bound,
                    "" if r.measured_delay is None else "%.17g" % r.measured_delay,
                ]
            )
    finally:
        if own:
            handle.close()


@dataclass(frozen=True)
class C1Result:
    """Empirical behaviour of the unreflected block-score walk.

    Under no-change sampling ``crossing_fraction`` estimates the
    probability the walk ever exceeds the threshold; under post-change
    sampling ``mean_crossing_time`` (in blocks) estimates the mean
    crossing time.  Both are horizon-censored.
    """

    crossing_fraction: float
    mean_crossing_time: Optional[float]
    trials: int
    horizon: int


def simulate_c1(
    delta: float,
    kernel: KernelSpec,
    p1: NormalSpec,
    p2: Optional[NormalSpec],
    h: float,
    trials: int,
    horizon: int = 4096,
    base_seed: int = 0,
) -> C1Result:
    """Simulate the unreflected sum of drift-adjusted block scores.

    Each block draws the x pair from ``p2`` (or from ``p1`` when ``p2`` is
    None, the no-change case) and the reference pair from ``p1``, strictly
    fresh each block.  The walk stops when the running sum strictly
    exceeds ``h``.
    """
    if trials < 1:
        raise ValueError(f"need at least one trial, got {trials}")
    if horizon < 1:
        raise ValueError(f"horizon must be positive, got {horizon}")
    px = p2 if p2 is not None else p1
    if px.dimension != p1.dimension or p1.dimension != kernel.dimension:
        raise ValueError("sampler dimensions must match the kernel dimension")
    d = kernel.dimension

    crossing = np.zeros(trials, dtype=np.int64)
    for lo, hi in _batch_bounds(trials, 4 * horizon, d):
        nb = hi - lo
        scores = np.empty((nb, horizon))
        for i in range(nb):
            stream_seed, _ = derive_trial_seeds(base_seed, lo + i)
            rng = np.random.default_rng(stream_seed)
            xs = px.sample(rng, 2 * horizon).reshape(horizon, 2, d)
            ys = p1.sample(rng, 2 * horizon).reshape(horizon, 2, d)
            scores[i] = _block_scores_nd(xs[:, 0], xs[:, 1], ys[:, 0], ys[:, 1], kernel) - delta
        sums = np.cumsum(scores, axis=1)
        crossed = sums > h
        any_cross = crossed.any(axis=1)
        first = np.argmax(crossed, axis=1) + 1
        crossing[lo:hi] = np.where(any_cross, first, 0)

    hit = crossing > 0
    return C1Result(
        crossing_fraction=float(np.mean(hit)),
        mean_crossing_time=float(np.mean(crossing[hit])) if hit.any() else None,
        trials=trials,
        horizon=horizon,
    )
