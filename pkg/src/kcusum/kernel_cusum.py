"""Kernel CUSUM detector: non-parametric change detection against a reference sample.

Incoming observations are consumed in pairs.  Odd steps buffer the sample
and a reference draw; even steps score the buffered pair against the
reference pair with the drift-adjusted block score, add it to the
reflected running statistic and test the threshold.  Alarms can therefore
only occur at even step counts.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Iterable, List, Optional, Tuple

import numpy as np

from .cusum import AlarmEvent
from .kernels import KernelSpec
from .mmd import PairBlock, drifted_block_score

__all__ = [
    "ReferencePool",
    "KcusumState",
    "kcusum_new",
    "kcusum_step",
    "kcusum_run",
    "kcusum_run_with_reset",
    "derive_pool_seed",
]


class ReferencePool:
    """Finite sample of the pre-change regime, drawn with replacement.

    The pool is immutable once built; each detector samples it through its
    own seeded generator, so identical seeds give identical draw sequences
    no matter how many detectors share the pool.
    """

    def __init__(self, samples, rng_seed: int):
        samples = np.asarray(samples, dtype=float)
        if samples.ndim == 1:
            samples = samples.reshape(-1, 1)
        if samples.ndim != 2 or samples.shape[0] == 0:
            raise ValueError("reference pool needs a non-empty sequence of observations")
        if not np.all(np.isfinite(samples)):
            raise ValueError("reference pool contains non-finite values")
        samples = samples.copy()
        samples.setflags(write=False)
        self.samples = samples
        self.rng_seed = int(rng_seed)

    @property
    def size(self) -> int:
        return self.samples.shape[0]

    @property
    def dimension(self) -> int:
        return self.samples.shape[1]

    def sampler(self) -> np.random.Generator:
        """Fresh seeded generator for one detector's draw sequence."""
        return np.random.default_rng(self.rng_seed)

    def draw(self, rng: np.random.Generator, count: Optional[int] = None) -> np.ndarray:
        """Sample rows with replacement using the supplied generator."""
        idx = rng.integers(0, self.size, size=count)
        return self.samples[idx]

    def describe(self) -> dict:
        return {"size": self.size, "dimension": self.dimension, "rng_seed": self.rng_seed}


def derive_pool_seed(base_seed: int, stage: int) -> int:
    """Deterministic seed for pools rebuilt after the ``stage``-th alarm."""
    return int(np.random.SeedSequence([base_seed, stage]).generate_state(1, np.uint64)[0])


@dataclass
class KcusumState:
    """Running statistic plus the one-sample buffer carried between steps.

    ``pending_x`` and ``pending_y`` are both set exactly when the step
    count is odd.  The state is a value owned by one consumer; the embedded
    generator advances as reference draws are made.
    """

    z: float
    n: int
    h: float
    delta: float
    kernel: KernelSpec
    pool: ReferencePool
    rng: np.random.Generator
    pending_x: Optional[np.ndarray] = None
    pending_y: Optional[np.ndarray] = None
    alarmed_at: Optional[int] = None
    last_score: Optional[float] = None


def kcusum_new(h: float, delta: float, kernel: KernelSpec, pool: ReferencePool) -> KcusumState:
    """Fresh detector state with the statistic at zero.

    ``delta`` at or above twice the kernel bound exceeds the regime the
    detector's analysis assumes, and past four times the bound the
    drift-adjusted score is never positive, so no change is detectable;
    both construct with a warning rather than an error.
    """
    if h < 0:
        raise ValueError(f"threshold must be non-negative, got {h}")
    if delta < 0:
        raise ValueError(f"drift must be non-negative, got {delta}")
    if pool.dimension != kernel.dimension:
        raise ValueError(
            f"reference pool dimension {pool.dimension} does not match kernel dimension {kernel.dimension}"
        )
    if delta >= 2.0 * kernel.sup_bound:
        warnings.warn(
            f"drift {delta} is at or above twice the kernel bound {kernel.sup_bound}; "
            "detection power is not guaranteed and beyond four times the bound no "
            "change is detectable",
            UserWarning,
            stacklevel=2,
        )
    return KcusumState(
        z=0.0, n=0, h=h, delta=delta, kernel=kernel, pool=pool, rng=pool.sampler()
    )


def _check_observation(x, dimension: int) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != dimension:
        raise ValueError(f"observation has {x.size} components, detector expects {dimension}")
    return x


def kcusum_step(state: KcusumState, x) -> Tuple[KcusumState, Optional[AlarmEvent]]:
    """Advance the detector by one observation.

    A reference sample is drawn every step.  Odd steps only fill the
    buffer; the statistic is not adjusted.  Even steps compute the
    drift-adjusted block score of (previous, current) against the two
    buffered reference draws, reflect at zero and alarm on ``z >= h``.
    """
    if state.alarmed_at is not None:
        raise RuntimeError(f"detector already alarmed at step {state.alarmed_at}")
    x = _check_observation(x, state.kernel.dimension)
    y = state.pool.draw(state.rng)
    n = state.n + 1
    if n % 2 == 1:
        return replace(state, n=n, pending_x=x, pending_y=y, last_score=None), None
    block = PairBlock(x0=state.pending_x, x1=x, y0=state.pending_y, y1=y)
    score = drifted_block_score(block, state.kernel, state.delta)
    z = max(0.0, state.z + score)
    new = replace(state, z=z, n=n, pending_x=None, pending_y=None, last_score=score)
    if z >= state.h:
        new.alarmed_at = n
        return new, AlarmEvent(time=n, statistic=z)
    return new, None


def kcusum_run(stream: Iterable, h: float, delta: float, kernel: KernelSpec, pool: ReferencePool) -> Optional[AlarmEvent]:
    """Run the detector over a stream, returning the first alarm or None."""
    state = kcusum_new(h, delta, kernel, pool)
    for x in stream:
        state, alarm = kcusum_step(state, x)
        if alarm is not None:
            return alarm
    return None


def kcusum_run_with_reset(
    stream: Iterable,
    h: float,
    delta: float,
    kernel: KernelSpec,
    pool: ReferencePool,
    reset_pool_size: int = 64,
) -> List[AlarmEvent]:
    """Detect repeatedly, resampling the reference after every alarm.

    On each alarm the event is recorded (with times counted from the start
    of the stream), the next ``reset_pool_size`` observations are collected
    as the new reference pool for the regime that was just entered, and
    detection restarts after them.  If the stream ends mid-rebuild the
    partial pool is discarded.  Rebuilt pools get deterministic seeds
    derived from the original pool seed and the alarm index.
    """
    if reset_pool_size < 2:
        raise ValueError(f"reset_pool_size must be at least 2, got {reset_pool_size}")
    events: List[AlarmEvent] = []
    it = iter(stream)
    offset = 0
    current = pool
    while True:
        state = kcusum_new(h, delta, kernel, current)
        alarm = None
        for x in it:
            state, alarm = kcusum_step(state, x)
            if alarm is not None:
                break
        if alarm is None:
            return events
        offset += alarm.time
        events.append(AlarmEvent(time=offset, statistic=alarm.statistic))
        rebuild = []
        for x in it:
            rebuild.append(_check_observation(x, kernel.dimension))
            if len(rebuild) == reset_pool_size:
                break
        if len(rebuild) < reset_pool_size:
            return events
        offset += reset_pool_size
        current = ReferencePool(np.array(rebuild), derive_pool_seed(pool.rng_seed, len(events)))
