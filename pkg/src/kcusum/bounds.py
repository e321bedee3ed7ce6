"""Closed-form run-length and delay bounds for both detectors.

All functions are pure double-precision formulas.  The kernel detector's
bounds are driven by the Chernoff-style rate derived from the bounded
score's moment generating function; the parametric bounds come from the
random-walk exit-time and supremum-crossing results that also stand alone
below.
"""

from __future__ import annotations

import math

__all__ = [
    "cusum_arl2fa_lower",
    "cusum_esadd_bound",
    "kcusum_rate",
    "kcusum_arl2fa_lower",
    "kcusum_esadd_upper",
    "smallest_h_for_arl2fa",
    "walk_exit_bound",
    "sup_crossing_bound",
]


def cusum_arl2fa_lower(h: float) -> float:
    """Lower bound ``e^h`` on the parametric detector's mean time to false alarm."""
    if h < 0:
        raise ValueError(f"threshold must be non-negative, got {h}")
    return math.exp(h)


def cusum_esadd_bound(h: float, kl: float, second_moment: float) -> float:
    """Upper bound ``h/kl + second_moment/kl^2`` on worst-case detection delay.

    ``kl`` is the post-change drift of the log-likelihood ratio (the
    divergence of the post density from the pre density) and
    ``second_moment`` the post-change second moment of its positive part.
    The bound diverges as the two distributions coincide.
    """
    if kl <= 0:
        raise ValueError(f"kl must be positive, got {kl}")
    if h < 0:
        raise ValueError(f"threshold must be non-negative, got {h}")
    if second_moment < 0:
        raise ValueError(f"second_moment must be non-negative, got {second_moment}")
    return h / kl + second_moment / (kl * kl)


def kcusum_rate(delta: float, k_inf: float) -> float:
    """Exponential rate ``log(1 + delta/(4 k_inf)) / (4 k_inf)``.

    Controls how fast the kernel detector's false-alarm bound grows with
    the threshold; increasing in the drift, zero at drift zero.
    """
    if k_inf <= 0:
        raise ValueError(f"kernel bound must be positive, got {k_inf}")
    if delta < 0:
        raise ValueError(f"drift must be non-negative, got {delta}")
    return math.log1p(delta / (4.0 * k_inf)) / (4.0 * k_inf)


def kcusum_arl2fa_lower(h: float, delta: float, k_inf: float) -> float:
    """Lower bound ``2 exp(h * rate)`` on mean samples to false alarm.

    The factor two reflects pairwise consumption: the detector only stops
    at even sample counts, so run lengths are twice the block count.
    Always at least 2.
    """
    if h < 0:
        raise ValueError(f"threshold must be non-negative, got {h}")
    return 2.0 * math.exp(h * kcusum_rate(delta, k_inf))


def kcusum_esadd_upper(h: float, delta: float, k_inf: float, dk_sq: float) -> float:
    """Upper bound ``2h/(dk_sq - delta) + 8 k_inf^2/(dk_sq - delta)^2`` on mean delay.

    Valid only in the detectable regime where the squared kernel distance
    between the regimes exceeds the drift.
    """
    if h < 0:
        raise ValueError(f"threshold must be non-negative, got {h}")
    if k_inf <= 0:
        raise ValueError(f"kernel bound must be positive, got {k_inf}")
    if delta < 0:
        raise ValueError(f"drift must be non-negative, got {delta}")
    gap = dk_sq - delta
    if gap <= 0:
        raise ValueError(
            f"undetectable regime: squared kernel distance {dk_sq} must exceed drift {delta}"
        )
    return 2.0 * h / gap + 8.0 * k_inf * k_inf / (gap * gap)


def smallest_h_for_arl2fa(target: float, delta: float, k_inf: float) -> float:
    """Smallest threshold whose false-alarm lower bound reaches ``target``.

    Inverts :func:`kcusum_arl2fa_lower`; returns 0 when the target is at or
    below the base value 2.  A zero drift admits no finite threshold.
    """
    if target <= 2.0:
        return 0.0
    rate = kcusum_rate(delta, k_inf)
    if rate == 0.0:
        raise ValueError("rate is zero (drift is zero); no threshold reaches the target")
    return math.log(target / 2.0) / rate


def walk_exit_bound(mu: float, second_moment_plus: float, a: float, b: float, alpha: float) -> float:
    """Mean-exit-time bound for a positive-drift random walk leaving ``[a, b]``.

    ``((1-alpha) b + alpha a)/mu + second_moment_plus/mu^2`` where ``mu`` is
    the positive increment mean, ``second_moment_plus`` the second moment of
    the positive part of one increment, and ``alpha`` the probability of
    exiting below.
    """
    if mu <= 0:
        raise ValueError(f"increment mean must be positive, got {mu}")
    if not (a <= 0.0 <= b):
        raise ValueError(f"barriers must satisfy a <= 0 <= b, got a={a}, b={b}")
    if not (0.0 <= alpha <= 1.0):
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if second_moment_plus < 0:
        raise ValueError(f"second_moment_plus must be non-negative, got {second_moment_plus}")
    return ((1.0 - alpha) * b + alpha * a) / mu + second_moment_plus / (mu * mu)


def sup_crossing_bound(q: float, h: float) -> float:
    """Bound ``e^{-q h}`` on the probability a random walk's supremum exceeds ``h``.

    Requires the caller to have verified that the increment moment
    generating function satisfies ``M(q) <= 1`` for this ``q > 0``.
    """
    if q <= 0:
        raise ValueError(f"q must be positive, got {q}")
    if h < 0:
        raise ValueError(f"level must be non-negative, got {h}")
    return math.exp(-q * h)
