"""Student t-tests with a self-contained t distribution.

The t CDF is evaluated through the regularized incomplete beta function,

    P(|T| > |t|) = I_x(df / 2, 1 / 2),  x = df / (df + t^2),

with ``I_x`` computed by the modified Lentz continued fraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

CF_TOL = 1e-12
CF_MAX_ITER = 10_000
_TINY = 1e-300


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > _TINY else _TINY)
    h = d
    for m in range(1, CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        step = d * c
        h *= step
        if abs(step - 1.0) < CF_TOL:
            return h
    raise RuntimeError(f"incomplete beta continued fraction did not converge for a={a}, b={b}, x={x}")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function ``I_x(a, b)``."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    # The fraction converges fast for x < (a + 1) / (a + b + 2); use symmetry otherwise.
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf_two_sided(t: float, df: float) -> float:
    """``P(|T| >= |t|)`` for Student's t with ``df`` degrees of freedom."""
    if df <= 0:
        raise ValueError("df must be positive")
    if math.isinf(t):
        return 0.0
    return betainc(df / 2.0, 0.5, df / (df + t * t))


def t_cdf(t: float, df: float) -> float:
    tail = 0.5 * t_sf_two_sided(t, df)
    return 1.0 - tail if t > 0 else tail


@dataclass(frozen=True)
class TTestResult:
    t_statistic: float
    degrees_of_freedom: float
    p_value: float
    kind: str
    alternative: str = "two-sided"

    def reject(self, alpha: float = 0.05) -> bool:
        return self.p_value < alpha


def _p_value(t: float, df: float, alternative: str) -> float:
    if alternative == "two-sided":
        return min(1.0, t_sf_two_sided(t, df))
    if alternative == "greater":
        return 1.0 - t_cdf(t, df)
    if alternative == "less":
        return t_cdf(t, df)
    raise ValueError(f"alternative must be 'two-sided', 'greater' or 'less', got {alternative!r}")


def _ratio(diff: float, se: float, what: str) -> float:
    if se > 0:
        return diff / se
    if diff == 0:
        raise ValueError(f"degenerate test: zero {what} and zero mean difference")
    return math.copysign(math.inf, diff)


def t_test_independent(
    x: Sequence[float], y: Sequence[float], equal_var: bool = True, alternative: str = "two-sided"
) -> TTestResult:
    """Two-sample t-test; pooled variance by default, Welch's form otherwise."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    nx, ny = x.size, y.size
    if nx < 2 or ny < 2:
        raise ValueError("each sample needs at least two observations")
    vx, vy = x.var(ddof=1), y.var(ddof=1)
    diff = float(x.mean() - y.mean())
    if equal_var:
        df = float(nx + ny - 2)
        pooled = ((nx - 1) * vx + (ny - 1) * vy) / df
        se = math.sqrt(pooled * (1.0 / nx + 1.0 / ny))
        t = _ratio(diff, se, "pooled variance")
    else:
        ax, ay = vx / nx, vy / ny
        se = math.sqrt(ax + ay)
        t = _ratio(diff, se, "variance")
        df = (ax + ay) ** 2 / (ax**2 / (nx - 1) + ay**2 / (ny - 1))
    return TTestResult(t, df, _p_value(t, df, alternative), "independent", alternative)


def t_test_paired(x: Sequence[float], y: Sequence[float], alternative: str = "two-sided") -> TTestResult:
    """One-sample t-test on the paired differences ``x - y``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"paired samples differ in length ({x.size} vs {y.size})")
    if x.size < 2:
        raise ValueError("paired test needs at least two pairs")
    d = x - y
    sd = d.std(ddof=1)
    if sd == 0:
        raise ValueError("degenerate paired test: all differences are identical")
    t = float(d.mean() / (sd / math.sqrt(d.size)))
    df = float(d.size - 1)
    return TTestResult(t, df, _p_value(t, df, alternative), "paired", alternative)
