"""Precision backends.

Every analytic routine is written once against a small context object:
``DOUBLE`` wraps IEEE doubles with correctly rounded summation
(``math.fsum``); :func:`extended` wraps a private mpmath context with a fixed
number of decimal digits.  :func:`evaluate` runs a computation under the
policy of a :class:`~astree.core.SeriesControl`, escalating from double to
extended precision when the computation's own rounding-error estimate is too
large.
"""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Callable

import mpmath

from .core import ConditioningError, ConvergenceError, SeriesControl


class _Double:
    digits = None
    eps = 2.0 ** -52
    tiny = 1e-300

    num = staticmethod(float)
    exp = staticmethod(math.exp)
    expm1 = staticmethod(math.expm1)
    log = staticmethod(math.log)
    sqrt = staticmethod(math.sqrt)
    fsum = staticmethod(math.fsum)

    def __repr__(self):
        return "double"


class _Extended:
    def __init__(self, digits: int):
        self.digits = int(digits)
        self._mp = mpmath.MPContext()
        self._mp.dps = self.digits
        self.eps = self._mp.mpf(10) ** (-self.digits)
        self.tiny = self._mp.mpf(10) ** (-10 * self.digits)
        self.num = self._mp.mpf
        self.exp = self._mp.exp
        self.expm1 = self._mp.expm1
        self.log = self._mp.log
        self.sqrt = self._mp.sqrt
        self.fsum = self._mp.fsum

    def __repr__(self):
        return f"extended({self.digits})"


DOUBLE = _Double()


@lru_cache(maxsize=32)
def extended(digits: int) -> _Extended:
    return _Extended(digits)


def context_for(control: SeriesControl):
    return extended(control.digits) if control.precision == "extended" else DOUBLE


def evaluate(compute: Callable, control: SeriesControl, acceptable: Callable, what: str):
    """Run ``compute(ctx) -> (value, err, ...)`` under ``control``'s precision policy.

    ``acceptable(value, err)`` decides whether the estimated rounding error
    ``err`` is small enough.  In ``auto`` mode the digit count doubles from
    ``control.digits`` up to ``control.max_digits`` until it is.
    """
    if control.precision == "double":
        ladder = [DOUBLE]
    elif control.precision == "extended":
        ladder = [extended(control.digits)]
    else:
        ladder = [DOUBLE]
        d = control.digits
        while d <= control.max_digits:
            ladder.append(extended(d))
            d *= 2
    result = None
    for ctx in ladder:
        try:
            result = compute(ctx)
        except (ConvergenceError, OverflowError):
            # in double a noise floor can stall a stopping rule; more digits fix that
            if ctx is ladder[-1]:
                raise
            continue
        if acceptable(result[0], result[1]):
            return result + (ctx,)
    value, err = result[0], result[1]
    raise ConditioningError(
        f"{what}: estimated rounding error {float(err):.3g} too large for value "
        f"{float(value):.6g} at {ladder[-1]!r}"
    )


def relative_ok(rel: float, floor: float = 0.0):
    def ok(value, err):
        return err <= rel * abs(value) + floor
    return ok


def count_digits_needed(cond: float, target_rel: float) -> int:
    """Decimal digits so that ``cond * 10**-d <= target_rel``."""
    if cond <= 1:
        return 20
    return int(math.ceil(math.log10(cond) - math.log10(target_rel))) + 5
