"""Off-diagonal order check between P_2 and P_3 for pi(y) = 2y, q uniform on [0, 1]."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

from scipy.integrate import quad

logger = logging.getLogger(__name__)

LOW_SET = (0.0, 0.1)
HIGH_SET = (0.9, 1.0)


def _weight(y: float) -> float:
    return 2.0 * y


def p2_density(x: float, y: float) -> float:
    """Density in y of P_2(x, dy) off the diagonal: w(y)/(w(x) + w(y))."""
    return _weight(y) / (_weight(x) + _weight(y))


def p3_density(x: float, y: float) -> float:
    """2 w(y) int_0^1 dz / (w(x) + w(y) + w(z)); the inner integral in closed form."""
    c = _weight(x) + _weight(y)
    return 2.0 * _weight(y) * 0.5 * math.log((c + 2.0) / c)


@dataclass(frozen=True)
class PeskunCheck:
    x: float
    p2_low: float
    p3_low: float
    p2_high: float
    p3_high: float

    @property
    def order_reversed(self) -> bool:
        """P_3 < P_2 on the low set while P_3 > P_2 on the high set."""
        return self.p3_low < self.p2_low and self.p3_high > self.p2_high


def peskun_counterexample(x: float = 0.2) -> PeskunCheck:
    if not 0.0 < x < 1.0:
        raise ValueError(f"x must lie in (0, 1), got {x}")
    for lo, hi in (LOW_SET, HIGH_SET):
        if lo <= x <= hi:
            raise ValueError(f"x={x} lies in the test set ({lo}, {hi})")

    def integral(density, interval):
        value, _ = quad(lambda y: density(x, y), *interval, epsabs=1e-13, epsrel=1e-12)
        return value

    check = PeskunCheck(
        x=x,
        p2_low=integral(p2_density, LOW_SET),
        p3_low=integral(p3_density, LOW_SET),
        p2_high=integral(p2_density, HIGH_SET),
        p3_high=integral(p3_density, HIGH_SET),
    )
    logger.info(
        "x=%g: P2/P3 on %s = %.6f/%.6f, on %s = %.6f/%.6f",
        x, LOW_SET, check.p2_low, check.p3_low, HIGH_SET, check.p2_high, check.p3_high,
    )
    return check
