"""Independent reference computations used by the tests."""

import math
from fractions import Fraction


def two_pass_std(xs):
    mean = sum(xs) / len(xs)
    return math.sqrt(sum((x - mean) ** 2 for x in xs) / len(xs))


def lagrange_coefficients(points):
    """Exact (a, b, c) of the quadratic through three points, in rationals."""
    (x0, y0), (x1, y1), (x2, y2) = [(Fraction(x), Fraction(str(y))) for x, y in points]
    a = b = c = Fraction(0)
    for xi, yi, xj, xk in ((x0, y0, x1, x2), (x1, y1, x0, x2), (x2, y2, x0, x1)):
        w = yi / ((xi - xj) * (xi - xk))
        c += w
        b -= w * (xj + xk)
        a += w * xj * xk
    return a, b, c


def replay_single_queue(arrivals):
    """Busy periods of one FIFO server fed every (arrival_time, service) pair."""
    periods = []
    free_at = None
    start = None
    for t, service in sorted(arrivals):
        if free_at is None or t > free_at:
            if start is not None:
                periods.append((start, free_at))
            start = t
            free_at = t
        free_at += service
    if start is not None:
        periods.append((start, free_at))
    return periods


def merged_busy_periods(log):
    periods = []
    for tx in sorted(log, key=lambda tx: tx.start):
        if periods and tx.start <= periods[-1][1]:
            periods[-1] = (periods[-1][0], max(periods[-1][1], tx.end))
        else:
            periods.append((tx.start, tx.end))
    return periods
