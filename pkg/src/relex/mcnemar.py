"""McNemar's paired test on the disagreements of two classifiers."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats


@dataclass(frozen=True)
class McNemarResult:
    b: int               # model A correct, model B wrong
    c: int               # model A wrong, model B correct
    statistic: float
    p_value: float
    significant: bool
    class_id: int | None = None

    @property
    def reported_statistic(self) -> float:
        """The statistic, reported as 0 when not significant."""
        return self.statistic if self.significant else 0.0


def mcnemar_test(pred_a: Sequence[int], pred_b: Sequence[int],
                 truth: Sequence[int], nodes: Sequence[int],
                 alpha: float = 0.05, exact: bool = False,
                 class_id: int | None = None) -> McNemarResult:
    """Continuity-corrected McNemar test over the given node set.

    statistic = (|b - c| - 1)^2 / (b + c) with a chi-square (1 dof)
    p-value; b + c = 0 degenerates to statistic 0, p = 1.  With
    exact=True the p-value comes from the two-sided binomial instead
    (preferable when b + c < 25); the statistic is reported either way.
    """
    pred_a = np.asarray(pred_a)
    pred_b = np.asarray(pred_b)
    truth = np.asarray(truth)
    if not (len(pred_a) == len(pred_b) == len(truth)):
        raise ValueError("prediction and truth vectors must have equal length")
    nodes = np.asarray(nodes, dtype=np.int64)
    if nodes.size == 0:
        raise ValueError("node set must be non-empty")

    a_ok = pred_a[nodes] == truth[nodes]
    b_ok = pred_b[nodes] == truth[nodes]
    b = int(np.sum(a_ok & ~b_ok))
    c = int(np.sum(~a_ok & b_ok))
    if b + c == 0:
        return McNemarResult(b=b, c=c, statistic=0.0, p_value=1.0,
                             significant=False, class_id=class_id)
    statistic = (abs(b - c) - 1) ** 2 / (b + c)
    if exact:
        p_value = min(1.0, 2.0 * float(stats.binom.cdf(min(b, c), b + c, 0.5)))
    else:
        p_value = float(stats.chi2.sf(statistic, df=1))
    return McNemarResult(b=b, c=c, statistic=float(statistic), p_value=p_value,
                         significant=p_value < alpha, class_id=class_id)
