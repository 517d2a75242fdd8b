"""Scoring frequency estimates against ground truth.

All distances are wrap-around distances on the unit circle. A true
frequency counts as found when some estimate lies within ``1/(2n)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .sigmodel import circular_distance


@dataclass(frozen=True)
class ScorePair:
    fn_rate: float
    md: float
    counted_matches: int


def _distances(truth, est):
    truth = np.asarray(truth, dtype=np.float64).ravel()
    est = np.asarray(est, dtype=np.float64).ravel()
    return circular_distance(truth[:, None], est[None, :])


def false_negative_rate(truth, est, n):
    D = _distances(truth, est)
    if D.shape[0] == 0:
        raise ValueError("truth must be nonempty")
    if D.shape[1] == 0:
        return 1.0
    misses = int(np.count_nonzero(D.min(axis=1) > 0.5 / n))
    return misses / D.shape[0]


def _gated_md(D, n):
    gate = 0.5 / n
    near_t = D.min(axis=1)
    near_e = D.min(axis=0)
    hit_t = near_t[near_t <= gate]
    hit_e = near_e[near_e <= gate]
    # a gated match in one direction implies one in the other
    if hit_t.size == 0:
        return 0.0, 0
    return n * ((hit_t.mean() + hit_e.mean()) / 2), int(hit_t.size)


def matched_distance(truth, est, n):
    """``n`` times the mean of the two directional nearest-counterpart
    errors, each averaged only over pairs within ``1/(2n)``; 0 when nothing
    is within range."""
    D = _distances(truth, est)
    if D.size == 0:
        raise ValueError("truth and est must be nonempty")
    return _gated_md(D, n)[0]


def score(truth, est, n):
    D = _distances(truth, est)
    if D.shape[0] == 0:
        raise ValueError("truth must be nonempty")
    if D.shape[1] == 0:
        return ScorePair(1.0, 0.0, 0)
    fn = int(np.count_nonzero(D.min(axis=1) > 0.5 / n)) / D.shape[0]
    md, hits = _gated_md(D, n)
    return ScorePair(fn, float(md), hits)


def min_pairing_distance(truth, est):
    """Minimum over permutations of the summed squared circular distances."""
    D = _distances(truth, est)
    if D.shape[0] != D.shape[1]:
        raise ValueError(f"length mismatch: {D.shape[0]} true vs {D.shape[1]} estimated")
    cost = D ** 2
    rows, cols = linear_sum_assignment(cost)
    # exactly rounded, so tied optimal assignments give the same float
    return math.fsum(cost[rows, cols].tolist())
