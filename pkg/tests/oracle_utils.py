"""Independent reference computations used by the test suite.

Everything here is deliberately written against the problem statement
rather than the package implementation: brute-force clustering by
assignment enumeration, and (in ``tree_oracle``) the extensive-form
restatement of the multistage bidding problem.
"""

from __future__ import annotations

import itertools

import numpy as np


def brute_force_kmeans(points: np.ndarray, k: int) -> float:
    """Globally optimal k-means inertia by enumerating all assignments."""
    pts = np.atleast_2d(points)
    n = pts.shape[0]
    best = np.inf
    for assignment in itertools.product(range(k), repeat=n):
        lab = np.array(assignment)
        inertia = 0.0
        for c in range(k):
            members = pts[lab == c]
            if len(members) == 0:
                continue
            centroid = members.mean(axis=0)
            inertia += float(((members - centroid) ** 2).sum())
        if inertia < best:
            best = inertia
    return best


def chain_marginals(initial: np.ndarray, transitions: list[np.ndarray]) -> list[np.ndarray]:
    """Exact per-stage node-visit probabilities by forward propagation."""
    out = [np.asarray(initial, dtype=float)]
    for P in transitions:
        out.append(out[-1] @ P)
    return out


def enumerate_paths(initial: np.ndarray, transitions: list[np.ndarray]):
    """All positive-probability node paths with their probabilities."""
    paths = [((i,), p) for i, p in enumerate(initial) if p > 0]
    for P in transitions:
        nxt = []
        for path, prob in paths:
            row = P[path[-1]]
            for j, q in enumerate(row):
                if q > 0:
                    nxt.append((path + (j,), prob * q))
        paths = nxt
    return paths
