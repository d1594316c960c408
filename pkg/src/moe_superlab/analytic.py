"""Idealised constructions checked numerically.

``construct_support_moe`` builds one selection expert per size-``a`` feature
subset and routes each input to an expert whose subset covers its support,
which reconstructs every input with at most ``a`` active features exactly.
``verify_cones`` checks that top-1 routing regions are closed under positive
scaling and convex combination.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import comb

import numpy as np

from moe_superlab.datagen import FeatureDistribution, make_rng
from moe_superlab.numerics import as_matrix, as_vector


class SupportTooLarge(ValueError):
    """Input has more active features than the construction can hold."""


@dataclass
class SupportMoE:
    n: int
    m: int
    a: int
    subsets: list[tuple[int, ...]]
    W: np.ndarray  # (C(n, a), m, n)
    b: np.ndarray
    index: dict[tuple[int, ...], int] = field(repr=False, default_factory=dict)

    @property
    def n_experts(self) -> int:
        return len(self.subsets)


def construct_support_moe(n: int, m: int, a: int) -> SupportMoE:
    if not 1 <= a <= m <= n:
        raise ValueError(f"need 1 <= a <= m <= n, got a={a}, m={m}, n={n}")
    subsets = list(itertools.combinations(range(n), a))
    W = np.zeros((len(subsets), m, n))
    for s, subset in enumerate(subsets):
        for r, j in enumerate(subset):
            W[s, r, j] = 1.0
    assert len(subsets) == comb(n, a)
    return SupportMoE(n, m, a, subsets, W, np.zeros((len(subsets), n)),
                      {subset: s for s, subset in enumerate(subsets)})


def support(x) -> tuple[int, ...]:
    return tuple(int(i) for i in np.flatnonzero(as_vector(x)))


def smallest_superset(active: tuple[int, ...], n: int, a: int) -> tuple[int, ...]:
    """Lexicographically smallest size-``a`` subset of ``range(n)`` containing ``active``."""
    if len(active) > a:
        raise SupportTooLarge(f"support of size {len(active)} exceeds a={a}")
    chosen = set(active)
    filler = (i for i in range(n) if i not in chosen)
    chosen.update(itertools.islice(filler, a - len(active)))
    return tuple(sorted(chosen))


def support_route(moe: SupportMoE, x) -> int:
    """Index of the expert whose subset is the smallest superset of ``support(x)``."""
    x = as_vector(x)
    if x.shape[0] != moe.n:
        raise ValueError(f"input length {x.shape[0]} != n={moe.n}")
    return moe.index[smallest_superset(support(x), moe.n, moe.a)]


def support_forward(moe: SupportMoE, x) -> np.ndarray:
    e = support_route(moe, x)
    W = moe.W[e]
    return np.maximum(W.T @ (W @ x) + moe.b[e], 0.0)


def _max_error(moe: SupportMoE, X: np.ndarray) -> float:
    worst = 0.0
    for x in X:
        worst = max(worst, float(np.max(np.abs(support_forward(moe, x) - x), initial=0.0)))
    return worst


def verify_equivalence(moe: SupportMoE, samples: int, dist: FeatureDistribution, seed: int = 0,
                       max_draws: int = 1000) -> dict:
    """Reconstruct ``samples`` inputs whose support fits the construction.

    Inputs are rejection-sampled from ``dist``; the report holds the maximum
    infinity-norm reconstruction error.
    """
    if dist.n != moe.n:
        raise ValueError(f"distribution has n={dist.n}, construction has n={moe.n}")
    rng = make_rng(seed)
    kept: list[np.ndarray] = []
    drawn = 0
    for _ in range(max_draws):
        X = dist.draw(max(samples, 256), rng)
        drawn += X.shape[0]
        kept.append(X[(X != 0).sum(axis=1) <= moe.a])
        if sum(len(k) for k in kept) >= samples:
            break
    X = np.concatenate(kept)[:samples]
    return {
        "n": moe.n, "m": moe.m, "a": moe.a, "experts": moe.n_experts,
        "samples": int(X.shape[0]), "drawn": drawn, "max_error": _max_error(moe, X),
    }


def verify_equivalence_exhaustive(moe: SupportMoE, values=(0.25, 1.0)) -> dict:
    """Every support of size <= ``a`` with every assignment of ``values`` to it."""
    rows = [np.zeros(moe.n)]
    for size in range(1, moe.a + 1):
        for active in itertools.combinations(range(moe.n), size):
            for assignment in itertools.product(values, repeat=size):
                x = np.zeros(moe.n)
                x[list(active)] = assignment
                rows.append(x)
    X = np.array(rows)
    return {
        "n": moe.n, "m": moe.m, "a": moe.a, "experts": moe.n_experts,
        "inputs": int(X.shape[0]), "values": list(values), "max_error": _max_error(moe, X),
    }


def _top1(R: np.ndarray, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Argmax expert per row and the gap between the best and runner-up logit."""
    logits = X @ R.T
    best = np.argmax(logits, axis=1)
    if R.shape[0] == 1:
        return best, np.full(X.shape[0], np.inf)
    top2 = np.sort(logits, axis=1)[:, -2:]
    return best, top2[:, 1] - top2[:, 0]


def verify_cones(router, trials: int, seed: int = 0, tie_tol: float = 1e-9) -> dict:
    """Count failures of scaling and convexity closure for top-1 routing.

    Points whose best and runner-up logits differ by less than ``tie_tol``
    (relative to the logit scale) are excluded as ties.
    """
    R = as_matrix(router)
    E, n = R.shape
    rng = make_rng(seed)

    X = rng.standard_normal((trials, n))
    s = rng.uniform(0.0, 100.0, trials)
    s = np.where(s == 0.0, 100.0, s)  # (0, 100]
    e1, gap1 = _top1(R, X)
    e2, gap2 = _top1(R, X * s[:, None])
    scale = np.abs(X @ R.T).max(axis=1) + 1e-300
    untied = (gap1 > tie_tol * scale) & (gap2 > tie_tol * scale * s)
    scaling_violations = int(np.sum((e1 != e2) & untied))

    # pair each point with another routed to the same expert
    Y = rng.standard_normal((trials, n))
    eY, gapY = _top1(R, Y)
    lam = rng.uniform(0.0, 1.0, trials)
    pairs = 0
    convexity_violations = 0
    ties = int(np.sum(~untied))
    for e in range(E):
        a_idx = np.flatnonzero((e1 == e) & untied)
        b_idx = np.flatnonzero((eY == e) & (gapY > tie_tol * np.abs(Y @ R.T).max(axis=1)))
        count = min(a_idx.size, b_idx.size)
        if count == 0:
            continue
        A, B, L = X[a_idx[:count]], Y[b_idx[:count]], lam[a_idx[:count]]
        Z = L[:, None] * A + (1.0 - L[:, None]) * B
        eZ, gapZ = _top1(R, Z)
        zscale = np.abs(Z @ R.T).max(axis=1) + 1e-300
        ok = gapZ > tie_tol * zscale
        ties += int(np.sum(~ok))
        convexity_violations += int(np.sum((eZ != e) & ok))
        pairs += int(np.sum(ok))
    return {
        "experts": E,
        "trials": trials,
        "convexity_pairs": pairs,
        "scaling_violations": scaling_violations,
        "convexity_violations": convexity_violations,
        "excluded_ties": ties,
    }


def verify_cones_many(routers: int, trials: int, E: int, n: int, seed: int = 0) -> dict:
    """Run :func:`verify_cones` on ``routers`` Gaussian routers, ``trials`` points in total."""
    if routers < 1 or trials < routers:
        raise ValueError(f"need routers >= 1 and trials >= routers, got {routers}, {trials}")
    totals = {"routers": routers, "trials": 0, "scaling_violations": 0, "convexity_violations": 0,
              "convexity_pairs": 0, "excluded_ties": 0}
    per_router = trials // routers
    for i in range(routers):
        R = make_rng(seed, 2 * i).standard_normal((E, n))
        point_seed = int(make_rng(seed, 2 * i + 1).integers(2**63))
        report = verify_cones(R, per_router, seed=point_seed)
        for key in totals:
            if key != "routers":
                totals[key] += report[key]
    return totals
