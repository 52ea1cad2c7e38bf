"""Attacker localization from per-node throughput variation.

Three stages: flag suspected victims along routing paths, group suspects
that a single disk can cover without covering any unaffected node, then
place the attacker at the |dS|-weighted centroid of each group.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptyGroup


@dataclass
class VariationReport:
    delta: dict[int, float]  # percent change per node
    excluded: list[int] = field(default_factory=list)  # zero-baseline nodes
    window: float | None = None


def throughput_variation(baseline: Mapping[int, float], current: Mapping[int, float],
                         window: float | None = None) -> VariationReport:
    delta, excluded = {}, []
    for node in sorted(baseline):
        b = baseline[node]
        if b <= 0:
            excluded.append(node)
            continue
        delta[node] = 100.0 * (current.get(node, 0.0) - b) / b
    return VariationReport(delta, excluded, window)


def identify_suspects(paths: Iterable[Sequence[int]], dS: Mapping[int, float],
                      delta: float = 5.0, delta_prime: float = 10.0) -> set[int]:
    """Suspected victims; each path runs source first, head last."""
    if delta <= 0 or delta_prime <= 0:
        raise ValueError("thresholds must be positive")
    suspects: set[int] = set()
    for path in paths:
        path = list(path)
        m = len(path)
        if m < 2 or dS.get(path[0], 0.0) > -delta:
            continue
        for i in range(m - 1):
            here = dS.get(path[i], 0.0)
            if here >= -delta:
                continue
            if i + 1 == m - 1 or abs(here - dS.get(path[i + 1], 0.0)) > delta_prime:
                suspects.add(path[i])
                if i > 0 and abs(here - dS.get(path[i - 1], 0.0)) < delta_prime:
                    suspects.add(path[i - 1])
    return suspects


def _circle_intersections(c0, r0, c1, r1):
    d = math.dist(c0, c1)
    if d == 0 or d > r0 + r1 or d < abs(r0 - r1):
        return []
    a = (r0 * r0 - r1 * r1 + d * d) / (2 * d)
    h = math.sqrt(max(r0 * r0 - a * a, 0.0))
    ux, uy = (c1[0] - c0[0]) / d, (c1[1] - c0[1]) / d
    mx, my = c0[0] + a * ux, c0[1] + a * uy
    return [(mx - h * uy, my + h * ux), (mx + h * uy, my - h * ux)]


def covering_disk_exists(a, b, blockers, radius, *, grid=15) -> bool:
    """True iff some disk of ``radius`` contains ``a`` and ``b`` and no point of ``blockers``.

    Candidate centres are the lens midpoint, pairwise intersections of the
    boundary circles of ``a``, ``b`` and every nearby blocker, each nudged in
    a few directions, plus a grid over the lens.
    """
    a, b = np.asarray(a, float), np.asarray(b, float)
    R = float(radius)
    if np.linalg.norm(a - b) > 2 * R:
        return False
    mid = (a + b) / 2
    blk = np.asarray([p for p in blockers if np.linalg.norm(np.asarray(p) - mid) <= 2 * R], float).reshape(-1, 2)
    circles = [tuple(a), tuple(b)] + [tuple(p) for p in blk]
    cand = [mid]
    for i in range(len(circles)):
        for j in range(i + 1, len(circles)):
            for pt in _circle_intersections(circles[i], R, circles[j], R):
                cand.append(np.asarray(pt))
    eps = 1e-6 * R
    nudges = np.array([[0, 0]] + [[math.cos(t), math.sin(t)] for t in np.linspace(0, 2 * math.pi, 8, endpoint=False)])
    pts = np.concatenate([c + eps * nudges for c in cand])
    lo, hi = np.minimum(a, b) - R, np.maximum(a, b) + R
    gx, gy = np.meshgrid(np.linspace(lo[0], hi[0], grid), np.linspace(lo[1], hi[1], grid))
    pts = np.concatenate([pts, np.column_stack([gx.ravel(), gy.ravel()])])
    tol = 1e-9 * R
    ok = (np.linalg.norm(pts - a, axis=1) <= R + tol) & (np.linalg.norm(pts - b, axis=1) <= R + tol)
    if blk.size:
        d = np.linalg.norm(pts[:, None, :] - blk[None, :, :], axis=2)
        ok &= np.all(d > R, axis=1)
    return bool(ok.any())


def group_suspects(suspects: Iterable[int], positions: Mapping[int, Sequence[float]],
                   non_suspects: Iterable[int], radius: float, min_group_size: int = 2) -> list[list[int]]:
    """Connected components of the 'one disk covers both' relation, small ones dropped."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    sus = sorted(set(suspects))
    blockers = [positions[n] for n in sorted(set(non_suspects) - set(sus))]
    parent = {s: s for s in sus}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i, a in enumerate(sus):
        for b in sus[i + 1:]:
            if find(a) != find(b) and covering_disk_exists(positions[a], positions[b], blockers, radius):
                parent[max(find(a), find(b))] = min(find(a), find(b))
    groups: dict[int, list[int]] = {}
    for s in sus:
        groups.setdefault(find(s), []).append(s)
    return [g for g in groups.values() if len(g) >= min_group_size]


def centroid_weights(group: Sequence[int], dS: Mapping[int, float]) -> dict[int, float]:
    if not group:
        raise EmptyGroup("cannot weight an empty group")
    mags = {n: abs(dS[n]) for n in group}
    total = math.fsum(mags.values())
    if total == 0:
        return {n: 1.0 / len(group) for n in group}
    return {n: m / total for n, m in mags.items()}


def estimate_location(group: Sequence[int], dS: Mapping[int, float],
                      positions: Mapping[int, Sequence[float]]) -> tuple[float, float]:
    w = centroid_weights(group, dS)
    x = math.fsum(w[n] * positions[n][0] for n in group)
    y = math.fsum(w[n] * positions[n][1] for n in group)
    return (x, y)


@dataclass
class LocalizationResult:
    suspects: set[int]
    groups: list[list[int]]
    estimates: list[tuple[float, float]]

    @property
    def best(self) -> tuple[float, float] | None:
        """Estimate of the group with the largest total throughput loss."""
        return self.estimates[0] if self.estimates else None

    def error(self, truth) -> float | None:
        return None if self.best is None else math.dist(self.best, truth)


def localize(paths, dS, positions, *, delta=5.0, delta_prime=10.0, radius=40.0, min_group_size=2,
             exclude=()) -> LocalizationResult:
    """Full pipeline; groups come back ordered by total |dS|, heaviest first."""
    exclude = set(exclude)
    suspects = identify_suspects(paths, dS, delta, delta_prime) - exclude
    others = [n for n in positions if n not in suspects and n not in exclude]
    groups = group_suspects(suspects, positions, others, radius, min_group_size)
    groups.sort(key=lambda g: (-math.fsum(abs(dS[n]) for n in g), g))
    return LocalizationResult(suspects, groups, [estimate_location(g, dS, positions) for g in groups])
