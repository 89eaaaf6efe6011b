"""Placing scattered stations on a grid so that neighbours share information.

Stations are scored pairwise with a histogram estimate of mutual
information; a genetic algorithm then searches permutations of grid slots
(stations plus dummy slots) for the layout with the largest summed MI over
8-neighbour pairs.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

DEFAULT_BINS = 16


def estimate_mi(x, y, bins: int = DEFAULT_BINS) -> float:
    """Plug-in mutual information in nats from equal-width histograms."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size:
        raise ValueError(f"series lengths differ: {x.size} vs {y.size}")
    if x.size < 2 or bins < 2:
        raise ValueError("need at least 2 samples and 2 bins")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return 0.0
    counts, _, _ = np.histogram2d(x, y, bins=bins)
    pxy = counts / x.size
    px = pxy.sum(axis=1, keepdims=True)
    py = pxy.sum(axis=0, keepdims=True)
    nz = pxy > 0
    mi = float(np.sum(pxy[nz] * np.log(pxy[nz] / (px @ py)[nz])))
    return max(mi, 0.0)


@dataclass(frozen=True)
class MIMatrix:
    values: np.ndarray
    bin_count: int = DEFAULT_BINS

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError(f"MI matrix must be square, got {v.shape}")
        if not np.array_equal(v, v.T) or np.any(v < 0):
            raise ValueError("MI matrix must be symmetric and non-negative")
        object.__setattr__(self, "values", v)

    @property
    def n_stations(self) -> int:
        return self.values.shape[0]


def mi_matrix(series, bins: int = DEFAULT_BINS) -> MIMatrix:
    """Pairwise MI of ``series[S, T]``; the upper triangle is mirrored."""
    s = np.asarray(series, dtype=np.float64)
    n = s.shape[0]
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            out[i, j] = out[j, i] = estimate_mi(s[i], s[j], bins)
    return MIMatrix(out, bins)


# --- fitness ------------------------------------------------------------------

@lru_cache(maxsize=32)
def neighbour_pairs(W: int, H: int) -> tuple[np.ndarray, np.ndarray]:
    """Unordered 8-neighbour pairs of a row-major ``W x H`` grid."""
    a, b = [], []
    for i in range(W):
        for j in range(H):
            for di, dj in ((0, 1), (1, 0), (1, 1), (1, -1)):
                k, m = i + di, j + dj
                if 0 <= k < W and 0 <= m < H:
                    a.append(i * H + j)
                    b.append(k * H + m)
    return np.array(a), np.array(b)


def _extended(mi: MIMatrix, n_slots: int) -> np.ndarray:
    ext = np.zeros((n_slots, n_slots))
    s = mi.n_stations
    ext[:s, :s] = mi.values
    return ext


@dataclass
class PermutationIndividual:
    """``assignment[cell]`` is a slot id; ids at or above ``n_stations`` are dummies."""
    assignment: np.ndarray
    n_stations: int
    fitness: Optional[float] = None

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=np.int64)
        if not np.array_equal(np.sort(a), np.arange(a.size)):
            raise ValueError("assignment must be a permutation of the grid slots")
        if self.n_stations > a.size:
            raise ValueError(f"{self.n_stations} stations do not fit on {a.size} cells")
        self.assignment = a

    def grid(self, W: int, H: int) -> np.ndarray:
        """Station index per cell with dummies as -1."""
        g = np.where(self.assignment < self.n_stations, self.assignment, -1)
        return g.reshape(W, H)


def fitness(ind: PermutationIndividual, mi: MIMatrix, W: int, H: int) -> float:
    a = np.asarray(ind.assignment)
    if a.size != W * H:
        raise ValueError(f"assignment has {a.size} cells, grid has {W * H}")
    return _exact_fitness(a, _extended(mi, W * H), W, H)


def _exact_fitness(assignment: np.ndarray, ext: np.ndarray, W: int, H: int) -> float:
    # correctly rounded, so the value does not depend on pair order
    p, q = neighbour_pairs(W, H)
    return math.fsum(ext[assignment[p], assignment[q]])


def population_fitness(pop: np.ndarray, ext: np.ndarray, W: int, H: int) -> np.ndarray:
    """Fast batched fitness; may differ from ``fitness`` in the last bits."""
    p, q = neighbour_pairs(W, H)
    return ext[pop[:, p], pop[:, q]].sum(axis=1)


# --- genetic search -----------------------------------------------------------

def pmx(p1: np.ndarray, p2: np.ndarray, lo: int, hi: int) -> np.ndarray:
    """Partially mapped crossover: ``p1[lo:hi]`` kept, the rest repaired from ``p2``."""
    child = p2.copy()
    child[lo:hi] = p1[lo:hi]
    in_seg = np.zeros(p1.size, dtype=bool)
    in_seg[p1[lo:hi]] = True
    mapping = np.arange(p1.size)
    mapping[p1[lo:hi]] = p2[lo:hi]
    for i in np.r_[0:lo, hi:p1.size]:
        v = p2[i]
        while in_seg[v]:
            v = mapping[v]
        child[i] = v
    return child


def optimize_embedding(mi: MIMatrix, W: int, H: int, pop: int = 300, p_mut: float = 0.2,
                       p_cx: float = 0.3, generations: int = 2000, seed: int = 0,
                       tournament: int = 3) -> tuple[PermutationIndividual, np.ndarray]:
    """Elitist GA over slot permutations; returns the best layout and the best-so-far trace."""
    n = W * H
    if mi.n_stations > n:
        raise ValueError(f"{mi.n_stations} stations do not fit on a {W}x{H} grid")
    if pop < 2:
        raise ValueError("population needs at least 2 individuals")
    rng = np.random.default_rng(seed)
    ext = _extended(mi, n)
    population = np.array([rng.permutation(n) for _ in range(pop)])
    fit = population_fitness(population, ext, W, H)
    best = population[int(np.argmax(fit))].copy()
    best_fit = _exact_fitness(best, ext, W, H)
    trace = np.empty(generations + 1)
    trace[0] = best_fit
    rows = np.arange(pop - 1)
    for g in range(1, generations + 1):
        contenders = rng.integers(0, pop, size=(pop - 1, tournament))
        parents = population[contenders[rows, np.argmax(fit[contenders], axis=1)]].copy()
        for k in range(0, pop - 2, 2):
            if rng.random() < p_cx:
                lo, hi = np.sort(rng.choice(n + 1, size=2, replace=False))
                a, b = parents[k].copy(), parents[k + 1].copy()
                parents[k], parents[k + 1] = pmx(a, b, lo, hi), pmx(b, a, lo, hi)
        mutate = np.flatnonzero(rng.random(pop - 1) < p_mut)
        for k in mutate:
            i, j = rng.choice(n, size=2, replace=False)
            parents[k, [i, j]] = parents[k, [j, i]]
        population = np.vstack([best[None], parents])
        fit = population_fitness(population, ext, W, H)
        gi = int(np.argmax(fit))
        if gi != 0:
            candidate = _exact_fitness(population[gi], ext, W, H)
            if candidate > best_fit:
                best, best_fit = population[gi].copy(), candidate
        trace[g] = best_fit
    return PermutationIndividual(best, mi.n_stations, best_fit), trace


# --- synthetic stations and files ---------------------------------------------

def planted_stations(W: int = 8, H: int = 8, n_dummies: int = 7, T: int = 2000, block: int = 2,
                     noise: float = 0.5, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Stations laid out on a grid whose series share a latent per ``block x block`` tile.

    Returns the shuffled series ``[S, T]`` and the true (row-major) cell of each
    station. Nearby tiles are coupled through a smooth field so the planted
    layout is the natural optimum.
    """
    rng = np.random.default_rng(seed)
    n = W * H
    cells = np.sort(rng.choice(n, size=n - n_dummies, replace=False))
    bw, bh = -(-W // block), -(-H // block)
    tiles = rng.normal(size=(bw, bh, T))
    ii, jj = np.divmod(cells, H)
    latent = tiles[ii // block, jj // block]
    drift = np.cumsum(rng.normal(size=T)) * 0.05
    smooth = np.sin(ii[:, None] * 0.7 + drift) + np.cos(jj[:, None] * 0.7 - drift)
    series = latent + 0.5 * smooth + noise * rng.normal(size=latent.shape)
    order = rng.permutation(len(cells))
    return series[order], cells[order]


def read_station_csv(path) -> tuple[list, np.ndarray]:
    """Header of station names, one row per timestep -> (names, series[S, T])."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise ValueError(f"{path}: empty station file")
        rows = [[float(v) for v in r] for r in reader if r]
    data = np.array(rows, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != len(header):
        raise ValueError(f"{path}: rows do not match the {len(header)} header columns")
    return header, data.T


def write_station_csv(path, series: np.ndarray, names=None) -> None:
    names = names or [f"s{i}" for i in range(series.shape[0])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in np.asarray(series).T:
            w.writerow([repr(float(v)) for v in row])
