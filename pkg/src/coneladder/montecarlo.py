"""Path-level oracles: killed walks, ladder epochs and h-transform paths.

Simulation is truncation-free (the cone is the only boundary) and fully
reproducible: replica ``i`` draws from its own counter-based Philox stream
derived from ``(master_seed, i)``, so results are bitwise independent of
batching and of how many replicas run "in parallel".  Estimators aggregate
in replica order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import ConeRegion, StepDistribution, _as_int_vector


def replica_stream(master_seed: int, index: int) -> np.random.Generator:
    """Independent Philox stream for one replica."""
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(index,))
    return np.random.Generator(np.random.Philox(ss))


def _step_table(mu: StepDistribution):
    vectors = mu.vectors
    probs = mu.probs
    cdf = np.cumsum(probs)
    # a final bucket catches the mass defect of a strictly substochastic law
    return vectors, np.append(cdf, 1.0)


@dataclass(eq=False)
class PathSample:
    """One killed-walk trajectory (positions after each step, start excluded)."""

    start: tuple[int, ...]
    positions: np.ndarray      # (k, d) states visited while alive
    killed: bool
    kill_time: int | None      # first step index outside the cone (1-based)
    censored: bool


def sample_path(mu: StepDistribution, cone: ConeRegion, x, rng_seed: int, max_steps: int) -> PathSample:
    """Simulate the walk from x, killed at its first exit from the cone."""
    xvec = np.asarray(_as_int_vector(x, mu.dimension), dtype=np.int64)
    if not cone.contains(xvec):
        from .errors import OutOfWindow

        raise OutOfWindow("start must belong to the cone")
    gen = replica_stream(rng_seed, 0)
    vectors, cdf = _step_table(mu)
    pos = xvec.copy()
    visited = []
    for t in range(1, max_steps + 1):
        u = gen.random()
        k = int(np.searchsorted(cdf, u, side="right"))
        if k >= len(vectors):  # defect mass: straight to the absorbing state
            return PathSample(tuple(xvec), np.array(visited, dtype=np.int64).reshape(-1, mu.dimension), True, t, False)
        pos = pos + vectors[k]
        if not cone.contains(pos):
            return PathSample(tuple(xvec), np.array(visited, dtype=np.int64).reshape(-1, mu.dimension), True, t, False)
        visited.append(pos.copy())
    return PathSample(tuple(xvec), np.array(visited, dtype=np.int64).reshape(-1, mu.dimension), False, None, True)


@dataclass(eq=False)
class LadderEpochs:
    """Successive exits from the cone translated to the current record state."""

    times: list[int]           # t_0 = 0, then the epoch times
    heights: list[tuple[int, ...] | None]   # matching states; None encodes theta
    absorbed: bool
    censored: bool


def sample_ladder_epochs(mu: StepDistribution, cone: ConeRegion, x, rng_seed: int, max_steps: int) -> LadderEpochs:
    """Epochs ``t_{k+1} = inf{n > t_k : X(n) not in E + X(t_k)}`` of one path."""
    xvec = np.asarray(_as_int_vector(x, mu.dimension), dtype=np.int64)
    gen = replica_stream(rng_seed, 0)
    vectors, cdf = _step_table(mu)
    pos = xvec.copy()
    anchor = xvec.copy()
    times: list[int] = [0]
    heights: list[tuple[int, ...] | None] = [tuple(int(c) for c in xvec)]
    for t in range(1, max_steps + 1):
        u = gen.random()
        k = int(np.searchsorted(cdf, u, side="right"))
        if k >= len(vectors):
            times.append(t)
            heights.append(None)
            return LadderEpochs(times, heights, True, False)
        pos = pos + vectors[k]
        if not cone.contains(pos):
            times.append(t)
            heights.append(None)
            return LadderEpochs(times, heights, True, False)
        if not cone.contains(pos - anchor):
            times.append(t)
            heights.append(tuple(int(c) for c in pos))
            anchor = pos.copy()
    return LadderEpochs(times, heights, False, True)


class _ReplicaBatch:
    """Vectorised lock-step simulation over per-replica streams.

    Uniform draws are buffered in growing blocks, each row read from the
    owning replica's private stream, so trajectories do not depend on the
    batch composition.
    """

    def __init__(self, master_seed: int, count: int, first_block: int = 64):
        self.children = np.random.SeedSequence(entropy=master_seed).spawn(count)
        self.gens: list[np.random.Generator | None] = [None] * count
        self.block = first_block

    def generator(self, index: int) -> np.random.Generator:
        g = self.gens[index]
        if g is None:
            g = np.random.Generator(np.random.Philox(self.children[index]))
            self.gens[index] = g
        return g

    def uniform_block(self, indices: np.ndarray, length: int) -> np.ndarray:
        out = np.empty((indices.size, length))
        for row, idx in enumerate(indices):
            out[row] = self.generator(int(idx)).random(length)
        return out


def empirical_survival(
    mu: StepDistribution,
    cone: ConeRegion,
    x,
    replicas: int,
    horizon: int,
    master_seed: int,
) -> np.ndarray:
    """Empirical ``P_x(tau > n)`` for n = 0..horizon over independent replicas."""
    xvec = np.asarray(_as_int_vector(x, mu.dimension), dtype=np.int64)
    vectors, cdf = _step_table(mu)
    alive_at = np.zeros(horizon + 1, dtype=np.int64)
    alive_at[0] = replicas
    batch = _ReplicaBatch(master_seed, replicas)
    idx = np.arange(replicas)
    pos = np.tile(xvec, (replicas, 1))
    t = 0
    while t < horizon and idx.size:
        length = min(batch.block, horizon - t)
        u = batch.uniform_block(idx, length)
        for j in range(length):
            k = np.searchsorted(cdf, u[:, j], side="right")
            dead = k >= len(vectors)
            pos = pos + np.where(dead[:, None], 0, vectors[np.minimum(k, len(vectors) - 1)])
            ok = ~dead & cone.contains(pos)
            t += 1
            alive_at[t] = int(ok.sum())
            if not ok.all():
                idx = idx[ok]
                pos = pos[ok]
                u = u[ok]
        batch.block = min(batch.block * 4, 4096)
    if idx.size and t < horizon:
        alive_at[t + 1 :] = idx.size
    return alive_at / replicas


@dataclass(eq=False)
class LadderLawEstimate:
    """Empirical law of the first ladder height."""

    counts: dict              # state tuple -> hits; None key counts theta
    censored: int
    replicas: int

    def frequencies(self) -> dict:
        return {k: v / self.replicas for k, v in self.counts.items()}

    def tv_against(self, exact: dict) -> float:
        """Total-variation distance to an exact law given as state -> prob.

        Replicas still running at the step cap are attributed to the
        absorbing state: a path that has not fired after that many steps
        belongs to the never-fire mass up to an error bounded by the
        probability of firing beyond the cap.
        """
        keys = set(self.counts) | set(exact) | {None}
        emp = {k: self.counts.get(k, 0) / self.replicas for k in keys}
        emp[None] = emp.get(None, 0.0) + self.censored / self.replicas
        return 0.5 * sum(abs(emp[k] - exact.get(k, 0.0)) for k in keys)


def empirical_ladder_law(
    mu: StepDistribution,
    cone: ConeRegion,
    x,
    replicas: int,
    max_steps: int,
    master_seed: int,
) -> LadderLawEstimate:
    """Sample the first ladder height over many replicas (vectorised)."""
    xvec = np.asarray(_as_int_vector(x, mu.dimension), dtype=np.int64)
    vectors, cdf = _step_table(mu)
    batch = _ReplicaBatch(master_seed, replicas)
    idx = np.arange(replicas)
    pos = np.tile(xvec, (replicas, 1))
    counts: dict = {}
    t = 0
    while t < max_steps and idx.size:
        length = min(batch.block, max_steps - t)
        u = batch.uniform_block(idx, length)
        for j in range(length):
            k = np.searchsorted(cdf, u[:, j], side="right")
            dead = k >= len(vectors)
            pos = pos + np.where(dead[:, None], 0, vectors[np.minimum(k, len(vectors) - 1)])
            dead = dead | ~cone.contains(pos)
            fired = dead | ~cone.contains(pos - xvec)
            t += 1
            if fired.any():
                for row in np.nonzero(fired)[0]:
                    key = None if dead[row] else tuple(int(c) for c in pos[row])
                    counts[key] = counts.get(key, 0) + 1
                keep = ~fired
                idx = idx[keep]
                pos = pos[keep]
                u = u[keep]
                dead = dead[keep]
        batch.block = min(batch.block * 4, 8192)
    return LadderLawEstimate(counts, int(idx.size), replicas)


@dataclass(frozen=True)
class NeverExitEstimate:
    estimate: float            # fraction of transform paths never leaving E+u
    stderr: float
    exited: int
    still_inside: int          # alive at the horizon, counted as never-exit
    replicas: int
    horizon: int


def empirical_never_exit(
    mu: StepDistribution,
    cone: ConeRegion,
    h_fn,
    x,
    u,
    replicas: int,
    horizon: int,
    master_seed: int,
) -> NeverExitEstimate:
    """h-transform paths from ``x+u``: fraction staying in ``E+u``.

    Horizon censoring counts a still-inside path as never exiting, an
    explicit upper bias reported through ``still_inside``.
    """
    d = mu.dimension
    xvec = np.asarray(_as_int_vector(x, d), dtype=np.int64)
    uvec = np.asarray(_as_int_vector(u, d), dtype=np.int64)
    start = xvec + uvec
    vectors = mu.vectors
    probs = mu.probs
    batch = _ReplicaBatch(master_seed, replicas)
    idx = np.arange(replicas)
    pos = np.tile(start, (replicas, 1))
    exited = 0
    t = 0
    while t < horizon and idx.size:
        length = min(batch.block, horizon - t)
        uni = batch.uniform_block(idx, length)
        for j in range(length):
            cand = pos[:, None, :] + vectors[None, :, :]
            flat = cand.reshape(-1, d)
            hvals = np.asarray(h_fn(flat), dtype=float).reshape(pos.shape[0], -1)
            hvals = np.where(cone.contains(cand), hvals, 0.0)
            weights = probs[None, :] * hvals
            totals = weights.sum(axis=1)
            cum = np.cumsum(weights, axis=1)
            pick = (cum < (uni[:, j] * totals)[:, None]).sum(axis=1)
            pick = np.minimum(pick, len(vectors) - 1)
            pos = pos + vectors[pick]
            inside = cone.contains(pos - uvec)
            t += 1
            if not inside.all():
                exited += int((~inside).sum())
                idx = idx[inside]
                pos = pos[inside]
                uni = uni[inside]
        batch.block = min(batch.block * 4, 2048)
    still = int(idx.size)
    est = 1.0 - exited / replicas
    stderr = float(np.sqrt(max(est * (1 - est), 1e-300) / replicas))
    return NeverExitEstimate(est, stderr, exited, still, replicas, horizon)
