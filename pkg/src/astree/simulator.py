"""Exact event-driven simulation of the profile process.

State is the depth profile ``X_n``.  Depth ``n`` fires at total rate
``r c^-n X_n``; a firing moves one vertex from depth ``n`` to two at depth
``n+1``.  The senescence variant makes depth ``h+1`` inert (rate 0).

Every event consumes exactly two uniforms, in this order:

1. ``u1`` gives the waiting time ``-log(u1) / R``;
2. ``u2`` picks the depth by a cumulative scan over occupied depths,
   shallowest first.  In tree mode the leftover fraction of ``u2`` within the
   chosen depth's slot picks the vertex, so the profile path of a tree run is
   the same as that of a profile run with the same seed.

Uniforms come in blocks from a Philox stream keyed by ``(seed, stream)`` and
are mapped onto the open interval ``(0, 1)``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numba
import numpy as np

from .core import (
    Parameters,
    PathWord,
    Profile,
    SeedRecord,
    Trajectory,
    ValidationError,
    dyadic_mass,
    validate,
)

__all__ = [
    "StopRule",
    "SenescenceState",
    "rng_for",
    "simulate_profile",
    "simulate_tree",
    "simulate_senescence",
    "coupled_tail_count",
    "sample_profiles",
    "sample_senescence",
]

# kernel status codes
_MORE_UNIFORMS = 0
_SNAPSHOT = 1
_TIME_UP = 2
_TARGET = 3
_MAX_EVENTS = 4
_ABSORBED = 5
_GROW_DEPTH = 6
_GROW_LOG = 7

_BLOCK = 1 << 15
_TWO53 = float(2 ** 53)


@dataclass(frozen=True)
class StopRule:
    """Exactly one of the four criteria must be set."""

    target_external: int | None = None
    max_time: float | None = None
    max_events: int | None = None
    absorption: bool = False

    def __post_init__(self):
        active = [self.target_external is not None, self.max_time is not None,
                  self.max_events is not None, bool(self.absorption)]
        if sum(active) != 1:
            raise ValidationError("exactly one stop criterion must be active")
        if self.target_external is not None and self.target_external < 1:
            raise ValidationError("target_external must be positive")
        if self.max_time is not None and not (self.max_time >= 0 and math.isfinite(self.max_time)):
            raise ValidationError("max_time must be finite and nonnegative")
        if self.max_events is not None and self.max_events < 0:
            raise ValidationError("max_events must be nonnegative")


@dataclass(frozen=True)
class SenescenceState:
    """Senescence-model state at one observation time."""

    time: float
    profile: Profile
    zp: int
    zs: int

    @property
    def L(self) -> float:
        return self.zp / (self.zp + self.zs)

    @property
    def absorbed(self) -> bool:
        return self.zp == 0


def rng_for(seed: SeedRecord | int, stream: int | None = None) -> np.random.Generator:
    """Counter-based generator for replicate ``stream`` of ``seed``."""
    if isinstance(seed, SeedRecord):
        seed, stream = seed.seed, seed.stream if stream is None else stream
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream or 0),))
    return np.random.Generator(np.random.Philox(ss))


def _uniform_block(rng: np.random.Generator, size: int) -> np.ndarray:
    # random() returns k / 2^53; shift by half an ulp so log(u) is always finite
    u = rng.random(size)
    return (np.floor(u * _TWO53) + 0.5) / _TWO53


@numba.njit(cache=True, nogil=True)
def _advance(counts, rates, tstate, istate, u, snap_time, max_time, target, max_events,
             ev_time, ev_depth, ev_frac, record):
    """Run events until something needs the caller.

    ``tstate = [time, kahan_compensation]``;
    ``istate = [u_pos, n_events, n_external, lo, hi, n_logged]`` where
    ``lo..hi`` brackets the occupied depths.  Nothing is consumed when the
    kernel returns before applying an event, so resuming redraws nothing.
    """
    while True:
        if istate[1] >= max_events:
            return _MAX_EVENTS
        if istate[2] >= target:
            return _TARGET
        lo = istate[3]
        hi = istate[4]
        total = 0.0
        for n in range(lo, hi + 1):
            total += counts[n] * rates[n]
        if total <= 0.0:
            return _ABSORBED
        pos = istate[0]
        if pos + 2 > u.shape[0]:
            return _MORE_UNIFORMS
        dt = -math.log(u[pos]) / total
        # compensated accumulation: waiting times span many magnitudes
        y = dt - tstate[1]
        new_t = tstate[0] + y
        if new_t > snap_time:
            return _SNAPSHOT
        if new_t > max_time:
            return _TIME_UP
        goal = u[pos + 1] * total
        acc = 0.0
        depth = -1
        frac = 0.0
        for n in range(lo, hi + 1):
            w = counts[n] * rates[n]
            if w > 0.0:
                if goal < acc + w:
                    depth = n
                    frac = (goal - acc) / w
                    break
                acc += w
                depth = n
                frac = 1.0 - 1e-16
        if depth + 1 >= counts.shape[0]:
            return _GROW_DEPTH
        if record and istate[5] >= ev_time.shape[0]:
            return _GROW_LOG
        tstate[1] = (new_t - tstate[0]) - y
        tstate[0] = new_t
        istate[0] = pos + 2
        counts[depth] -= 1
        counts[depth + 1] += 2
        istate[1] += 1
        istate[2] += 1
        if depth + 1 > hi:
            istate[4] = depth + 1
        while counts[istate[3]] == 0:
            istate[3] += 1
        if record:
            k = istate[5]
            ev_time[k] = new_t
            ev_depth[k] = depth
            ev_frac[k] = min(max(frac, 0.0), 1.0 - 1e-16)
            istate[5] = k + 1


class _Engine:
    """Drives ``_advance`` for one replicate."""

    def __init__(self, params: Parameters, rng: np.random.Generator, inert: int | None,
                 record: bool):
        self.c, self.r = params.c, params.r
        self.inert = inert
        cap = inert + 2 if inert is not None else 64
        self.counts = np.zeros(cap, dtype=np.int64)
        self.counts[0] = 1
        self.rates = self._rates(cap)
        self.tstate = np.zeros(2)
        self.istate = np.array([0, 0, 1, 0, 0, 0], dtype=np.int64)
        self.rng = rng
        self.u = np.empty(0)
        self.block = 16
        self.record = record
        size = 1024 if record else 1
        self.ev_time = np.empty(size)
        self.ev_depth = np.empty(size, dtype=np.int64)
        self.ev_frac = np.empty(size)

    def _rates(self, cap):
        n = np.arange(cap, dtype=float)
        with np.errstate(under="ignore", over="ignore"):
            rates = self.r * np.exp(-n * math.log(self.c))
        if self.inert is not None:
            rates[self.inert:] = 0.0
        return rates

    @property
    def time(self) -> float:
        return float(self.tstate[0])

    @property
    def n_events(self) -> int:
        return int(self.istate[1])

    def profile(self) -> Profile:
        return Profile(tuple(self.counts[: self.istate[4] + 1].tolist()))

    def run(self, snap_time=math.inf, max_time=math.inf, target=2 ** 62, max_events=2 ** 62):
        while True:
            status = _advance(self.counts, self.rates, self.tstate, self.istate, self.u,
                              snap_time, max_time, target, max_events,
                              self.ev_time, self.ev_depth, self.ev_frac, self.record)
            if status == _MORE_UNIFORMS:
                rest = self.u[self.istate[0]:]
                # short runs are common in Monte Carlo, so blocks start small
                self.block = min(2 * self.block, _BLOCK)
                self.u = np.concatenate([rest, _uniform_block(self.rng, 2 * self.block)])
                self.istate[0] = 0
            elif status == _GROW_DEPTH:
                cap = 2 * self.counts.size
                self.counts = np.concatenate([self.counts, np.zeros(cap - self.counts.size, np.int64)])
                self.rates = self._rates(cap)
            elif status == _GROW_LOG:
                m = 2 * self.ev_time.size
                self.ev_time = np.resize(self.ev_time, m)
                self.ev_depth = np.resize(self.ev_depth, m)
                self.ev_frac = np.resize(self.ev_frac, m)
            else:
                return status

    def log(self):
        k = int(self.istate[5])
        return self.ev_time[:k].copy(), self.ev_depth[:k].copy(), self.ev_frac[:k].copy()


def _limits(stop: StopRule):
    return dict(
        max_time=stop.max_time if stop.max_time is not None else math.inf,
        target=stop.target_external if stop.target_external is not None else 2 ** 62,
        max_events=stop.max_events if stop.max_events is not None else 2 ** 62,
    )


def _run_with_snapshots(engine: _Engine, stop: StopRule, snapshots: Sequence[float]):
    times = sorted(float(s) for s in snapshots)
    if any(s < 0 or not math.isfinite(s) for s in times):
        raise ValidationError("snapshot times must be finite and nonnegative")
    limits = _limits(stop)
    out = []
    j = 0
    while True:
        snap = times[j] if j < len(times) else math.inf
        status = engine.run(snap_time=snap, **limits)
        if status == _SNAPSHOT:
            out.append((snap, engine.profile()))
            j += 1
            continue
        break
    if status == _TIME_UP:
        final_time = limits["max_time"]
    else:
        final_time = engine.time
    # snapshots past the stopping point see the frozen final state
    while j < len(times) and (status in (_ABSORBED,) or times[j] <= final_time):
        out.append((times[j], engine.profile()))
        j += 1
    return status, final_time, out


_STATUS_TEXT = {_TIME_UP: "ok", _TARGET: "ok", _MAX_EVENTS: "ok", _ABSORBED: "absorbed"}


def _trajectory(params, stop, seed, snapshots, inert, record=True):
    params = validate(params, "simulate")
    seed = seed if isinstance(seed, SeedRecord) else SeedRecord(int(seed))
    engine = _Engine(params, rng_for(seed), inert, record)
    status, final_time, snaps = _run_with_snapshots(engine, stop, snapshots)
    times, depths, fracs = engine.log()
    text = _STATUS_TEXT.get(status, "ok")
    if stop.max_events == 0:
        text = "empty: stop rule reached before the first event"
    elif status == _ABSORBED and inert is None:
        text = "ok"
    traj = Trajectory(times, depths, tuple(snaps), final_time, engine.profile(), seed, params, text)
    return traj, fracs


def simulate_profile(params: Parameters, stop: StopRule, seed: SeedRecord | int,
                     snapshots: Sequence[float] = ()) -> Trajectory:
    """Simulate the depth profile until ``stop``; record states at ``snapshots``.

    Deterministic given ``seed``.  A rule that cannot fire any event (such as
    ``max_events=0``) yields an empty log and a diagnostic ``status``.
    """
    if stop.absorption:
        raise ValidationError("absorption stop needs a truncation depth h")
    inert = None if params.h is None else params.h + 1
    traj, _ = _trajectory(params, stop, seed, snapshots, inert)
    return traj


def simulate_tree(params: Parameters, stop: StopRule, seed: SeedRecord | int,
                  snapshots: Sequence[float] = ()) -> tuple[frozenset[PathWord], Trajectory]:
    """Like :func:`simulate_profile` but keeps vertex identities.

    Within the firing depth the splitting vertex is uniform among that depth's
    external vertices (swap-remove from a per-depth array).
    """
    if stop.absorption and params.h is None:
        raise ValidationError("absorption stop needs a truncation depth h")
    inert = None if params.h is None else params.h + 1
    traj, fracs = _trajectory(params, stop, seed, snapshots, inert)
    layers: list[list[str]] = [[""]]
    for d, f in zip(traj.events_depth.tolist(), fracs.tolist()):
        row = layers[d]
        k = min(int(f * len(row)), len(row) - 1)
        word = row[k]
        row[k] = row[-1]
        row.pop()
        if d + 1 == len(layers):
            layers.append([])
        layers[d + 1].extend((word + "0", word + "1"))
    tree = frozenset(PathWord(w) for row in layers for w in row)
    return tree, traj


def _senescence_states(snaps, h):
    out = []
    for when, prof in snaps:
        zs = prof[h + 1]
        out.append(SenescenceState(when, prof, prof.total - zs, zs))
    return out


def simulate_senescence(params: Parameters, grid: Sequence[float], seed: SeedRecord | int,
                        record: bool = False):
    """Depth-capped model observed on ``grid``.

    Depth ``h+1`` is inert.  Returns one :class:`SenescenceState` per grid
    time (sorted); after absorption every state has ``zs = 2^(h+1)``.  With
    ``record=True`` the trajectory is returned as well.
    """
    params = validate(params, "simulate")
    if params.h is None:
        raise ValidationError("senescence simulation needs h")
    grid = sorted(float(t) for t in grid)
    if not grid:
        raise ValidationError("empty observation grid")
    stop = StopRule(max_time=grid[-1])
    traj, _ = _trajectory(params, stop, seed, grid, params.h + 1, record)
    states = _senescence_states(traj.snapshots, params.h)
    return (states, traj) if record else states


def coupled_tail_count(traj: Trajectory, h: int) -> list[tuple[float, Fraction]]:
    """``sum_{n>h} 2^(h+1-n) X_n`` at each snapshot, exactly.

    Equals the number of depth-``(h+1)`` vertices that are external or have
    an external descendant, so every value is an integer.
    """
    if h < 0 or int(h) != h:
        raise ValidationError("h must be a nonnegative integer")
    h = int(h)
    out = []
    for when, prof in traj.snapshots:
        tail = {n - (h + 1): x for n, x in prof.as_dict().items() if n > h}
        out.append((when, dyadic_mass(tail) if tail else Fraction(0)))
    return out


def _replicate_worker(params, times, seed, inert, width):
    def one(j):
        engine = _Engine(params, rng_for(seed, j), inert, False)
        _, _, snaps = _run_with_snapshots(engine, StopRule(max_time=max(times)), times)
        row = np.zeros((len(times), width), dtype=np.int64)
        for i, (_, prof) in enumerate(snaps):
            k = min(len(prof.counts), width)
            row[i, :k] = prof.counts[:k]
        return row
    return one


def sample_profiles(params: Parameters, times: Sequence[float], replicates: int, seed: int,
                    width: int, threads: int | None = None) -> np.ndarray:
    """Profiles of ``replicates`` independent runs at sorted ``times``.

    Returns an array of shape ``(replicates, len(times), width)``; depths at or
    beyond ``width`` are dropped.  Replicate ``j`` uses stream ``j`` of
    ``seed``, so the result does not depend on ``threads``.
    """
    params = validate(params, "simulate")
    times = sorted(float(t) for t in times)
    inert = None if params.h is None else params.h + 1
    one = _replicate_worker(params, times, seed, inert, width)
    return _map(one, replicates, threads)


def sample_senescence(params: Parameters, grid: Sequence[float], replicates: int, seed: int,
                      threads: int | None = None) -> np.ndarray:
    """``(zp, zs)`` of independent senescence runs on ``grid``.

    Shape ``(replicates, len(grid), 2)``.
    """
    params = validate(params, "simulate")
    if params.h is None:
        raise ValidationError("senescence sampling needs h")
    grid = sorted(float(t) for t in grid)
    h = params.h
    width = h + 2
    one = _replicate_worker(params, grid, seed, h + 1, width)

    def pair(j):
        row = one(j)
        zs = row[:, h + 1]
        return np.stack([row.sum(axis=1) - zs, zs], axis=1)

    return _map(pair, replicates, threads)


def _map(fn, replicates: int, threads: int | None):
    if replicates < 1:
        raise ValidationError("replicates must be positive")
    if threads is None or threads <= 1:
        rows = [fn(j) for j in range(replicates)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(fn, range(replicates)))
    return np.stack(rows)
