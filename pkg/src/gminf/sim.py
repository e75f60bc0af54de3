"""Discrete-event simulation of the infinite-server queue with batch departures.

Two engines realise the same law:

* ``aggregated`` keeps only the queue size. With ``i`` customers present the
  next service completion is ``Exp(i * mu)`` away and the completer's position
  is uniform on ``1..i``. Compiled with numba.
* ``per_customer`` gives every customer its own service clock, drawn once at
  arrival, and tracks positions explicitly. Slow; kept as an oracle for the
  aggregated engine.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numba
import numpy as np

from .core import (
    FIFO,
    GENERAL,
    LIFO,
    ArrivalModel,
    CutLaw,
    Discipline,
    ModelParams,
    RngStream,
    sample_interarrival,
)

AGGREGATED = "aggregated"
PER_CUSTOMER = "per_customer"

ARRIVAL = 0
DEPARTURE = 1

_CHUNK = 1 << 16


class ReplicationError(RuntimeError):
    def __init__(self, index: int, cause: BaseException):
        super().__init__(f"replication {index} failed: {cause!r}")
        self.index = index


@dataclass(frozen=True)
class Stop:
    """Stopping rule; the run ends at whichever limit is hit first."""

    horizon: float = math.inf
    events: int | None = None
    busy_periods: int | None = None
    departure_periods: int | None = None

    def __post_init__(self):
        limits = (self.events, self.busy_periods, self.departure_periods)
        if math.isinf(self.horizon) and all(v is None for v in limits):
            raise ValueError("stop rule needs at least one finite limit")
        if not self.horizon > 0 or any(v is not None and v <= 0 for v in limits):
            raise ValueError("stop limits must be positive")


@dataclass
class QueuePath:
    """Right-continuous queue-size trajectory plus its event log.

    ``t[j]`` is the time of event ``j`` and ``q[j]`` the queue size right after
    it; before ``t[0]`` the queue holds ``q0``. The path is observed on
    ``[0, horizon]``. ``kind``/``batch``/``position`` form the event log and
    are ``None`` when the run was made with ``keep_events=False``.
    """

    t: np.ndarray
    q: np.ndarray
    q0: int
    horizon: float
    kind: np.ndarray | None = None
    batch: np.ndarray | None = None
    position: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def steps(self) -> tuple[np.ndarray, np.ndarray]:
        return np.concatenate(([0.0], self.t)), np.concatenate(([self.q0], self.q))

    @property
    def has_events(self) -> bool:
        return self.kind is not None

    def value(self, s):
        """Q(s) for s in [0, horizon] (right-continuous)."""
        s = np.asarray(s, dtype=float)
        idx = np.searchsorted(self.t, s, side="right")
        _, qs = self.steps
        return qs[idx]

    def arrival_times(self) -> np.ndarray:
        self._need_events()
        return self.t[self.kind == ARRIVAL]

    def _need_events(self):
        if self.kind is None:
            raise ValueError("path was simulated without an event log (keep_events=False)")

    def to_csv(self, handle, header_comment: str | None = None) -> None:
        """Write ``t,kind,q_after,batch_size`` rows with 17 significant digits."""
        self._need_events()
        if header_comment is not None:
            handle.write(f"# {header_comment}\n")
        handle.write("t,kind,q_after,batch_size\n")
        names = np.where(self.kind == ARRIVAL, "arrival", "departure")
        rows = (
            f"{t:.17g},{k},{q},{b}\n"
            for t, k, q, b in zip(self.t.tolist(), names.tolist(), self.q.tolist(), self.batch.tolist())
        )
        handle.writelines(rows)

    def csv_text(self, header_comment: str | None = None) -> str:
        buf = io.StringIO()
        self.to_csv(buf, header_comment)
        return buf.getvalue()


@dataclass(frozen=True)
class DepartureRecord:
    """One inter-arrival period that contains at least one departure.

    ``period`` is the index n of the period (S_{n-1}, S_n); ``pre`` is the queue
    size at its start and ``post`` the size just before the closing arrival;
    ``last_departure`` is the last departure instant inside it and ``single``
    tells whether it held exactly one departure instant.
    """

    l: int
    period: int
    pre: int
    post: int
    last_departure: float
    single: bool


def read_path_csv(handle, q0: int = 0) -> QueuePath:
    rows = [r for r in csv.reader(line for line in handle if not line.startswith("#"))]
    body = rows[1:]
    t = np.array([float(r[0]) for r in body])
    kind = np.array([ARRIVAL if r[1] == "arrival" else DEPARTURE for r in body], dtype=np.int8)
    q = np.array([int(r[2]) for r in body], dtype=np.int64)
    batch = np.array([int(r[3]) for r in body], dtype=np.int64)
    horizon = float(t[-1]) if len(t) else 0.0
    return QueuePath(t, q, q0, horizon, kind, batch, np.zeros_like(batch))


@numba.njit(cache=True, nogil=True)
def _draw_interarrival(gen, code, p1, p2):
    if code == 0:
        return gen.standard_exponential() / p1
    if code == 1:
        return p1
    if code == 2:
        return p1 + (p2 - p1) * gen.random()
    return gen.standard_gamma(p1) / p2


@numba.njit(cache=True, nogil=True)
def _draw_cut(gen, code, a, b):
    if code == 0:
        return gen.random()
    if code == 1:
        return gen.beta(a, b)
    return a


@numba.njit(cache=True, nogil=True)
def _aggregated_kernel(gen, a_code, a1, a2, mu, d_code, c_code, c1, c2,
                       state_f, state_i, horizon, max_events, max_busy, max_dep,
                       out_t, out_q, out_kind, out_batch, out_pos):
    # state_f: [t, t_next_arrival]
    # state_i: [q, events, busy_done, dep_periods_done, period_has_dep, busy_observed]
    t = state_f[0]
    t_next = state_f[1]
    q = state_i[0]
    n_ev = state_i[1]
    busy_done = state_i[2]
    dep_done = state_i[3]
    period_dep = state_i[4]
    observed = state_i[5]
    cap = out_t.shape[0]
    n = 0
    stopped = False
    while n < cap:
        if n_ev >= max_events or busy_done >= max_busy or dep_done >= max_dep:
            stopped = True
            break
        if q > 0:
            d = t + gen.standard_exponential() / (q * mu)
        else:
            d = np.inf
        if d <= t_next:
            if d > horizon:
                t = horizon
                stopped = True
                break
            t = d
            if d_code == 0:
                j = gen.integers(1, q + 1)
                batch = j
                pos = j
            elif d_code == 1:
                j = gen.integers(1, q + 1)
                batch = q - j + 1
                pos = j
            else:
                survivors = int(math.floor(_draw_cut(gen, c_code, c1, c2) * q))
                if survivors > q - 1:
                    survivors = q - 1
                batch = q - survivors
                pos = batch
            q -= batch
            period_dep = 1
            if q == 0 and observed == 1:
                busy_done += 1
                observed = 0
            out_kind[n] = 1
            out_batch[n] = batch
            out_pos[n] = pos
        else:
            if t_next > horizon:
                t = horizon
                stopped = True
                break
            t = t_next
            if q == 0:
                observed = 1
            q += 1
            t_next = t + _draw_interarrival(gen, a_code, a1, a2)
            if period_dep == 1:
                dep_done += 1
                period_dep = 0
            out_kind[n] = 0
            out_batch[n] = 0
            out_pos[n] = 0
        out_t[n] = t
        out_q[n] = q
        n += 1
        n_ev += 1
    state_f[0] = t
    state_f[1] = t_next
    state_i[0] = q
    state_i[1] = n_ev
    state_i[2] = busy_done
    state_i[3] = dep_done
    state_i[4] = period_dep
    state_i[5] = observed
    if n_ev >= max_events or busy_done >= max_busy or dep_done >= max_dep:
        stopped = True
    return n, stopped


def _limit(v):
    return np.iinfo(np.int64).max if v is None else int(v)


def _check_binding(params: ModelParams, arrival: ArrivalModel):
    if not math.isclose(arrival.mean * params.lam, 1.0, rel_tol=1e-12):
        raise ValueError(
            f"arrival law has mean {arrival.mean!r} but lambda={params.lam!r}; "
            "use ArrivalModel.scaled_to(lambda)"
        )


def simulate(params: ModelParams, arrival: ArrivalModel, discipline: Discipline,
             stop: Stop, rng: RngStream, q0: int = 0, engine: str = AGGREGATED,
             keep_events: bool = True) -> QueuePath:
    """Simulate one path from ``Q(0) = q0``; the first arrival comes after one
    full inter-arrival time."""
    if q0 < 0:
        raise ValueError("q0 must be non-negative")
    _check_binding(params, arrival)
    if engine == PER_CUSTOMER:
        path = _simulate_per_customer(params, arrival, discipline, stop, rng, q0)
    elif engine == AGGREGATED:
        path = _simulate_aggregated(params, arrival, discipline, stop, rng, q0)
    else:
        raise ValueError(f"unknown engine {engine!r}")
    path.meta.update(
        lam=params.lam, mu=params.mu, rho=params.rho, engine=engine,
        discipline=discipline.kind, arrival=arrival.describe(),
        seed=rng.seed, stream_id=rng.stream_id,
    )
    if not keep_events:
        path.kind = path.batch = path.position = None
    return path


def _simulate_aggregated(params, arrival, discipline, stop, rng, q0):
    gen = rng.generator
    cut = discipline.cut or CutLaw.uniform()
    state_f = np.array([0.0, 0.0])
    state_f[1] = float(sample_interarrival(arrival, rng))
    state_i = np.array([q0, 0, 0, 0, 0, 0], dtype=np.int64)
    chunks = []
    cap = _CHUNK
    while True:
        bufs = (np.empty(cap), np.empty(cap, np.int64), np.empty(cap, np.int8),
                np.empty(cap, np.int64), np.empty(cap, np.int64))
        n, stopped = _aggregated_kernel(
            gen, arrival.code, arrival.p1, arrival.p2, params.mu,
            discipline.code, cut.code, cut.a, cut.b,
            state_f, state_i, stop.horizon, _limit(stop.events),
            _limit(stop.busy_periods), _limit(stop.departure_periods), *bufs)
        chunks.append(tuple(b[:n] for b in bufs))
        if stopped:
            break
        cap = min(cap * 2, 1 << 22)
    t, q, kind, batch, pos = (np.concatenate(parts) for parts in zip(*chunks))
    # the kernel leaves the clock at the horizon or at the stopping event
    return QueuePath(t, q, q0, float(state_f[0]), kind, batch, pos)


def _simulate_per_customer(params, arrival, discipline, stop, rng, q0):
    if discipline.kind not in (FIFO, LIFO):
        raise ValueError("per-customer engine supports FIFO and LIFO batches only")
    gen = rng.generator
    mu = params.mu
    t = 0.0
    t_next = float(sample_interarrival(arrival, rng))
    clocks = [float(x) for x in gen.standard_exponential(q0) / mu] if q0 else []
    max_events = _limit(stop.events)
    max_busy = _limit(stop.busy_periods)
    max_dep = _limit(stop.departure_periods)
    ts, qs, kinds, batches, positions = [], [], [], [], []
    busy_done = dep_done = 0
    period_dep = observed = False
    while len(ts) < max_events and busy_done < max_busy and dep_done < max_dep:
        if clocks:
            j = min(range(len(clocks)), key=clocks.__getitem__)
            d = clocks[j]
        else:
            d = math.inf
        if d <= t_next:
            if d > stop.horizon:
                t = stop.horizon
                break
            t = d
            size = len(clocks)
            if discipline.kind == FIFO:
                del clocks[: j + 1]
                batch = j + 1
            else:
                del clocks[j:]
                batch = size - j
            period_dep = True
            if not clocks and observed:
                busy_done += 1
                observed = False
            kinds.append(DEPARTURE)
            batches.append(batch)
            positions.append(j + 1)
        else:
            if t_next > stop.horizon:
                t = stop.horizon
                break
            t = t_next
            observed = observed or not clocks
            clocks.append(t + gen.standard_exponential() / mu)
            t_next = t + float(sample_interarrival(arrival, rng))
            if period_dep:
                dep_done += 1
                period_dep = False
            kinds.append(ARRIVAL)
            batches.append(0)
            positions.append(0)
        ts.append(t)
        qs.append(len(clocks))
    return QueuePath(np.array(ts), np.array(qs, dtype=np.int64), q0, t,
                     np.array(kinds, dtype=np.int8), np.array(batches, dtype=np.int64),
                     np.array(positions, dtype=np.int64))


def busy_periods(path: QueuePath) -> np.ndarray:
    """Durations of the complete busy periods observed on the path.

    A busy period in progress at time 0 (``q0 > 0``) or at the horizon is
    discarded.
    """
    _, qs = path.steps
    prev, cur = qs[:-1], qs[1:]
    starts = np.flatnonzero((prev == 0) & (cur == 1))
    ends = np.flatnonzero(cur == 0)
    if len(starts) == 0 or len(ends) == 0:
        return np.empty(0)
    pair = np.searchsorted(ends, starts)
    ok = pair < len(ends)
    return path.t[ends[pair[ok]]] - path.t[starts[ok]]


def _occupation_time(path, lo, hi, k_max):
    times, qs = path.steps
    edges = np.append(times, path.horizon)
    left = np.clip(edges[:-1], lo, hi)
    right = np.clip(edges[1:], lo, hi)
    dur = right - left
    keep = qs <= k_max
    return np.bincount(qs[keep], weights=dur[keep], minlength=k_max + 1)[: k_max + 1]


def time_average_pmf(path: QueuePath, burn_in: float, k_max: int) -> np.ndarray:
    """Fraction of (burn_in, horizon] spent in each state 0..k_max."""
    if not path.horizon > burn_in:
        raise ValueError("horizon must exceed burn-in")
    occ = _occupation_time(path, burn_in, path.horizon, k_max)
    return occ / (path.horizon - burn_in)


def batch_pmfs(path: QueuePath, burn_in: float, k_max: int, n_batches: int) -> np.ndarray:
    """Time-average pmf on each of ``n_batches`` equal slices of the window.

    Row means estimate the pmf; the spread of the rows gives batch-means
    standard errors.
    """
    if not path.horizon > burn_in:
        raise ValueError("horizon must exceed burn-in")
    cuts = np.linspace(burn_in, path.horizon, n_batches + 1)
    rows = [_occupation_time(path, a, b, k_max) / (b - a) for a, b in zip(cuts[:-1], cuts[1:])]
    return np.array(rows)


def departure_records(path: QueuePath) -> list[DepartureRecord]:
    """Embedded pre/post levels of the inter-arrival periods with departures.

    Only periods closed by an arrival before the horizon are reported.
    """
    path._need_events()
    kind = path.kind
    is_arr = kind == ARRIVAL
    arr_idx = np.flatnonzero(is_arr)
    dep_idx = np.flatnonzero(~is_arr)
    # period n is (S_{n-1}, S_n); a departure after n-1 arrivals lies in period n
    period_of_dep = np.cumsum(is_arr)[dep_idx] + 1
    complete = period_of_dep <= len(arr_idx)
    dep_idx, period_of_dep = dep_idx[complete], period_of_dep[complete]
    periods, first, counts = np.unique(period_of_dep, return_index=True, return_counts=True)
    last = dep_idx[first + counts - 1]
    out = []
    for l, (n, c, j) in enumerate(zip(periods.tolist(), counts.tolist(), last.tolist()), start=1):
        pre = path.q0 if n == 1 else int(path.q[arr_idx[n - 2]])
        post = int(path.q[arr_idx[n - 1]]) - 1
        out.append(DepartureRecord(l, n, pre, post, float(path.t[j]), c == 1))
    return out


def replicate(n: int, base_seed: int, job: Callable[[RngStream, int], object],
              workers: int = 1) -> list:
    """Run ``job(rng, i)`` for i in 0..n-1, replication i on stream id ``i``.

    Results come back ordered by index whatever the execution order.
    """
    if n < 1:
        raise ValueError("need at least one replication")

    def run(i):
        try:
            return job(RngStream(base_seed, i), i)
        except Exception as exc:
            raise ReplicationError(i, exc) from exc

    if workers <= 1:
        return [run(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, range(n)))


def merge(results: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate([np.atleast_1d(np.asarray(r)) for r in results])
