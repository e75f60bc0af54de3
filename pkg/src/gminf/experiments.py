"""Scaling harness tying the pre-limit queue to its fluid limit.

Under the scaling ``mu = lam/rho`` with time and space divided by ``sqrt(rho)``
the queue path approaches the growth-collapse process of :mod:`gminf.fluid`.
Each study returns a :class:`ComparisonReport` whose rows carry the
statistic, its threshold, sample size and seed.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from . import __version__
from .analytic import (SQRT_HALF_PI, first_buildup_tail, mean_stationary, rayleigh_tail,
                       stationary_tails)
from .core import ArrivalModel, Discipline, ModelParams, RngStream
from .fluid import first_jumps, fluid_simulate, fluid_value
from .sim import QueuePath, Stop, departure_records, replicate, simulate

X_GRID = np.round(np.arange(1, 31) / 10, 10)
KS_NULL_SD = 0.2603  # standard deviation of the Kolmogorov distribution


class ResourceGuardError(RuntimeError):
    """A run would exceed the configured event budget."""


def ks_coefficient(alpha: float) -> float:
    """Asymptotic Kolmogorov critical coefficient c(alpha) = sqrt(-ln(alpha/2)/2)."""
    return math.sqrt(-0.5 * math.log(alpha / 2.0))


def ks_critical_one(n: int, alpha: float = 0.01) -> float:
    return ks_coefficient(alpha) / math.sqrt(n)


def ks_critical_two(n: int, m: int, alpha: float = 0.01) -> float:
    return ks_coefficient(alpha) * math.sqrt((n + m) / (n * m))


def ks_two_sd(n: int, m: int) -> float:
    """Null standard deviation of the two-sample KS statistic."""
    return KS_NULL_SD * math.sqrt((n + m) / (n * m))


@dataclass(frozen=True)
class Row:
    study: str
    statistic: str
    value: float
    threshold: float | None = None
    relation: str = "<"  # "<", ">", "<=" or "info"
    rho: float | None = None
    n: int | None = None
    seed: int | None = None
    detail: str = ""

    @property
    def passed(self) -> bool:
        if self.relation == "info" or self.threshold is None:
            return True
        if self.relation == "<":
            return self.value < self.threshold
        if self.relation == "<=":
            return self.value <= self.threshold
        if self.relation == ">":
            return self.value > self.threshold
        raise ValueError(f"unknown relation {self.relation!r}")


@dataclass
class ComparisonReport:
    title: str
    rows: list[Row] = field(default_factory=list)
    series: dict[str, tuple[list, list]] = field(default_factory=dict)

    def add(self, *args, **kwargs) -> Row:
        row = Row(*args, **kwargs)
        self.rows.append(row)
        return row

    def extend(self, other: ComparisonReport) -> None:
        self.rows.extend(other.rows)
        self.series.update(other.series)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    @property
    def failures(self) -> list[Row]:
        return [r for r in self.rows if not r.passed]

    def to_csv(self, handle, header_comment: str | None = None) -> None:
        if header_comment:
            handle.write(f"# {header_comment}\n")
        names = ["study", "statistic", "rho", "value", "relation", "threshold", "passed", "n",
                 "seed", "detail"]
        w = csv.DictWriter(handle, names, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            d = asdict(r)
            d["passed"] = r.passed
            d["value"] = f"{r.value:.17g}"
            w.writerow(d)

    def summary(self) -> dict:
        return {
            "title": self.title,
            "version": __version__,
            "passed": self.passed,
            "rows": [dict(asdict(r), passed=r.passed) for r in self.rows],
        }

    def to_json(self, handle) -> None:
        json.dump(self.summary(), handle, indent=2, default=float)
        handle.write("\n")

    def write_dat(self, directory, header_comment: str | None = None) -> list[str]:
        """One gnuplot-readable two-column file per recorded series."""
        import os

        paths = []
        for name, (xs, ys) in self.series.items():
            p = os.path.join(directory, f"{name}.dat")
            with open(p, "w") as fh:
                if header_comment:
                    fh.write(f"# {header_comment}\n")
                fh.write(f"# {name}\n")
                for x, y in zip(xs, ys):
                    fh.write(f"{x:.17g} {y:.17g}\n")
            paths.append(p)
        return paths

    def text(self) -> str:
        buf = io.StringIO()
        self.to_csv(buf)
        return buf.getvalue()


@dataclass(frozen=True)
class ScalingConfig:
    lam: float = 1.0
    rho_list: tuple[float, ...] = (1e4,)
    horizon_T: float = 10.0
    seed: int = 0
    replications: int = 1000
    alpha: float = 0.01
    arrival: str = "exp"
    max_events: float = 1e7

    def __post_init__(self):
        if not self.horizon_T > 0:
            raise ValueError("horizon_T must be positive")
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        rl = list(self.rho_list)
        if any(r <= 0 for r in rl) or any(b <= a for a, b in zip(rl, rl[1:])):
            raise ValueError("rho_list must be positive and strictly increasing")

    def arrival_model(self) -> ArrivalModel:
        return ArrivalModel.from_name(self.arrival, self.lam)

    def expected_arrivals(self, rho: float, horizon_T: float | None = None) -> float:
        return self.lam * math.sqrt(rho) * (self.horizon_T if horizon_T is None else horizon_T)

    def guard(self, rho: float, horizon_T: float | None = None) -> None:
        need = self.expected_arrivals(rho, horizon_T)
        if need > self.max_events:
            raise ResourceGuardError(
                f"expected {need:.3g} arrivals per replication at rho={rho:g} exceeds cap "
                f"{self.max_events:.3g}")


@dataclass(frozen=True)
class ScaledPath:
    """Queue path with time and level divided by ``scale = sqrt(rho)``."""

    rho: float
    scale: float
    t: np.ndarray
    level: np.ndarray
    level0: float
    horizon: float
    raw: QueuePath

    def value(self, s):
        return self.raw.value(np.asarray(s, dtype=float) * self.scale) / self.scale


def scaled_path(rho: float, config: ScalingConfig, rng: RngStream, q0: int = 0,
                discipline: Discipline | None = None, keep_events: bool = True) -> ScaledPath:
    if not rho > 0:
        raise ValueError("rho must be positive")
    config.guard(rho)
    scale = math.sqrt(rho)
    params = ModelParams.from_rho(rho, config.lam)
    path = simulate(params, config.arrival_model(), discipline or Discipline.fifo(),
                    Stop(horizon=scale * config.horizon_T), rng, q0=q0, keep_events=keep_events)
    return ScaledPath(rho, scale, path.t / scale, path.q / scale, q0 / scale,
                      path.horizon / scale, path)


def _first_records(rho: float, lam: float, arrival: ArrivalModel, rng: RngStream, l_max: int):
    params = ModelParams.from_rho(rho, lam)
    path = simulate(params, arrival, Discipline.fifo(), Stop(departure_periods=l_max), rng)
    return departure_records(path)[:l_max]


def single_departure_frequency(rho: float, l_max: int, replications: int, base_seed: int,
                               lam: float = 1.0, arrival: str = "exp",
                               workers: int = 1) -> np.ndarray:
    """Fraction of replications whose l-th departure period holds one departure, l = 1..l_max."""
    model = ArrivalModel.from_name(arrival, lam)

    def job(rng, _):
        return [r.single for r in _first_records(rho, lam, model, rng, l_max)]

    flags = np.array(replicate(replications, base_seed, job, workers), dtype=float)
    return flags.mean(axis=0)


@dataclass(frozen=True)
class EmbeddedLevels:
    """Scaled (pre, post, last departure time) for the first departure periods."""

    rho: float
    pre: np.ndarray  # shape (replications, l_max)
    post: np.ndarray
    time: np.ndarray
    single: np.ndarray
    seed: int


def collect_embedded(rho: float, l_max: int, replications: int, base_seed: int,
                     lam: float = 1.0, arrival: str = "exp", workers: int = 1) -> EmbeddedLevels:
    model = ArrivalModel.from_name(arrival, lam)
    scale = math.sqrt(rho)

    def job(rng, _):
        recs = _first_records(rho, lam, model, rng, l_max)
        return [(r.pre, r.post, r.last_departure, r.single) for r in recs]

    arr = np.array(replicate(replications, base_seed, job, workers), dtype=float)
    return EmbeddedLevels(rho, arr[..., 0] / scale, arr[..., 1] / scale, arr[..., 2] / scale,
                          arr[..., 3].astype(bool), base_seed)


def first_buildup_check(rho: float, replications: int, base_seed: int, lam: float = 1.0,
                        arrival: str = "exp", grid=X_GRID, workers: int = 1) -> tuple[float, int]:
    """sup_x |P^(Y_1 >= ceil(x sqrt(rho))) - exact product|; returns (distance, n)."""
    lv = collect_embedded(rho, 1, replications, base_seed, lam, arrival, workers)
    y1 = lv.pre[:, 0] * math.sqrt(rho)
    model = ArrivalModel.from_name(arrival, lam)
    ks = np.maximum(np.ceil(np.asarray(grid) * math.sqrt(rho) - 1e-9).astype(int), 1)
    emp = np.array([(y1 >= k).mean() for k in ks])
    exact = np.array([first_buildup_tail(int(k), rho, model) for k in ks])
    return float(np.max(np.abs(emp - exact))), len(y1)


def embedded_convergence(rho: float, n_jumps: int, replications: int, base_seed: int,
                         fluid_samples: int = 100_000, lam: float = 1.0, arrival: str = "exp",
                         alpha: float = 0.01, workers: int = 1) -> ComparisonReport:
    """Two-sample KS of scaled (Y_l, X_l, d_l) against fluid (pre_l, post_l, tau_l), from zero."""
    rep = ComparisonReport(f"embedded convergence rho={rho:g}")
    lv = collect_embedded(rho, n_jumps, replications, base_seed, lam, arrival, workers)
    fl_seed = RngStream(base_seed, replications).substream(0)
    tau, pre, post = first_jumps(fluid_samples, n_jumps, 0.0, lam, fl_seed)
    crit = ks_critical_two(replications, fluid_samples, alpha)
    for l in range(n_jumps):
        for name, a, b in (("Y", lv.pre[:, l], pre[:, l]), ("X", lv.post[:, l], post[:, l]),
                           ("d", lv.time[:, l], tau[:, l])):
            d = stats.ks_2samp(a, b).statistic
            rep.add("embedded", f"ks_{name}{l + 1}", float(d), crit, "<", rho, replications,
                    base_seed, f"vs fluid n={fluid_samples}")
    ratio = lv.post[:, 0] / lv.pre[:, 0]
    d = stats.kstest(ratio, "uniform").statistic
    rep.add("embedded", "ks_X1/Y1_uniform", float(d), ks_critical_one(replications, alpha), "<",
            rho, replications, base_seed)
    rep.add("embedded", "freq_D1", float(lv.single[:, 0].mean()), None, "info", rho,
            replications, base_seed)
    return rep


def stationary_rayleigh_study(rho_list, arrival: ArrivalModel, grid=X_GRID,
                              sup_tol: float = 0.01, mean_rho: float = 1e6,
                              mean_tol: float = 0.01) -> ComparisonReport:
    """Analytic tails at ceil(x sqrt(rho)) against exp(-x^2/2), plus the scaled mean."""
    rep = ComparisonReport(f"stationary rayleigh {arrival.kind}")
    grid = np.asarray(grid, dtype=float)
    dists = []
    for rho in rho_list:
        ks = np.maximum(np.ceil(grid * math.sqrt(rho) - 1e-9).astype(int), 1)
        tails = stationary_tails(int(ks.max()), rho, arrival)
        dist = float(np.max(np.abs(tails[ks - 1] - rayleigh_tail(grid))))
        dists.append(dist)
        rep.add("rayleigh", "sup_tail_distance", dist, None, "info", rho, len(grid),
                detail=arrival.kind)
    rep.add("rayleigh", f"sup_tail_distance_at_max_rho", dists[-1], sup_tol, "<", rho_list[-1],
            detail=arrival.kind)
    steps = [b - a for a, b in zip(dists, dists[1:])]
    worst = max(steps) if steps else -1.0
    rep.add("rayleigh", "max_increase_along_rho", worst, 0.0, "<", None, len(dists),
            detail="distances strictly decreasing iff all increments < 0: "
            + " ".join(f"{d:.3g}" for d in dists))
    rep.series[f"rayleigh_{arrival.kind}"] = (list(rho_list), dists)
    ms = mean_stationary(mean_rho, arrival, tol=1e-9)
    ratio = ms.value / math.sqrt(mean_rho)
    rep.add("rayleigh", "mean_ratio_rel_error", abs(ratio / SQRT_HALF_PI - 1.0), mean_tol, "<",
            mean_rho, ms.terms, detail=f"mean/sqrt(rho)={ratio:.7f}")
    return rep


def finite_dim_compare(rho: float, times, replications: int, base_seed: int,
                       config: ScalingConfig | None = None, alpha: float = 0.01,
                       workers: int = 1) -> ComparisonReport:
    """KS between scaled queue levels and fluid levels at fixed times, both from zero."""
    times = [float(t) for t in times]
    horizon = max(times)
    config = config or ScalingConfig(rho_list=(rho,), horizon_T=horizon,
                                     replications=replications, seed=base_seed)
    if config.horizon_T < horizon:
        raise ValueError("times must lie within the horizon")
    config.guard(rho)

    def job(rng, _):
        sp = scaled_path(rho, config, rng, keep_events=False)
        return sp.value(times)

    pre = np.array(replicate(replications, base_seed, job, workers))
    fl_root = RngStream(base_seed, replications)

    def fluid_job(i):
        p = fluid_simulate(0.0, config.lam, config.horizon_T, fl_root.substream(i))
        return fluid_value(p, times)

    flu = np.array([fluid_job(i) for i in range(replications)])
    rep = ComparisonReport(f"finite-dimensional rho={rho:g}")
    crit = ks_critical_two(replications, replications, alpha)
    for j, t in enumerate(times):
        a, b = np.atleast_1d(pre[:, j]), np.atleast_1d(flu[:, j])
        d = 0.0 if t == 0 else float(stats.ks_2samp(a, b).statistic)
        rep.add("fdd", f"ks_t={t:g}", d, crit, "<", rho, replications, base_seed)
    return rep


def trend_ok(values, sds, sigmas: float = 2.0, increasing: bool = True) -> bool:
    """Each step moves in the stated direction up to ``sigmas`` standard deviations."""
    for (a, sa), (b, sb) in zip(zip(values, sds), zip(values[1:], sds[1:])):
        slack = sigmas * math.hypot(sa, sb)
        if increasing and b < a - slack:
            return False
        if not increasing and b > a + slack:
            return False
    return True
