"""Command-line front end: ``gminf analyze|simulate|fluid|scale|verify``.

Settings come from flags, then an optional flat INI file (``--config``), then
built-in defaults; flags win. The output directory may also be set through
the ``GMINF_OUT_DIR`` environment variable.
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import os
import sys

import numpy as np

from . import __version__, acceptance, analytic, experiments, fluid, sim
from .core import ArrivalModel, CutLaw, Discipline, ModelParams, RngStream

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_CONFIG = 2
EXIT_RESOURCE = 3

OUT_ENV = "GMINF_OUT_DIR"


class ConfigError(ValueError):
    pass


def _floats(text: str) -> list[float]:
    return [float(x) for x in str(text).replace(",", " ").split()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in str(text).replace(",", " ").split()]


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key: (type, default, help); a default of None means "not set"
MODEL_OPTS = {
    "lambda": (float, 1.0, "arrival rate"),
    "mu": (float, None, "service rate (give this or rho)"),
    "rho": (float, None, "load lambda/mu (give this or mu)"),
    "arrival": (str, "exp", "inter-arrival law: exp, det, uniform or gamma"),
    "uniform_lo": (float, 1.0, "shape of the uniform law before rescaling"),
    "uniform_hi": (float, 3.0, "shape of the uniform law before rescaling"),
    "gamma_shape": (float, 2.0, "gamma shape"),
}

COMMANDS = {
    "analyze": {
        **MODEL_OPTS,
        "kmax": (int, 20, "largest queue length tabulated"),
        "moments": (int, None, "also tabulate factorial moments up to this order (Poisson only)"),
        "transient": (_bool, False, "tabulate transient probabilities"),
        "t": (_floats, [1.0], "evaluation times for --transient"),
        "q0": (int, 0, "initial queue length"),
        "tol": (float, 1e-12, "truncation tolerance of the mean"),
    },
    "simulate": {
        **MODEL_OPTS,
        "discipline": (str, "fifo", "fifo, lifo or general"),
        "cut": (str, "uniform", "surviving-fraction law for general: uniform, beta or fixed"),
        "cut_a": (float, 1.0, "beta a, or the fixed fraction"),
        "cut_b": (float, 1.0, "beta b"),
        "engine": (str, "aggregated", "aggregated or per_customer"),
        "events": (int, None, "stop after this many events"),
        "horizon": (float, None, "stop at this time"),
        "busy_periods": (int, None, "stop after this many busy periods"),
        "q0": (int, 0, "initial queue length"),
        "seed": (int, None, "random seed (required)"),
        "stream": (int, 0, "stream id"),
        "kmax": (int, 20, "largest state in the summary pmf"),
    },
    "fluid": {
        "xi0": (float, 0.0, "initial level"),
        "lambda": (float, 1.0, "growth rate"),
        "horizon": (float, 100.0, "time horizon"),
        "cut": (str, "uniform", "cut law: uniform, beta or fixed"),
        "cut_a": (float, 1.0, "beta a, or the fixed fraction"),
        "cut_b": (float, 1.0, "beta b"),
        "seed": (int, None, "random seed (required)"),
        "stream": (int, 0, "stream id"),
    },
    "scale": {
        "study": (str, "rayleigh", "rayleigh, single, embedded, fdd or path"),
        "lambda": (float, 1.0, "arrival rate"),
        "arrival": (str, "exp", "inter-arrival law"),
        "rho_list": (_floats, [1e2, 1e3, 1e4], "loads to study"),
        "horizon_T": (float, 10.0, "scaled horizon"),
        "times": (_floats, [1.0, 5.0, 10.0], "scaled times for the fdd study"),
        "l_max": (int, 5, "departure periods per replication"),
        "replications": (int, 1000, "replications per load"),
        "fluid_samples": (int, 100_000, "fluid reference samples"),
        "alpha": (float, 0.01, "KS significance level"),
        "max_events": (float, 1e7, "event budget per replication"),
        "seed": (int, None, "random seed (required)"),
        "workers": (int, 1, "replication threads"),
    },
    "verify": {
        "quick": (_bool, False, "criterion-sized runs only (skip the extra variants)"),
        "criteria": (_ints, None, "only these criterion numbers"),
        "workers": (int, 1, "replication threads"),
    },
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gminf", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"gminf {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, opts in COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat INI file with default settings")
        p.add_argument("--out-dir", help=f"output directory (env {OUT_ENV})")
        for key, (typ, _, help_text) in opts.items():
            flag = "--" + key.replace("_", "-")
            dest = key
            if typ is _bool:
                p.add_argument(flag, dest=dest, action="store_const", const=True, default=None,
                               help=help_text)
            elif typ in (_floats, _ints):
                p.add_argument(flag, dest=dest, nargs="+", default=None, help=help_text)
            else:
                p.add_argument(flag, dest=dest, type=typ, default=None, help=help_text)
    return parser


def read_config_file(path: str) -> dict[str, str]:
    """Flat ``key = value`` file; a section header is optional and ignored."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string("[gminf]\n" + text if not text.lstrip().startswith("[") else text)
    except configparser.Error as exc:
        raise ConfigError(f"bad config {path!r}: {exc}") from exc
    out = {}
    for section in cp.sections():
        for k, v in cp.items(section):
            out[k.replace("-", "_")] = v
    return out


def resolve(args: argparse.Namespace) -> dict:
    opts = COMMANDS[args.command]
    file_cfg = read_config_file(args.config) if args.config else {}
    unknown = set(file_cfg) - set(opts) - {"out_dir"}
    if unknown:
        raise ConfigError(f"unknown config keys for {args.command}: {sorted(unknown)}")
    cfg = {"command": args.command}
    for key, (typ, default, _) in opts.items():
        flag = getattr(args, key)
        if flag is not None:
            try:
                cfg[key] = typ(" ".join(flag)) if isinstance(flag, list) else flag
            except ValueError as exc:
                raise ConfigError(f"--{key.replace('_', '-')}: {exc}") from exc
        elif key in file_cfg:
            try:
                cfg[key] = typ(file_cfg[key])
            except ValueError as exc:
                raise ConfigError(f"config key {key!r}: {exc}") from exc
        else:
            cfg[key] = default
    cfg["out_dir"] = (args.out_dir or os.environ.get(OUT_ENV) or file_cfg.get("out_dir")
                      or "gminf-out")
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    cmd = cfg["command"]
    if "mu" in cfg:
        if (cfg["mu"] is None) == (cfg["rho"] is None):
            raise ConfigError("give exactly one of mu and rho")
        if cfg["rho"] is None:
            if not cfg["mu"] > 0:
                raise ConfigError("mu must be positive")
            cfg["rho"] = cfg["lambda"] / cfg["mu"]
        else:
            if not cfg["rho"] > 0:
                raise ConfigError("rho must be positive")
            cfg["mu"] = cfg["lambda"] / cfg["rho"]
    if "lambda" in cfg and not cfg["lambda"] > 0:
        raise ConfigError("lambda must be positive")
    if "seed" in cfg and cfg["seed"] is None:
        raise ConfigError(f"{cmd} needs an explicit --seed")
    if cmd == "simulate" and all(cfg[k] is None for k in ("events", "horizon", "busy_periods")):
        raise ConfigError("simulate needs --events, --horizon or --busy-periods")


def arrival_from(cfg: dict) -> ArrivalModel:
    try:
        return ArrivalModel.from_name(cfg["arrival"], cfg["lambda"], lo=cfg.get("uniform_lo", 1.0),
                                      hi=cfg.get("uniform_hi", 3.0),
                                      shape=cfg.get("gamma_shape", 2.0))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cut_from(cfg: dict) -> CutLaw:
    kind = cfg["cut"]
    try:
        if kind == "uniform":
            return CutLaw.uniform()
        if kind == "beta":
            return CutLaw.beta(cfg["cut_a"], cfg["cut_b"])
        if kind == "fixed":
            return CutLaw.fixed(cfg["cut_a"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    raise ConfigError(f"unknown cut law {kind!r}")


def header_line(cfg: dict) -> str:
    # the output location does not change any result, so it stays out of the header
    shown = {k: v for k, v in cfg.items() if k != "out_dir"}
    return f"gminf {__version__} config={json.dumps(shown, sort_keys=True, default=str)}"


class Outputs:
    """Writes files into the output directory, each starting with the config comment."""

    def __init__(self, cfg: dict):
        self.dir = cfg["out_dir"]
        self.header = header_line(cfg)
        self.written: list[str] = []
        os.makedirs(self.dir, exist_ok=True)

    def open(self, name: str):
        path = os.path.join(self.dir, name)
        self.written.append(path)
        fh = open(path, "w", newline="")
        fh.write(f"# {self.header}\n")
        return fh

    def table(self, name: str, columns: list[str], rows) -> None:
        with self.open(name) as fh:
            fh.write(",".join(columns) + "\n")
            for row in rows:
                fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def cmd_analyze(cfg: dict, out: Outputs) -> int:
    law = arrival_from(cfg)
    rho, lam, mu, k_max = cfg["rho"], cfg["lambda"], cfg["mu"], cfg["kmax"]
    if cfg["moments"] is not None and law.kind != "exponential":
        raise ConfigError("the factorial-moment recursion holds for Poisson arrivals only; "
                          "use --arrival exp")
    tails = analytic.stationary_tails(k_max + 1, rho, law)
    pmf = analytic.stationary_pmf_vector(k_max, rho, law)
    out.table("stationary.csv", ["k", "tail_P(Q>=k)", "pmf_P(Q=k)"],
              [(k, 1.0 if k == 0 else tails[k - 1], pmf[k]) for k in range(k_max + 1)])
    mean = analytic.mean_stationary(rho, law, cfg["tol"])
    rows = [(k, analytic.mean_level_arrivals(k, rho, law)) for k in range(2, k_max + 1)]
    out.table("levels.csv", ["k", "mean_level_k_arrivals_per_level_k-1_sojourn"], rows)
    out.table("summary.csv", ["quantity", "value", "error_bound"], [
        ("mean_queue_length", mean.value, mean.error_bound),
        ("mean_cycle_time", analytic.mean_cycle(rho, lam, law), 0.0),
    ])
    if cfg["moments"] is not None:
        try:
            table = analytic.factorial_moments(cfg["moments"], rho, mean.value,
                                               max(mean.error_bound / mean.value, 2.2e-16))
        except analytic.CancellationError as exc:
            print(f"warning: {exc}; writing the moments before it", file=sys.stderr)
            table = exc.partial
        out.table("moments.csv", ["n", "factorial_moment", "significant_digits"],
                  [(n, m, d) for n, (m, d) in enumerate(zip(table.m, table.digits))])
        if table.lost_at is not None:
            print(f"warning: moment {table.lost_at} has no significant digits left", file=sys.stderr)
    if cfg["transient"]:
        if law.kind != "exponential":
            raise ConfigError("the transient recursion holds for Poisson arrivals only")
        q0 = cfg["q0"]
        width = max(k_max, q0 + 20)
        init = np.zeros(width + 1)
        init[q0] = 1.0
        table = analytic.coefficient_table(width, init, lam, mu)
        rows = []
        for t in cfg["t"]:
            p = table.evaluate(t)
            bound = analytic.truncation_mass_bound(t, width, init, lam)
            rows.extend((t, k, p[k], bound) for k in range(k_max + 1))
        out.table("transient.csv", ["t", "k", "P(Q(t)=k)", "mass_bound_above_table"], rows)
    print(f"P(Q>=1..{min(k_max, 5)}): " + " ".join(f"{v:.6g}" for v in tails[: min(k_max, 5)]))
    return EXIT_OK


def cmd_simulate(cfg: dict, out: Outputs) -> int:
    law = arrival_from(cfg)
    params = ModelParams(cfg["lambda"], cfg["mu"])
    kind = cfg["discipline"]
    if kind == "general":
        disc = Discipline.general(cut_from(cfg))
    elif kind in ("fifo", "lifo"):
        disc = Discipline(kind)
    else:
        raise ConfigError(f"unknown discipline {kind!r}")
    if cfg["engine"] not in (sim.AGGREGATED, sim.PER_CUSTOMER):
        raise ConfigError(f"unknown engine {cfg['engine']!r}")
    stop = sim.Stop(horizon=cfg["horizon"] or math.inf, events=cfg["events"],
                    busy_periods=cfg["busy_periods"])
    try:
        path = sim.simulate(params, law, disc, stop, RngStream(cfg["seed"], cfg["stream"]),
                            q0=cfg["q0"], engine=cfg["engine"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    with out.open("path.csv") as fh:
        path.to_csv(fh)
    bp = sim.busy_periods(path)
    pmf = sim.time_average_pmf(path, 0.0, cfg["kmax"])
    out.table("pmf.csv", ["k", "time_fraction"], list(enumerate(pmf)))
    out.table("busy_periods.csv", ["index", "duration"], list(enumerate(bp, start=1)))
    print(f"{len(path.t)} events to t={path.horizon:.6g}; {len(bp)} complete busy periods")
    return EXIT_OK


def cmd_fluid(cfg: dict, out: Outputs) -> int:
    if cfg["xi0"] < 0 or not cfg["horizon"] > 0:
        raise ConfigError("need xi0 >= 0 and horizon > 0")
    path = fluid.fluid_simulate(cfg["xi0"], cfg["lambda"], cfg["horizon"],
                                RngStream(cfg["seed"], cfg["stream"]), cut_from(cfg))
    with out.open("jumps.csv") as fh:
        path.to_csv(fh)
    print(f"{path.n_jumps} jumps on [0, {path.horizon:g}]")
    return EXIT_OK


def cmd_scale(cfg: dict, out: Outputs) -> int:
    study = cfg["study"]
    rhos = cfg["rho_list"]
    try:
        conf = experiments.ScalingConfig(cfg["lambda"], tuple(rhos), cfg["horizon_T"], cfg["seed"],
                                         cfg["replications"], cfg["alpha"], cfg["arrival"],
                                         cfg["max_events"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    seed, reps, workers = cfg["seed"], cfg["replications"], cfg["workers"]
    if study == "rayleigh":
        report = experiments.stationary_rayleigh_study(rhos, arrival_from(cfg))
    elif study == "single":
        report = experiments.ComparisonReport("single-departure frequency")
        xs, ys = [], []
        for i, rho in enumerate(rhos):
            freq = experiments.single_departure_frequency(rho, cfg["l_max"], reps, seed + i,
                                                          cfg["lambda"], cfg["arrival"], workers)
            for l, f in enumerate(freq, start=1):
                report.add("single", f"freq_D{l}", float(f), None, "info", rho, reps, seed + i)
            xs.append(rho)
            ys.append(float(freq[0]))
        report.series["single_D1"] = (xs, ys)
    elif study == "embedded":
        report = experiments.ComparisonReport("embedded convergence")
        for i, rho in enumerate(rhos):
            report.extend(experiments.embedded_convergence(
                rho, cfg["l_max"], reps, seed + i, cfg["fluid_samples"], cfg["lambda"],
                cfg["arrival"], cfg["alpha"], workers))
    elif study == "fdd":
        report = experiments.ComparisonReport("finite-dimensional distributions")
        for i, rho in enumerate(rhos):
            conf.guard(rho)
            report.extend(experiments.finite_dim_compare(rho, cfg["times"], reps, seed + i, conf,
                                                         cfg["alpha"], workers))
    elif study == "path":
        report = experiments.ComparisonReport("scaled paths")
        for i, rho in enumerate(rhos):
            sp = experiments.scaled_path(rho, conf, RngStream(seed, i), keep_events=False)
            with out.open(f"scaled_path_rho{rho:g}.dat") as fh:
                fh.write("# t level\n")
                for t, q in zip(np.concatenate(([0.0], sp.t)), np.concatenate(([sp.level0], sp.level))):
                    fh.write(f"{t:.17g} {q:.17g}\n")
            report.add("path", "max_level", float(sp.level.max(initial=0.0)), None, "info", rho,
                       len(sp.t), seed)
    else:
        raise ConfigError(f"unknown study {study!r}")
    _write_report(report, out, f"scale_{study}")
    return EXIT_OK if report.passed else EXIT_VERIFY_FAILED


def _write_report(report, out: Outputs, stem: str, echo: bool = True) -> None:
    with out.open(f"{stem}.csv") as fh:
        report.to_csv(fh)
    # JSON has no comment syntax, so the header travels in a "config" field
    path = os.path.join(out.dir, f"{stem}.json")
    doc = report.summary()
    doc["config"] = out.header
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, default=float)
        fh.write("\n")
    out.written.append(path)
    out.written.extend(report.write_dat(out.dir, out.header))
    if echo:
        for row in report.rows:
            verdict = "" if row.relation == "info" else ("ok" if row.passed else "FAIL")
            print(f"{row.study:<22} {row.statistic:<28} rho={row.rho!s:<8} "
                  f"{row.value:<12.6g} {verdict}")


def cmd_verify(cfg: dict, out: Outputs) -> int:
    results = acceptance.run_all(quick=cfg["quick"], workers=cfg["workers"],
                                 numbers=cfg["criteria"], log=print)
    combined = experiments.ComparisonReport("acceptance")
    lines = []
    for c, report, secs in results:
        combined.rows.extend(report.rows)
        lines.append(acceptance.status_line(c, report, secs))
    _write_report(combined, out, "acceptance", echo=False)
    with out.open("acceptance.txt") as fh:
        fh.write("\n".join(lines) + "\n")
    failed = [c.number for c, r, _ in results if not r.passed]
    print("all criteria passed" if not failed else f"failed criteria: {failed}")
    return EXIT_OK if not failed else EXIT_VERIFY_FAILED


HANDLERS = {
    "analyze": cmd_analyze,
    "simulate": cmd_simulate,
    "fluid": cmd_fluid,
    "scale": cmd_scale,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve(args)
        print(f"# {header_line(cfg)}", file=sys.stderr)
        out = Outputs(cfg)
        code = HANDLERS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except experiments.ResourceGuardError as exc:
        print(f"resource guard: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    for p in out.written:
        print(f"wrote {p}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
