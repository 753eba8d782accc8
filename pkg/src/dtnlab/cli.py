"""Command-line entry point: analyze, simulate, sweep, oracle and netcod."""

from __future__ import annotations

import argparse
import csv
import io
import sys

import numpy as np

from . import config as cfgmod
from . import netcod, oracle
from .analysis import RadioParams, capacity
from .config import CSV_SCHEMA, ConfigError
from .engine import InvariantViolation, SimStats, aggregate, run, sweep
from .scheduler import Kind
from .topology import TopologyError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INVARIANT = 2

CSV_COLUMNS = [
    "schema", "lambda", "seed", "slots", "warmup", "delivered_rate", "avg_delay", "avg_backlog",
    "avg_energy", "avg_energy_scheduled", "mu", "delay_bound", "energy_bound",
] + [f"n_{k.name}" for k in Kind if k != Kind.Idle]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _add_source(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--config", metavar="PATH", help="JSON scenario file")
    g.add_argument("--preset", metavar="NAME", help=f"one of: {', '.join(sorted(cfgmod.PRESETS))}")
    p.add_argument("--move-prob", type=float, help="override the random-walk move probability x")
    p.add_argument("--iid", action="store_true", help="replace the mobility model by i.i.d. placement from pi")
    p.add_argument("--out", metavar="PATH", help="write output here instead of stdout")


def _add_sim(p):
    p.add_argument("--seed", type=int)
    p.add_argument("--slots", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--algorithm", choices=("two_hop_relay", "min_energy"))
    p.add_argument("--beta", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--format", choices=("csv", "json"), default="csv")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="dtnlab", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("analyze", help="closed-form capacity, energy curve and bounds (JSON)")
    _add_source(p)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--beta", type=float)

    p = sub.add_parser("simulate", help="one simulation run")
    _add_source(p)
    _add_sim(p)
    p.add_argument("--lambda", dest="lam", type=float)

    p = sub.add_parser("sweep", help="independent runs over a lambda grid and seeds")
    _add_source(p)
    _add_sim(p)
    p.add_argument("--lambdas", required=True, help="comma-separated arrival rates")
    p.add_argument("--seeds", default="0,1,2,3,4", help="comma-separated seeds")
    p.add_argument("--aggregate", action="store_true", help="emit per-lambda means and 95%% half-widths")

    p = sub.add_parser("oracle", help="compare closed forms with exhaustive enumeration")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--preset", metavar="NAME")
    g.add_argument("--all-small", action="store_true", help="every enumerable preset")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--out", metavar="PATH")

    p = sub.add_parser("netcod", help="XOR relaying example: baseline vs coded throughput")
    p.add_argument("--epsilon", type=float, default=0.125)
    p.add_argument("--delta", type=float, default=0.0)
    p.add_argument("--slots", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", metavar="PATH")
    return ap


def _scenario(args) -> cfgmod.Scenario:
    if args.config is None and args.preset is None:
        raise ConfigError("give --config or --preset")
    raw = cfgmod.load(args.config, args.preset)
    if args.move_prob is not None:
        raw["mobility"] = {"type": "random_walk", "move_prob": args.move_prob}
    sc = cfgmod.parse(raw)
    if args.iid:
        raw["mobility"] = {"type": "iid", "pi": sc.mobility.pi.tolist()}
        sc = cfgmod.parse(raw)
    alg = dict(sc.algorithm)
    for key in ("algorithm", "beta", "delta"):
        v = getattr(args, key, None)
        if v is not None:
            alg["type" if key == "algorithm" else key] = v
    sc.raw["algorithm"] = alg
    return sc


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _fmt(x):
    if isinstance(x, float):
        return "" if x != x else repr(x)
    return str(x)


def _row(st: SimStats, sc: cfgmod.Scenario) -> dict:
    rep = sc.report()
    a = cfgmod.analyze(sc, st.lam, sc.algorithm.get("beta"))
    db = a["delay_bound"] or {}
    eb = a["energy_bounds"] or {}
    row = {
        "schema": CSV_SCHEMA,
        "lambda": st.lam,
        "seed": st.seed,
        "slots": st.slots,
        "warmup": st.warmup,
        "delivered_rate": st.delivered_rate,
        "avg_delay": st.avg_delay,
        "avg_backlog": st.avg_backlog,
        "avg_energy": st.avg_energy,
        "avg_energy_scheduled": st.avg_energy_scheduled,
        "mu": rep.mu,
        "delay_bound": db.get("value", float("nan")),
        "energy_bound": eb.get("e_bar", float("nan")),
    }
    for k in Kind:
        if k != Kind.Idle:
            row[f"n_{k.name}"] = st.kind_active[k.name]
    return row


def _csv(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c, "")) for c in columns])
    return buf.getvalue()


def _warn_unstable(sc: cfgmod.Scenario, lam: float) -> None:
    mu = sc.report().mu
    if lam >= mu:
        print(f"warning: lambda={lam} is not below capacity mu={mu:.6g}; queues will grow", file=sys.stderr)


def cmd_analyze(args) -> int:
    sc = _scenario(args)
    _emit(cfgmod.dumps(cfgmod.analyze(sc, args.lam, args.beta)) + "\n", args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    sc = _scenario(args)
    lam = sc.lam if args.lam is None else args.lam
    if lam is None:
        raise ConfigError("lambda is not set (use --lambda)")
    _warn_unstable(sc, lam)
    st = run(sc.sim_config(lam, args.seed, args.slots, args.warmup))
    row = _row(st, sc)
    if args.format == "json":
        _emit(cfgmod.dumps(row) + "\n", args.out)
    else:
        _emit(_csv([row], CSV_COLUMNS), args.out)
    return EXIT_OK


class _Build:
    """Picklable (lambda, seed) -> SimConfig factory for sweeps."""

    def __init__(self, raw: dict, slots, warmup):
        self.raw, self.slots, self.warmup = raw, slots, warmup

    def __call__(self, lam, seed):
        return cfgmod.parse(self.raw).sim_config(lam, seed, self.slots, self.warmup)


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bad number list {text!r}") from None


def cmd_sweep(args) -> int:
    sc = _scenario(args)
    lams = _floats(args.lambdas)
    seeds = [int(x) for x in _floats(args.seeds)]
    if not lams or any(x <= 0 for x in lams):
        raise ConfigError("lambdas must be positive")
    for lam in lams:
        _warn_unstable(sc, lam)
    build = _Build(sc.raw, args.slots, args.warmup)
    build(lams[0], seeds[0])  # validate before dispatching
    results = sweep(build, lams, seeds)
    if args.aggregate:
        rows = [{"schema": CSV_SCHEMA, **r} for r in aggregate(results)]
        columns = list(rows[0])
    else:
        rows = [_row(st, sc) for _, _, st in results]
        columns = CSV_COLUMNS
    if args.format == "json":
        _emit(cfgmod.dumps(rows) + "\n", args.out)
    else:
        _emit(_csv(rows, columns), args.out)
    return EXIT_OK


def oracle_check(sc: cfgmod.Scenario, tol: float) -> list[dict]:
    """Closed-form probabilities and capacity against enumeration, in both rate regimes."""
    rows = []
    exact = oracle.enumerate_probabilities(sc.topology, sc.mobility.pi, sc.n_users)
    closed = capacity(sc.topology, sc.mobility.pi, sc.n_users, sc.radio)
    err = max(abs(getattr(closed, k) - v) for k, v in exact.items())
    rows.append({"check": "probabilities", "max_abs_err": err, "pass": err <= tol})
    for R1, R2 in ((2, 1), (3, 2)):
        radio = RadioParams(R1, R2)
        mu = capacity(sc.topology, sc.mobility.pi, sc.n_users, radio).mu
        z = oracle.expected_Z(sc.topology, sc.mobility.pi, sc.n_users, R1, R2)
        rows.append({"check": f"capacity R1={R1} R2={R2}", "max_abs_err": abs(mu - z), "pass": abs(mu - z) <= tol})
    return rows


def cmd_oracle(args) -> int:
    names = cfgmod.ORACLE_PRESETS if args.all_small else (args.preset,)
    rows = []
    for name in names:
        sc = cfgmod.parse(cfgmod.preset(name))
        for r in oracle_check(sc, args.tol):
            rows.append({"preset": name, **r})
    ok = all(r["pass"] for r in rows)
    _emit(_csv(rows, ["preset", "check", "max_abs_err", "pass"]), args.out)
    return EXIT_OK if ok else EXIT_INVARIANT


def cmd_netcod(args) -> int:
    try:
        res = netcod.run_nc_experiment(args.epsilon, args.slots, args.seed, args.delta)
    except netcod.DecodeFailure as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    summary = {
        "epsilon": res.epsilon,
        "delta": res.delta,
        "slots": res.slots,
        "seed": res.seed,
        "nu": netcod.NU,
        "config_frequency": res.config_frequency,
        "gain_injected": res.gain("injected"),
        "gain_injected_se": res.gain_se(),
        "gain_delivered": res.gain("delivered"),
        "gain_analytic": res.analytic_gain,
        "xor_broadcasts": res.xor_sent,
        "coded_queue_mean": res.coded_mean,
        "routing_capacity": netcod.instance_capacity(),
    }
    if args.format == "json":
        _emit(cfgmod.dumps({"schema": CSV_SCHEMA, "summary": summary, "nodes": res.table()}) + "\n", args.out)
        return EXIT_OK
    cols = ["node", "baseline_injected", "enhanced_injected", "baseline_delivered", "enhanced_delivered"]
    text = _csv(res.table(), cols)
    text += "\n" + _csv(
        [{"quantity": k, "value": v} for k, v in summary.items() if np.ndim(v) == 0], ["quantity", "value"]
    )
    _emit(text, args.out)
    return EXIT_OK


COMMANDS = {
    "analyze": cmd_analyze,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "oracle": cmd_oracle,
    "netcod": cmd_netcod,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, TopologyError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
