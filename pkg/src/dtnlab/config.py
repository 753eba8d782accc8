"""JSON scenarios, named presets and the analysis report."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from pathlib import Path

from . import mobility as mob
from . import topology as topo
from .analysis import (
    REGIME_SAME_CELL,
    CapacityReport,
    RadioParams,
    UnstableRate,
    b_constant,
    capacity,
    delay_bound,
    energy_bounds,
    energy_function,
)
from .engine import SimConfig
from .scheduler import params_from_config

CONFIG_SCHEMA = "dtnlab/config/1"
REPORT_SCHEMA = "dtnlab/report/1"
CSV_SCHEMA = "dtnlab/sim-csv/1"


class ConfigError(ValueError):
    pass


def _base(topology, mobility, n_users, R1, R2, lam=None, slots=100_000):
    return {
        "schema": CONFIG_SCHEMA,
        "topology": topology,
        "mobility": mobility,
        "n_users": n_users,
        "radio": {"R1": R1, "R2": R2, "A_max": 1},
        "algorithm": {"type": "two_hop_relay"},
        "lambda": lam,
        "sim": {"slots": slots, "seed": 0},
    }


PRESETS: dict[str, dict] = {
    "paper-fig2": _base({"rows": 4, "cols": 4, "gaps": []}, {"type": "random_walk", "move_prob": 0.3}, 20, 2, 1, 0.4),
    "netcod": {
        **_base({"rows": 2, "cols": 2}, {"type": "iid"}, 6, 1, 0),
        "netcod": {"epsilon": 0.125, "delta": 0.0, "slots": 10_000_000},
    },
    "oracle-2x2-n4": _base({"rows": 2, "cols": 2}, {"type": "iid"}, 4, 2, 1, 0.1),
    "oracle-2x2-n6": _base({"rows": 2, "cols": 2}, {"type": "iid"}, 6, 2, 1, 0.1),
    "oracle-strip3-n4": _base({"rows": 1, "cols": 3}, {"type": "iid", "pi": [0.5, 0.25, 0.25]}, 4, 2, 1, 0.1),
    "single-cell": _base({"rows": 1, "cols": 1}, {"type": "iid", "pi": [1.0]}, 2, 1, 0, 0.2),
}
ORACLE_PRESETS = ("oracle-2x2-n4", "oracle-2x2-n6", "oracle-strip3-n4")


@dataclass
class Scenario:
    raw: dict
    topology: topo.CellTopology
    mobility: mob.MobilityModel
    radio: RadioParams
    n_users: int

    @property
    def lam(self) -> float | None:
        return self.raw.get("lambda")

    @property
    def algorithm(self) -> dict:
        return self.raw.get("algorithm") or {"type": "two_hop_relay"}

    @property
    def sim(self) -> dict:
        return self.raw.get("sim") or {}

    def report(self) -> CapacityReport:
        return capacity(self.topology, self.mobility.pi, self.n_users, self.radio)

    def sim_config(self, lam: float | None = None, seed: int | None = None, slots: int | None = None,
                   warmup: int | None = None, **extra) -> SimConfig:
        lam = self.lam if lam is None else lam
        if lam is None:
            raise ConfigError("lambda is not set")
        sim = self.sim
        try:
            params = params_from_config(self.algorithm, self.report(), self.radio, lam)
            return SimConfig(
                topology=self.topology,
                mobility=self.mobility,
                radio=self.radio,
                n_users=self.n_users,
                lam=float(lam),
                params=params,
                slots=int(slots if slots is not None else sim.get("slots", 100_000)),
                seed=int(seed if seed is not None else sim.get("seed", 0)),
                warmup=warmup if warmup is not None else sim.get("warmup"),
                **extra,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def parse(cfg: dict) -> Scenario:
    """Validate a config dict and build its objects; raise ConfigError on any problem."""
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    schema = cfg.get("schema", CONFIG_SCHEMA)
    if schema != CONFIG_SCHEMA:
        raise ConfigError(f"unsupported schema {schema!r}")
    try:
        t = topo.from_config(cfg["topology"])
        m = mob.from_config(cfg.get("mobility", {"type": "iid"}), t)
        radio = RadioParams(**cfg.get("radio", {"R1": 1, "R2": 0}))
        n = int(cfg["n_users"])
    except KeyError as exc:
        raise ConfigError(f"missing key {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if n < 2 or n % 2:
        raise ConfigError("n_users must be even and at least 2")
    lam = cfg.get("lambda")
    if lam is not None and not 0 <= lam <= radio.A_max:
        raise ConfigError("lambda must lie in [0, A_max]")
    return Scenario(raw=copy.deepcopy(cfg), topology=t, mobility=m, radio=radio, n_users=n)


def preset(name: str) -> dict:
    try:
        return copy.deepcopy(PRESETS[name])
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}") from None


def load(path: str | Path | None = None, preset_name: str | None = None) -> dict:
    if (path is None) == (preset_name is None):
        raise ConfigError("give exactly one of a config file or a preset")
    if preset_name is not None:
        return preset(preset_name)
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def analyze(sc: Scenario, lam: float | None = None, beta: float | None = None) -> dict:
    """Closed forms for a scenario: capacity, energy curve and bound constants."""
    rep = sc.report()
    lam = sc.lam if lam is None else lam
    J = sc.topology.max_degree
    out: dict = {
        "schema": REPORT_SCHEMA,
        "capacity": rep.to_dict(),
        "B": b_constant(sc.radio, J),
        "J": J,
        "kappa": rep.kappa,
        "gamma": sc.mobility.gamma,
        "alpha_hat": None,
        "d": None,
        "energy_curve": None,
        "delay_bound": None,
        "energy_bounds": None,
        "lambda": lam,
    }
    if sc.mobility.ergodic:
        out["alpha_hat"] = mob.estimate_alpha(sc.mobility)
    if sc.radio.regime == REGIME_SAME_CELL:
        out["energy_curve"] = energy_function(rep, sc.radio).to_dict()
    if lam is not None and lam > 0 and out["alpha_hat"] is not None:
        try:
            db = delay_bound(rep, sc.radio, sc.n_users, lam, out["alpha_hat"], sc.mobility.gamma, J)
            out["d"] = db.d
            out["delay_bound"] = {"value": db.value, "rho": db.rho, "d": db.d}
        except (UnstableRate, ValueError) as exc:
            out["delay_bound"] = {"error": str(exc)}
        if beta is not None:
            try:
                eb = energy_bounds(rep, sc.radio, sc.n_users, lam, beta, out["alpha_hat"], sc.mobility.gamma, J)
                out["energy_bounds"] = {
                    "e_bar": eb.e_bar, "phi": eb.phi, "delay_bound": eb.delay_bound,
                    "rho": eb.rho, "beta": eb.beta, "d": eb.d,
                }
            except ValueError as exc:
                out["energy_bounds"] = {"error": str(exc)}
    return out


def report_from_json(text: str) -> CapacityReport:
    data = json.loads(text)
    if data.get("schema") != REPORT_SCHEMA:
        raise ConfigError("not an analysis report")
    return CapacityReport.from_dict(data["capacity"])


def clean(obj):
    """JSON-safe copy: non-finite floats become null, numpy scalars and arrays become Python values."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if hasattr(obj, "tolist"):
        return clean(obj.tolist())
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    return obj


def dumps(obj) -> str:
    return json.dumps(clean(obj), indent=2, sort_keys=True, allow_nan=False)
