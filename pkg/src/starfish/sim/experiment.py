"""Success-ratio sweeps over strategies, capacity multipliers, skewness and seeds."""
from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from ..core import InvariantViolation
from ..strategies import DEFAULT_MAX_CYCLE, StrategyKind, plan_setup
from . import kernel
from .routing import Simulator
from .topology import Topology, TopologyError, load_topology
from .workload import BIAS_MODES, ValueDist, Workload, generate_workload

RESULT_HEADER = ["strategy", "capacity_mult", "skewness", "seed", "attempted", "succeeded",
                 "success_ratio", "onchain_ops"]

DEFAULT_TOPOLOGY = {"model": "scale-free", "nodes": 200, "attach": 2, "seed": 7, "capacity": 1000}


class ConfigError(ValueError):
    """The experiment configuration is unusable."""


# written next to every sweep so readers know how the inputs were interpreted
OUTPUT_NOTES = {
    "amounts": "log-normal draws floored to whole coin units",
    "skewness": "endpoint weight s on the top-decile-degree nodes, applied to the sides "
                "named by bias; an interpretation of a qualitatively described knob",
}


@dataclass
class ExperimentConfig:
    topology: dict | str = field(default_factory=lambda: dict(DEFAULT_TOPOLOGY))
    payments: int = 50_000
    values: str | dict = "small"
    strategies: list[str] = field(default_factory=lambda: [k.value for k in StrategyKind])
    capacity_multipliers: list[int] = field(default_factory=lambda: [1, 5, 25])
    skewness: list[float] = field(default_factory=lambda: [1, 8])
    bias: str = "both"
    seeds: list[int] = field(default_factory=lambda: list(range(10)))
    delta: int = 10
    max_cycle: int = DEFAULT_MAX_CYCLE
    engine: str = "kernel"

    @classmethod
    def from_dict(cls, data: dict, base: Path | None = None) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        data = {k: v for k, v in data.items() if k != "notes"}  # informational only
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        cfg = cls(**data)
        if isinstance(cfg.topology, str) and base is not None and not Path(cfg.topology).is_absolute():
            cfg.topology = str(base / cfg.topology)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"no such config file: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(data, path.parent)

    def validate(self) -> None:
        def ints(name, values, lo):
            if not isinstance(values, list) or not values:
                raise ConfigError(f"{name} must be a non-empty list")
            for v in values:
                if not isinstance(v, int) or isinstance(v, bool) or v < lo:
                    raise ConfigError(f"{name} entries must be integers >= {lo}")

        if not isinstance(self.payments, int) or self.payments < 1:
            raise ConfigError("payments must be a positive integer")
        ints("capacity_multipliers", self.capacity_multipliers, 1)
        ints("seeds", self.seeds, 0)
        if not isinstance(self.skewness, list) or not self.skewness \
                or not all(isinstance(s, (int, float)) and s > 0 for s in self.skewness):
            raise ConfigError("skewness must be a non-empty list of positive numbers")
        if not isinstance(self.strategies, list) or not self.strategies:
            raise ConfigError("strategies must be a non-empty list")
        try:
            [StrategyKind.parse(s) for s in self.strategies]
            ValueDist.parse(self.values)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not isinstance(self.delta, int) or self.delta < 1:
            raise ConfigError("delta must be a positive integer")
        if not isinstance(self.max_cycle, int) or self.max_cycle < 3:
            raise ConfigError("max_cycle must be an integer >= 3")
        if self.bias not in BIAS_MODES:
            raise ConfigError(f"bias must be one of {list(BIAS_MODES)}")
        if self.engine not in ("kernel", "reference"):
            raise ConfigError("engine must be 'kernel' or 'reference'")
        if not isinstance(self.topology, (dict, str)):
            raise ConfigError("topology must be a synthesis spec or a CSV path")

    def kinds(self) -> list[StrategyKind]:
        return [StrategyKind.parse(s) for s in self.strategies]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class CellResult:
    strategy: str
    capacity_mult: int
    skewness: float
    seed: int
    attempted: int
    succeeded: int
    onchain_ops: int
    error: str = ""

    @property
    def success_ratio(self) -> float:
        return self.succeeded / self.attempted if self.attempted else 0.0

    def row(self) -> list[Any]:
        skew = int(self.skewness) if float(self.skewness).is_integer() else self.skewness
        return [self.strategy, self.capacity_mult, skew, self.seed, self.attempted,
                self.succeeded, f"{self.success_ratio:.6f}", self.onchain_ops]


def setup_cost(state, kind: StrategyKind) -> tuple[int, list[dict[int, list[int]]]]:
    ops, partners = 0, []
    for node in range(state.n):
        plan = plan_setup(kind, node, [(c, state.balance(c, node)) for _, c in state.adj[node]])
        ops += plan.ops
        partners.append(plan.partners())
    return ops, partners


def run_cell(topology: Topology, kind: StrategyKind, multiplier: int, workload: Workload,
             seed: int = 0, delta: int = 10, max_cycle: int = DEFAULT_MAX_CYCLE,
             engine: str = "kernel", full_audit: bool = False) -> CellResult:
    state = topology.to_network(multiplier)
    if engine == "reference":
        sim = Simulator(state, kind, delta, max_cycle, audit=full_audit)
        m = sim.run(workload)
        ok, ops = m.succeeded, m.onChainOps.total
    else:
        setup, partners = setup_cost(state, kind)
        arr = kernel.arrays_for(state, partners)
        ok, refill, _locked, bad, code = kernel.replay(
            kernel.KIND_CODE[kind], arr["ends"], arr["bal"], arr["ledger"], arr["initial"],
            arr["locked"], arr["adj_ptr"], arr["adj_nbr"], arr["adj_ch"], arr["bind_ptr"],
            arr["bind_ch"], workload.senders, workload.receivers, workload.amounts,
            delta, max_cycle, full_audit)
        if bad >= 0:
            what = "negative balance" if code == kernel.NEGATIVE else "coins not conserved"
            raise InvariantViolation(f"{kind.value}: {what} after payment {bad}")
        if (arr["bal"] < 0).any() or arr["bal"].sum() + arr["ledger"].sum() != state.total():
            raise InvariantViolation(f"{kind.value}: end-of-run audit failed")
        ops = setup + int(refill)
    return CellResult(kind.value, multiplier, workload.skew, seed, len(workload), int(ok), int(ops))


def _run_group(args) -> list[CellResult]:
    topology, cfg, skew, seed = args
    wl = generate_workload(topology, cfg.payments, "skewed", skew, cfg.values, seed, cfg.bias)
    out = []
    for kind in cfg.kinds():
        for mult in cfg.capacity_multipliers:
            try:
                out.append(run_cell(topology, kind, mult, wl, seed, cfg.delta, cfg.max_cycle,
                                    cfg.engine))
            except InvariantViolation as exc:
                # keep going; the failed cell is reported instead of a row
                out.append(CellResult(kind.value, mult, wl.skew, seed, len(wl), 0, 0, str(exc)))
    return out


def run_experiment(cfg: ExperimentConfig, jobs: int = 1) -> list[CellResult]:
    try:
        topology = load_topology(cfg.topology)
    except TopologyError as exc:
        raise ConfigError(str(exc)) from None
    groups = [(topology, cfg, skew, seed) for skew in cfg.skewness for seed in cfg.seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = [r for chunk in pool.map(_run_group, groups) for r in chunk]
    else:
        results = [r for g in groups for r in _run_group(g)]
    order = {k.value: i for i, k in enumerate(cfg.kinds())}
    results.sort(key=lambda r: (order[r.strategy], r.capacity_mult, r.skewness, r.seed))
    return results


def results_csv(results: Sequence[CellResult]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(RESULT_HEADER)
    for r in results:
        if not r.error:
            w.writerow(r.row())
    return out.getvalue()


def summarize(results: Sequence[CellResult]) -> dict[tuple[str, int, float], float]:
    """Mean success ratio per (strategy, multiplier, skewness) cell."""
    acc: dict[tuple[str, int, float], list[float]] = {}
    for r in results:
        if r.error:
            continue
        acc.setdefault((r.strategy, r.capacity_mult, r.skewness), []).append(r.success_ratio)
    return {k: float(np.mean(v)) for k, v in acc.items()}


def summary_csv(results: Sequence[CellResult]) -> str:
    """Long-format, plot-ready means."""
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["strategy", "capacity_mult", "skewness", "seeds", "mean_success_ratio"])
    counts: dict[tuple, int] = {}
    for r in results:
        if r.error:
            continue
        key = (r.strategy, r.capacity_mult, r.skewness)
        counts[key] = counts.get(key, 0) + 1
    for key, mean in summarize(results).items():
        s, m, k = key
        k = int(k) if float(k).is_integer() else k
        w.writerow([s, m, k, counts[key], f"{mean:.6f}"])
    return out.getvalue()
