"""Payment workloads: who pays whom, and how much."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .topology import Topology

# Log-normal (mu, sigma) of payment values in coin units; "large" is 10x "small".
# "small" payments are centred a little above one side of a default 1x channel
# (1000 coins split 500/500): a single channel often cannot carry them while a
# node's pooled balance can, which is the regime the capacity bounds describe.
VALUE_PRESETS = {
    "small": (math.log(800.0), 0.2),
    "large": (math.log(8000.0), 0.2),
}


@dataclass(frozen=True)
class ValueDist:
    mu: float
    sigma: float

    @classmethod
    def preset(cls, name: str) -> "ValueDist":
        try:
            return cls(*VALUE_PRESETS[name])
        except KeyError:
            raise ValueError(f"unknown value preset {name!r}; have {sorted(VALUE_PRESETS)}") from None

    @classmethod
    def parse(cls, spec: str | dict | "ValueDist") -> "ValueDist":
        if isinstance(spec, ValueDist):
            return spec
        if isinstance(spec, str):
            return cls.preset(spec)
        if isinstance(spec, dict) and set(spec) == {"mu", "sigma"}:
            if spec["sigma"] < 0:
                raise ValueError("sigma must be non-negative")
            return cls(float(spec["mu"]), float(spec["sigma"]))
        raise ValueError(f"bad value distribution {spec!r}")


@dataclass
class Workload:
    senders: np.ndarray     # node indices in the topology's sorted order
    receivers: np.ndarray
    amounts: np.ndarray
    sampler: str
    skew: float
    bias: str = "both"

    def __len__(self) -> int:
        return len(self.amounts)

    def __iter__(self):
        return zip(self.senders.tolist(), self.receivers.tolist(), self.amounts.tolist())


def hub_set(topology: Topology) -> np.ndarray:
    """Indices of the top decile of nodes by degree (ties by index)."""
    deg = topology.degrees()
    order = sorted(range(len(topology.nodes)), key=lambda i: (-deg[topology.nodes[i]], i))
    k = max(1, math.ceil(len(order) / 10))
    return np.array(sorted(order[:k]), dtype=np.int64)


def endpoint_weights(topology: Topology, skew: float) -> np.ndarray:
    w = np.ones(len(topology.nodes))
    w[hub_set(topology)] = skew
    return w / w.sum()


BIAS_MODES = ("both", "receivers", "senders")


def generate_workload(topology: Topology, n: int, sampler: str = "uniform", skew: float = 1.0,
                      values: ValueDist | str | dict = "small", seed: int = 0,
                      bias: str = "both") -> Workload:
    """Draw ``n`` payments.

    The skewed sampler gives every top-decile-degree node weight ``skew``
    against weight 1 for the rest. ``bias`` says which endpoint the weights
    apply to; the other endpoint is uniform.
    """
    if bias not in BIAS_MODES:
        raise ValueError(f"bias must be one of {BIAS_MODES}")
    if n <= 0:
        raise ValueError("n must be positive")
    if sampler not in ("uniform", "skewed"):
        raise ValueError(f"unknown sampler {sampler!r}")
    if skew <= 0:
        raise ValueError("skewness must be positive")
    dist = ValueDist.parse(values)
    size = len(topology.nodes)
    rng = np.random.default_rng(seed)
    weighted = endpoint_weights(topology, skew if sampler == "skewed" else 1.0)
    uniform = np.full(size, 1.0 / size)
    p_send = weighted if bias in ("both", "senders") else uniform
    p_recv = weighted if bias in ("both", "receivers") else uniform
    senders = rng.choice(size, n, p=p_send)
    receivers = rng.choice(size, n, p=p_recv)
    clash = np.flatnonzero(receivers == senders)
    while clash.size:
        receivers[clash] = rng.choice(size, clash.size, p=p_recv)
        clash = clash[receivers[clash] == senders[clash]]
    amounts = np.floor(rng.lognormal(dist.mu, dist.sigma, n)).astype(np.int64)
    np.maximum(amounts, 1, out=amounts)
    return Workload(senders.astype(np.int64), receivers.astype(np.int64), amounts,
                    sampler, skew if sampler == "skewed" else 1.0, bias)
