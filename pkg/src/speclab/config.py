"""Experiment configuration: TOML in, validated dataclass out.

Every tunable lives in the config file; the command line only chooses
the stage, the master seed, the worker count, and the output directory.
Validation failures name the offending field.  The configuration hash
covers the canonical JSON form of the parsed data, so semantically
identical files hash identically regardless of formatting.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import toml

from .geometry import Domain, GeometryError, domain_from_config

STAGES = (
    "spectrum",
    "partition",
    "perturb",
    "weyl",
    "que",
    "concentration",
    "heatkernel",
)


class ConfigError(ValueError):
    pass


def _need(data: dict, section: str, key: str, kind, default=None):
    value = data.get(key, default)
    if value is None:
        raise ConfigError(f"{section}.{key} is required")
    if kind is float and isinstance(value, int):
        value = float(value)
    if not isinstance(value, kind):
        raise ConfigError(
            f"{section}.{key} must be {kind.__name__}, got {type(value).__name__}"
        )
    return value


@dataclass(frozen=True)
class ExperimentConfig:
    domain: Domain
    backend: str
    lambda_max: float
    fd_h: float | None
    fd_count: int
    epsilon: float
    gamma: float
    strategy: str
    truncation: int
    observables: tuple[str, ...]
    windows: tuple[tuple[float, float], ...]
    conc_ns: tuple[int, ...]
    conc_t: float
    conc_replicas: int
    hw_n: int
    hw_ts: tuple[float, ...]
    hw_replicas: int
    mc_t: float
    mc_x: tuple[float, float]
    mc_y: tuple[float, float]
    mc_paths: int
    mc_dt: float
    mc_bridge: bool
    mc_convention: str
    trace_ts: tuple[float, ...]
    seed: int
    out_dir: str
    stages: tuple[str, ...]
    raw: dict = field(compare=False, repr=False, default_factory=dict)

    def config_hash(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def default_config_dict() -> dict:
    """The minimal desk-scale run: unit square, no Monte Carlo."""
    return {
        "domain": {"kind": "rectangle", "lx": 1.0, "ly": 1.0},
        "spectrum": {"backend": "analytic", "lambda_max": 50.0},
        "partition": {"epsilon": 0.2, "gamma": 0.0, "strategy": "equispaced"},
        "perturb": {"truncation": 100},
        "observables": {"names": ["constant", "cos-x"]},
        "windows": {"edges": [[20.0, 24.0], [30.0, 36.0]]},
        "concentration": {
            "block_sizes": [8, 16],
            "threshold": 0.05,
            "replicas": 500,
            "hw_n": 20,
            "hw_thresholds": [6.0, 12.0],
            "hw_replicas": 500,
        },
        "heatkernel": {
            "t": 0.05,
            "x": [0.5, 0.5],
            "y": [0.5, 0.5],
            "n_paths": 0,
            "dt": 1e-3,
            "bridge": True,
            "convention": "half_generator",
            "trace_ts": [0.05, 0.1],
        },
        "run": {
            "seed": 20260814,
            "out_dir": "runs/minimal",
            "stages": ["spectrum", "partition", "perturb", "weyl", "que"],
        },
    }


def parse_config(data: dict) -> ExperimentConfig:
    for section in data:
        if section not in (
            "domain",
            "spectrum",
            "partition",
            "perturb",
            "observables",
            "windows",
            "concentration",
            "heatkernel",
            "run",
        ):
            raise ConfigError(f"unknown section [{section}]")

    try:
        domain = domain_from_config(data.get("domain", {}))
    except GeometryError as exc:
        raise ConfigError(f"domain: {exc}") from exc

    spec = data.get("spectrum", {})
    backend = _need(spec, "spectrum", "backend", str, "analytic")
    if backend not in ("analytic", "fd"):
        raise ConfigError(f"spectrum.backend must be 'analytic' or 'fd', got {backend!r}")
    lambda_max = _need(spec, "spectrum", "lambda_max", float, 50.0)
    if lambda_max <= 0:
        raise ConfigError(f"spectrum.lambda_max must be positive, got {lambda_max}")
    fd_h = spec.get("h")
    if backend == "fd":
        if fd_h is None:
            raise ConfigError("spectrum.h is required for the fd backend")
        fd_h = float(fd_h)
        if fd_h <= 0:
            raise ConfigError(f"spectrum.h must be positive, got {fd_h}")
    fd_count = int(spec.get("count", 12))
    if fd_count < 1:
        raise ConfigError(f"spectrum.count must be >= 1, got {fd_count}")

    part = data.get("partition", {})
    epsilon = _need(part, "partition", "epsilon", float, 0.2)
    if not 0.0 < epsilon < 1.0:
        raise ConfigError(f"partition.epsilon must be in (0, 1), got {epsilon}")
    gamma = _need(part, "partition", "gamma", float, 0.0)
    if not 0.0 <= gamma <= 1.0:
        raise ConfigError(f"partition.gamma must be in [0, 1], got {gamma}")
    strategy = _need(part, "partition", "strategy", str, "equispaced")
    if strategy not in ("equispaced", "jittered"):
        raise ConfigError(
            f"partition.strategy must be 'equispaced' or 'jittered', got {strategy!r}"
        )

    pert = data.get("perturb", {})
    truncation = int(_need(pert, "perturb", "truncation", int, 100))
    if truncation < 1:
        raise ConfigError(f"perturb.truncation must be >= 1, got {truncation}")

    names = tuple(data.get("observables", {}).get("names", ["constant"]))
    if not names:
        raise ConfigError("observables.names must not be empty")

    edges = data.get("windows", {}).get("edges", [])
    windows = []
    for i, pair in enumerate(edges):
        if len(pair) != 2 or not pair[0] < pair[1]:
            raise ConfigError(f"windows.edges[{i}] must be [lo, hi] with lo < hi")
        windows.append((float(pair[0]), float(pair[1])))

    conc = data.get("concentration", {})
    conc_ns = tuple(int(v) for v in conc.get("block_sizes", [8, 32, 128]))
    if any(v < 2 for v in conc_ns):
        raise ConfigError("concentration.block_sizes entries must be >= 2")
    conc_t = _need(conc, "concentration", "threshold", float, 0.05)
    if conc_t <= 0:
        raise ConfigError(f"concentration.threshold must be positive, got {conc_t}")
    conc_replicas = int(conc.get("replicas", 10_000))
    hw_n = int(conc.get("hw_n", 100))
    hw_ts = tuple(float(v) for v in conc.get("hw_thresholds", [15.0, 25.0, 40.0, 60.0]))
    hw_replicas = int(conc.get("hw_replicas", 20_000))
    for nm, v in (("replicas", conc_replicas), ("hw_replicas", hw_replicas)):
        if v < 100:
            raise ConfigError(f"concentration.{nm} must be >= 100, got {v}")
    if hw_n < 1:
        raise ConfigError(f"concentration.hw_n must be >= 1, got {hw_n}")
    if any(t <= 0 for t in hw_ts):
        raise ConfigError("concentration.hw_thresholds must be positive")

    mc = data.get("heatkernel", {})
    mc_t = _need(mc, "heatkernel", "t", float, 0.05)
    if mc_t <= 0:
        raise ConfigError(f"heatkernel.t must be positive, got {mc_t}")
    mc_x = tuple(float(v) for v in mc.get("x", [0.5, 0.5]))
    mc_y = tuple(float(v) for v in mc.get("y", [0.5, 0.5]))
    if len(mc_x) != 2 or len(mc_y) != 2:
        raise ConfigError("heatkernel.x and heatkernel.y must be 2-point coordinates")
    mc_paths = int(mc.get("n_paths", 0))
    if mc_paths < 0:
        raise ConfigError(f"heatkernel.n_paths must be >= 0, got {mc_paths}")
    mc_dt = _need(mc, "heatkernel", "dt", float, 1e-3)
    if mc_dt <= 0:
        raise ConfigError(f"heatkernel.dt must be positive, got {mc_dt}")
    mc_bridge = bool(mc.get("bridge", True))
    mc_convention = mc.get("convention", "half_generator")
    if mc_convention not in ("half_generator", "full_generator"):
        raise ConfigError(
            "heatkernel.convention must be 'half_generator' or 'full_generator', "
            f"got {mc_convention!r}"
        )
    trace_ts = tuple(float(v) for v in mc.get("trace_ts", []))
    if any(t <= 0 for t in trace_ts):
        raise ConfigError("heatkernel.trace_ts must be positive")

    run = data.get("run", {})
    seed = int(run.get("seed", 0))
    if not 0 <= seed < (1 << 64):
        raise ConfigError(f"run.seed must fit in 64 bits, got {seed}")
    out_dir = str(run.get("out_dir", "runs/out"))
    stages = tuple(run.get("stages", list(STAGES)))
    for st in stages:
        if st not in STAGES:
            raise ConfigError(f"run.stages contains unknown stage {st!r}")

    return ExperimentConfig(
        domain=domain,
        backend=backend,
        lambda_max=lambda_max,
        fd_h=fd_h,
        fd_count=fd_count,
        epsilon=epsilon,
        gamma=gamma,
        strategy=strategy,
        truncation=truncation,
        observables=names,
        windows=tuple(windows),
        conc_ns=conc_ns,
        conc_t=conc_t,
        conc_replicas=conc_replicas,
        hw_n=hw_n,
        hw_ts=hw_ts,
        hw_replicas=hw_replicas,
        mc_t=mc_t,
        mc_x=mc_x,  # type: ignore[arg-type]
        mc_y=mc_y,  # type: ignore[arg-type]
        mc_paths=mc_paths,
        mc_dt=mc_dt,
        mc_bridge=mc_bridge,
        mc_convention=mc_convention,
        trace_ts=trace_ts,
        seed=seed,
        out_dir=out_dir,
        stages=stages,
        raw=data,
    )


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        data = toml.load(str(path))
    except (OSError, toml.TomlDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(data)


def default_config() -> ExperimentConfig:
    return parse_config(default_config_dict())


def write_default_config(path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        toml.dump(default_config_dict(), fh)
