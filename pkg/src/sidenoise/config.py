"""Flat `key = value` pipeline configuration.

Every hyper-parameter of every stage lives in one flat namespace so the
resolved configuration can be echoed verbatim into artifact headers.  Lines
starting with `#` are comments; missing keys take the documented defaults;
unknown keys and out-of-range values are rejected with the offending key
named.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError
from .prototypes import PrototypeStrategy
from .synth import SynthConfig
from .trainer import TrainConfig
from .weighting import WeightStrategy

GRAPH_PART_SOURCES = ("CN", "CD", "HW")


@dataclass(frozen=True)
class PipelineConfig:
    # core-model
    normalize_features: bool = True
    # relation graph
    graph_sources: str = "CD+HW"
    graph_coefficients: tuple[float, ...] = ()
    embed_dim: int = 64
    # prototypes
    temperature: float = 0.1
    gamma: float = 1.0
    epsilon: float = 1e-6
    prototype_topk: int | None = None  # None = max(5, ceil(0.05 * class size))
    refresh_rounds: int = 2
    prototype_strategy: PrototypeStrategy = PrototypeStrategy.WEIGHTING
    # noise weighting
    strategy: WeightStrategy = WeightStrategy.SOFT_WEIGHT
    alpha: float = 1.2
    beta: float = 1.5
    smoothing: bool = False
    smoothing_lambda: float = 0.7
    smoothing_topk: int = 5
    # trainer
    learning_rate: float = 0.1
    lr_decay_factor: float = 0.1
    lr_decay_at: tuple[float, ...] = (0.6, 0.85)
    epochs: int = 100
    batch_size: int = 64
    warmup_fraction: float = 0.3
    # synthetic benchmark
    classes: int = 20
    dim: int = 16
    n_per_class: int = 200
    branching: int = 3
    depth: int = 3
    sigma_within: float = 0.25
    sigma_between: float = 1.0
    flip_rate: float = 0.4
    val_fraction: float = 0.1
    # run control
    seed: int = 0
    reproducible: bool = True
    # benchmark grid (cross product of the lists below x bench_seeds)
    bench_seeds: int = 5
    bench_strategies: tuple[WeightStrategy, ...] = (
        WeightStrategy.ALL_UNIFORM,
        WeightStrategy.HARD_SELECT,
        WeightStrategy.SOFT_WEIGHT,
    )
    bench_graphs: tuple[str, ...] = ("CD+HW",)
    bench_prototype_strategies: tuple[PrototypeStrategy, ...] = (
        PrototypeStrategy.WEIGHTING,
    )
    bench_alphas: tuple[float, ...] = ()  # empty = just `alpha`
    bench_betas: tuple[float, ...] = ()   # empty = just `beta`

    def __post_init__(self):
        _require(self.embed_dim >= 2, "embed_dim", ">= 2", self.embed_dim)
        _require(self.temperature > 0, "temperature", "> 0", self.temperature)
        _require(self.gamma > 0, "gamma", "> 0", self.gamma)
        _require(self.epsilon > 0, "epsilon", "> 0", self.epsilon)
        _require(
            self.prototype_topk is None or self.prototype_topk >= 1,
            "prototype_topk", ">= 1 or auto", self.prototype_topk,
        )
        _require(self.refresh_rounds >= 0, "refresh_rounds", ">= 0", self.refresh_rounds)
        _require(self.alpha > 0, "alpha", "> 0", self.alpha)
        _require(self.beta > 0, "beta", "> 0", self.beta)
        _require(
            0.0 <= self.smoothing_lambda <= 1.0,
            "smoothing_lambda", "in [0, 1]", self.smoothing_lambda,
        )
        _require(self.smoothing_topk >= 1, "smoothing_topk", ">= 1", self.smoothing_topk)
        _require(self.learning_rate > 0, "learning_rate", "> 0", self.learning_rate)
        _require(self.lr_decay_factor > 0, "lr_decay_factor", "> 0", self.lr_decay_factor)
        for f in self.lr_decay_at:
            _require(0.0 <= f < 1.0, "lr_decay_at", "fractions in [0, 1)", f)
        _require(self.epochs >= 1, "epochs", ">= 1", self.epochs)
        _require(self.batch_size >= 1, "batch_size", ">= 1", self.batch_size)
        _require(
            0.0 < self.warmup_fraction <= 1.0,
            "warmup_fraction", "in (0, 1]", self.warmup_fraction,
        )
        _require(self.classes >= 2, "classes", ">= 2", self.classes)
        _require(self.dim >= 1, "dim", ">= 1", self.dim)
        _require(self.n_per_class >= 1, "n_per_class", ">= 1", self.n_per_class)
        _require(self.branching >= 1, "branching", ">= 1", self.branching)
        _require(self.depth >= 1, "depth", ">= 1", self.depth)
        _require(
            self.branching**self.depth >= self.classes,
            "classes", f"<= branching^depth = {self.branching ** self.depth}",
            self.classes,
        )
        _require(self.sigma_within >= 0, "sigma_within", ">= 0", self.sigma_within)
        _require(self.sigma_between >= 0, "sigma_between", ">= 0", self.sigma_between)
        _require(0.0 <= self.flip_rate < 1.0, "flip_rate", "in [0, 1)", self.flip_rate)
        _require(
            0.0 < self.val_fraction <= 1.0,
            "val_fraction", "in (0, 1]", self.val_fraction,
        )
        _require(self.seed >= 0, "seed", ">= 0", self.seed)
        _require(self.bench_seeds >= 1, "bench_seeds", ">= 1", self.bench_seeds)
        for spec in (self.graph_sources,) + tuple(self.bench_graphs):
            parse_graph_spec(spec)
        if self.graph_coefficients:
            parts = parse_graph_spec(self.graph_sources)
            _require(
                len(self.graph_coefficients) == len(parts),
                "graph_coefficients", f"{len(parts)} values for '{self.graph_sources}'",
                list(self.graph_coefficients),
            )
        for a in self.bench_alphas:
            _require(a > 0, "bench_alphas", "> 0", a)
        for b in self.bench_betas:
            _require(b > 0, "bench_betas", "> 0", b)

    # -- derived sub-configs -------------------------------------------------

    def synth_config(self, seed: int | None = None) -> SynthConfig:
        return SynthConfig(
            classes=self.classes,
            dim=self.dim,
            n_per_class=self.n_per_class,
            branching=self.branching,
            depth=self.depth,
            sigma_within=self.sigma_within,
            sigma_between=self.sigma_between,
            flip_rate=self.flip_rate,
            seed=self.seed if seed is None else seed,
            val_fraction=self.val_fraction,
        )

    def train_config(self, seed: int, warmup: bool = False) -> TrainConfig:
        epochs = self.epochs
        if warmup:
            epochs = max(1, round(self.warmup_fraction * self.epochs))
        return TrainConfig(
            learning_rate=self.learning_rate,
            lr_decay_factor=self.lr_decay_factor,
            lr_decay_at=self.lr_decay_at,
            epochs=epochs,
            batch_size=self.batch_size,
            seed=seed,
            smoothing=False if warmup else self.smoothing,
            smoothing_lambda=self.smoothing_lambda,
            smoothing_topk=self.smoothing_topk,
        )


def _require(ok: bool, key: str, constraint: str, value) -> None:
    if not ok:
        raise ConfigError(f"config key '{key}' must be {constraint}, got {value!r}")


def parse_graph_spec(spec: str) -> list[str]:
    """Split a graph spec like 'CD+HW' into its validated parts."""
    parts = [p.strip().upper() for p in spec.split("+")]
    if not parts or any(not p for p in parts):
        raise ConfigError(f"config key 'graph_sources' has an empty part in '{spec}'")
    for p in parts:
        if p not in GRAPH_PART_SOURCES:
            raise ConfigError(
                f"config key 'graph_sources' must combine {GRAPH_PART_SOURCES}, "
                f"got '{p}' in '{spec}'"
            )
    if len(set(parts)) != len(parts):
        raise ConfigError(f"config key 'graph_sources' repeats a part in '{spec}'")
    return parts


# ---------------------------------------------------------------------------
# parsing and rendering


def _parse_bool(key, raw):
    low = raw.lower()
    if low in ("true", "on", "yes", "1"):
        return True
    if low in ("false", "off", "no", "0"):
        return False
    raise ConfigError(f"config key '{key}' must be a boolean, got '{raw}'")


def _parse_int(key, raw):
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"config key '{key}' must be an integer, got '{raw}'") from None


def _parse_float(key, raw):
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"config key '{key}' must be a number, got '{raw}'") from None


def _parse_float_list(key, raw):
    if not raw.strip():
        return ()
    return tuple(_parse_float(key, part.strip()) for part in raw.split(","))


def _parse_topk(key, raw):
    if raw.strip().lower() == "auto":
        return None
    return _parse_int(key, raw)


def _parse_weight_strategy(key, raw):
    try:
        return WeightStrategy(raw.strip())
    except ValueError:
        valid = [s.value for s in WeightStrategy]
        raise ConfigError(f"config key '{key}' must be one of {valid}, got '{raw}'") from None


def _parse_proto_strategy(key, raw):
    try:
        return PrototypeStrategy(raw.strip())
    except ValueError:
        valid = [s.value for s in PrototypeStrategy]
        raise ConfigError(f"config key '{key}' must be one of {valid}, got '{raw}'") from None


def _parse_str_list(key, raw):
    return tuple(p.strip() for p in raw.split(",") if p.strip())


def _parse_weight_strategy_list(key, raw):
    return tuple(_parse_weight_strategy(key, p) for p in raw.split(","))


def _parse_proto_strategy_list(key, raw):
    return tuple(_parse_proto_strategy(key, p) for p in raw.split(","))


_PARSERS = {
    "normalize_features": _parse_bool,
    "graph_sources": lambda k, r: r.strip(),
    "graph_coefficients": _parse_float_list,
    "embed_dim": _parse_int,
    "temperature": _parse_float,
    "gamma": _parse_float,
    "epsilon": _parse_float,
    "prototype_topk": _parse_topk,
    "refresh_rounds": _parse_int,
    "prototype_strategy": _parse_proto_strategy,
    "strategy": _parse_weight_strategy,
    "alpha": _parse_float,
    "beta": _parse_float,
    "smoothing": _parse_bool,
    "smoothing_lambda": _parse_float,
    "smoothing_topk": _parse_int,
    "learning_rate": _parse_float,
    "lr_decay_factor": _parse_float,
    "lr_decay_at": _parse_float_list,
    "epochs": _parse_int,
    "batch_size": _parse_int,
    "warmup_fraction": _parse_float,
    "classes": _parse_int,
    "dim": _parse_int,
    "n_per_class": _parse_int,
    "branching": _parse_int,
    "depth": _parse_int,
    "sigma_within": _parse_float,
    "sigma_between": _parse_float,
    "flip_rate": _parse_float,
    "val_fraction": _parse_float,
    "seed": _parse_int,
    "reproducible": _parse_bool,
    "bench_seeds": _parse_int,
    "bench_strategies": _parse_weight_strategy_list,
    "bench_graphs": _parse_str_list,
    "bench_prototype_strategies": _parse_proto_strategy_list,
    "bench_alphas": _parse_float_list,
    "bench_betas": _parse_float_list,
}


def parse_config(path) -> PipelineConfig:
    """Read a `key = value` config file; missing keys take the defaults."""
    path = Path(path)
    values = {}
    for ln, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}: line {ln}: expected 'key = value'")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError(f"{path}: line {ln}: unknown key '{key}'")
        if key in values:
            raise ConfigError(f"{path}: line {ln}: duplicate key '{key}'")
        values[key] = _PARSERS[key](key, raw)
    return PipelineConfig(**values)


def _render_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "auto"
    if isinstance(value, tuple):
        return ",".join(_render_value(v) for v in value)
    if isinstance(value, (WeightStrategy, PrototypeStrategy)):
        return value.value
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_config(cfg: PipelineConfig) -> str:
    """Canonical `key = value` rendering of the fully resolved config."""
    lines = [f"{f.name} = {_render_value(getattr(cfg, f.name))}" for f in fields(cfg)]
    return "\n".join(lines)


def config_header(cfg: PipelineConfig, keys) -> list[str]:
    """`key=value` fragments for artifact headers, restricted to ``keys``."""
    return [f"{k}={_render_value(getattr(cfg, k))}" for k in keys]


def with_seed(cfg: PipelineConfig, seed: int) -> PipelineConfig:
    return replace(cfg, seed=seed)
