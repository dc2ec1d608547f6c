"""TOML problem configuration: parsing, validation and serialization."""

from __future__ import annotations

import re
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import tomli_w

from pilepinn.domain import COORDINATE_SYSTEMS
from pilepinn.errors import ConfigurationError, PilePinnError
from pilepinn.mechanics import ElasticMaterial
from pilepinn.problem import PileProblem
from pilepinn.trainer import InversionParam, PinnSetup, TrainConfig

MODES = ("forward", "inverse", "oracle")
BUNDLED_DIR = Path(__file__).with_name("configs")


class ConfigError(ConfigurationError):
    """Invalid configuration; ``line`` is 1-based when known."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        where = ""
        if path:
            where = f"{path}:{line}: " if line else f"{path}: "
        super().__init__(where + message)
        self.path = path
        self.line = line


@dataclass(frozen=True)
class GeometryConfig:
    width: float
    depth: float
    pile_diameter: float | None = None
    pile_length: float | None = None
    layer_thicknesses: tuple[float, ...] = ()


@dataclass(frozen=True)
class MaterialConfig:
    E: float
    nu: float
    trainable: bool = False
    initial: float | None = None


@dataclass(frozen=True)
class LoadConfig:
    rule: str = "pile_head"
    Q: float | None = None
    pressure: float | None = None


@dataclass(frozen=True)
class NetworkConfig:
    hidden_layers: int = 4
    width: int = 20
    activation: str = "tanh"
    shared: bool = False
    normalize_inputs: bool = True


@dataclass(frozen=True)
class SamplingConfig:
    points_per_region: int = 3000
    boundary_fraction: float = 0.5
    seed: int = 0
    interface_cluster: float = 0.0


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 0.003
    epochs: int = 1000
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    ntk_period: int = 100
    ntk_estimator: str = "gradient"
    lr_decay: float = 1.0
    lr_decay_every: int = 1000
    term_weights: dict[str, float] | None = None


@dataclass(frozen=True)
class DataConfig:
    """Observed profile file, or a synthetic one from the reference solver."""

    path: str | None = None
    synthetic: bool = False
    points: int = 2000
    resolution: int = 32


@dataclass(frozen=True)
class OutputConfig:
    grid: tuple[int, int] = (41, 41)
    vtk: bool = False
    oracle_resolution: int = 32
    profile_points: int = 2000


@dataclass(frozen=True)
class ProblemConfig:
    mode: str
    coordinate_system: str
    geometry: GeometryConfig
    materials: dict[str, MaterialConfig]
    load: LoadConfig
    network: NetworkConfig = field(default_factory=NetworkConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    data: DataConfig | None = None
    output: OutputConfig = field(default_factory=OutputConfig)

    # -- derived objects ---------------------------------------------------
    def region_names(self) -> list[str]:
        g = self.geometry
        n_soil = max(1, len(g.layer_thicknesses))
        names = ["P"] if g.pile_diameter is not None else []
        return names + [f"S{k + 1}" for k in range(n_soil)]

    def unknowns(self) -> list[InversionParam]:
        return [InversionParam(name, m.initial, m.E) for name, m in self.materials.items()
                if m.trainable]

    def problem(self) -> PileProblem:
        g = self.geometry
        mats = {n: ElasticMaterial(m.E, m.nu, m.trainable) for n, m in self.materials.items()}
        if g.pile_diameter is not None:
            soils = [mats[f"S{k + 1}"] for k in range(max(1, len(g.layer_thicknesses)))]
            return PileProblem.pile(self.coordinate_system, g.pile_diameter, g.pile_length,
                                    g.width, g.depth, mats["P"], soils, self.load.Q,
                                    g.layer_thicknesses)
        layers = list(g.layer_thicknesses) or [g.depth]
        return PileProblem.column(self.coordinate_system, g.width,
                                  [(t, mats[f"S{k + 1}"]) for k, t in enumerate(layers)],
                                  self.load.pressure)

    def setup(self) -> PinnSetup:
        n, s = self.network, self.sampling
        return PinnSetup(hidden=(n.width,) * n.hidden_layers,
                         points_per_region=s.points_per_region,
                         boundary_fraction=s.boundary_fraction, sampling_seed=s.seed,
                         shared=n.shared, normalize_inputs=n.normalize_inputs,
                         interface_cluster=s.interface_cluster)

    def train_config(self) -> TrainConfig:
        t = self.training
        return TrainConfig(learning_rate=t.learning_rate, epochs=t.epochs, seed=t.seed,
                           beta1=t.beta1, beta2=t.beta2, epsilon=t.epsilon,
                           ntk_period=t.ntk_period, ntk_estimator=t.ntk_estimator,
                           lr_decay=t.lr_decay, lr_decay_every=t.lr_decay_every,
                           term_weights=t.term_weights,
                           mode="inverse" if self.mode == "inverse" else "forward")

    def to_dict(self) -> dict[str, Any]:
        out = {"mode": self.mode, "coordinate_system": self.coordinate_system}
        for name in ("geometry", "load", "network", "sampling", "training", "data", "output"):
            value = getattr(self, name)
            if value is not None:
                out[name] = _prune(asdict(value))
        out["materials"] = {n: _prune(asdict(m)) for n, m in self.materials.items()}
        return out


def _prune(d: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items() if v is not None}


# ---------------------------------------------------------------------------

def _key_line(text: str, section: str | None, key: str | None) -> int | None:
    """Line of ``key`` inside ``[section]`` (or of the section header)."""
    if not text:
        return None
    current = None
    header_line = None
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        m = re.match(r"^\[\s*([^\]]+?)\s*\]$", line)
        if m:
            current = m.group(1).replace('"', "").replace(" ", "")
            if current == section:
                header_line = i
            continue
        if key and current == section and re.match(rf"^\"?{re.escape(key)}\"?\s*=", line):
            return i
    return header_line


def _build(cls, raw: Any, section: str, ctx) -> Any:
    if not isinstance(raw, dict):
        raise ctx.error(f"[{section}] must be a table", section, None)
    known = {f.name: f for f in fields(cls)}
    for key in raw:
        if key not in known:
            raise ctx.error(f"unknown key {section}.{key}", section, key)
    kwargs = {}
    for key, value in raw.items():
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        missing = re.findall(r"'(\w+)'", str(exc))
        raise ctx.error(f"[{section}] is missing {', '.join(missing) or 'required keys'}",
                        section, None) from exc


class _Context:
    def __init__(self, text: str, path: str | None):
        self.text, self.path = text, path

    def error(self, message, section=None, key=None) -> ConfigError:
        return ConfigError(message, self.path, _key_line(self.text, section, key))


def _number(ctx, section, key, value, positive=True, integer=False, allow_none=False):
    if value is None and allow_none:
        return
    ok = isinstance(value, int) if integer else isinstance(value, (int, float))
    if isinstance(value, bool) or not ok:
        kind = "an integer" if integer else "a number"
        raise ctx.error(f"{section}.{key} must be {kind}, got {value!r}", section, key)
    if positive and not value > 0:
        raise ctx.error(f"{section}.{key} must be positive, got {value!r}", section, key)


def config_from_dict(raw: dict[str, Any], text: str = "", path: str | None = None) -> ProblemConfig:
    ctx = _Context(text, path)
    for key in raw:
        if key not in {f.name for f in fields(ProblemConfig)}:
            raise ctx.error(f"unknown top-level key {key!r}", None, key)
    mode = raw.get("mode")
    if mode not in MODES:
        raise ctx.error(f"mode must be one of {MODES}, got {mode!r}", None, "mode")
    cs = raw.get("coordinate_system")
    if cs not in COORDINATE_SYSTEMS:
        raise ctx.error(f"coordinate_system must be one of {COORDINATE_SYSTEMS}, got {cs!r}",
                        None, "coordinate_system")
    for block in ("geometry", "materials", "load"):
        if block not in raw:
            raise ctx.error(f"missing [{block}] block")

    geometry = _build(GeometryConfig, raw["geometry"], "geometry", ctx)
    for key in ("width", "depth"):
        _number(ctx, "geometry", key, getattr(geometry, key))
    for key in ("pile_diameter", "pile_length"):
        _number(ctx, "geometry", key, getattr(geometry, key), allow_none=True)
    if (geometry.pile_diameter is None) != (geometry.pile_length is None):
        raise ctx.error("pile_diameter and pile_length must be given together", "geometry", None)
    for t in geometry.layer_thicknesses:
        _number(ctx, "geometry", "layer_thicknesses", t)
    if geometry.layer_thicknesses and abs(sum(geometry.layer_thicknesses) - geometry.depth) > 1e-9 * geometry.depth:
        raise ctx.error("layer thicknesses must add up to the depth", "geometry", "layer_thicknesses")

    if not isinstance(raw["materials"], dict):
        raise ctx.error("[materials] must contain one table per region", "materials", None)
    materials = {}
    for name, m in raw["materials"].items():
        section = f"materials.{name}"
        mc = _build(MaterialConfig, m, section, ctx)
        _number(ctx, section, "E", mc.E)
        _number(ctx, section, "nu", mc.nu, positive=False)
        if not 0.0 <= mc.nu < 0.5:
            raise ctx.error(f"{section}.nu: Poisson's ratio must lie in [0, 0.5), got {mc.nu}",
                            section, "nu")
        _number(ctx, section, "initial", mc.initial, allow_none=True)
        materials[name] = mc

    load = _build(LoadConfig, raw["load"], "load", ctx)
    if load.rule == "pile_head":
        _number(ctx, "load", "Q", load.Q, positive=False)
        if geometry.pile_diameter is None:
            raise ctx.error("pile_head loading needs pile_diameter and pile_length", "load", "rule")
    elif load.rule == "surface":
        _number(ctx, "load", "pressure", load.pressure, positive=False)
    else:
        raise ctx.error(f"load.rule must be pile_head or surface, got {load.rule!r}", "load", "rule")

    network = _build(NetworkConfig, raw.get("network", {}), "network", ctx)
    _number(ctx, "network", "hidden_layers", network.hidden_layers, integer=True)
    _number(ctx, "network", "width", network.width, integer=True)
    if network.activation != "tanh":
        raise ctx.error(f"network.activation must be tanh, got {network.activation!r}",
                        "network", "activation")
    sampling = _build(SamplingConfig, raw.get("sampling", {}), "sampling", ctx)
    _number(ctx, "sampling", "points_per_region", sampling.points_per_region, integer=True)
    _number(ctx, "sampling", "seed", sampling.seed, positive=False, integer=True)
    if not 0.0 <= sampling.boundary_fraction <= 1.0:
        raise ctx.error("sampling.boundary_fraction must lie in [0, 1]", "sampling", "boundary_fraction")
    training = _build(TrainingConfig, raw.get("training", {}), "training", ctx)
    _number(ctx, "training", "learning_rate", training.learning_rate)
    _number(ctx, "training", "epochs", training.epochs, integer=True)
    _number(ctx, "training", "seed", training.seed, positive=False, integer=True)
    _number(ctx, "training", "ntk_period", training.ntk_period, positive=False, integer=True)
    _number(ctx, "training", "lr_decay", training.lr_decay)
    _number(ctx, "training", "lr_decay_every", training.lr_decay_every, integer=True)
    if training.lr_decay > 1:
        raise ctx.error(f"training.lr_decay must not exceed 1, got {training.lr_decay!r}",
                        "training", "lr_decay")
    if training.term_weights is not None and not isinstance(training.term_weights, dict):
        raise ctx.error("training.term_weights must be a table", "training", "term_weights")
    for name, w in (training.term_weights or {}).items():
        _number(ctx, "training.term_weights", name, w)
    data = _build(DataConfig, raw["data"], "data", ctx) if "data" in raw else None
    output = _build(OutputConfig, raw.get("output", {}), "output", ctx)
    if len(output.grid) != 2 or any(not isinstance(n, int) or n < 2 for n in output.grid):
        raise ctx.error("output.grid must be two integers >= 2", "output", "grid")

    cfg = ProblemConfig(mode, cs, geometry, materials, load, network, sampling, training, data, output)
    expected = cfg.region_names()
    if sorted(materials) != sorted(expected):
        raise ctx.error(f"materials must define exactly the regions {expected},"
                        f" got {sorted(materials)}", "materials", None)
    trainable = [n for n, m in materials.items() if m.trainable]
    if mode == "inverse":
        if not trainable:
            raise ctx.error("inverse mode needs at least one trainable material", "materials", None)
        if data is None or (data.path is None and not data.synthetic):
            raise ctx.error("inverse mode needs a [data] block with a path or synthetic = true",
                            "data", None)
        if "P" not in expected:
            raise ctx.error("inverse mode needs a pile (the data lie on its centerline)",
                            "geometry", None)
    elif trainable:
        raise ctx.error(f"trainable materials {trainable} are only allowed in inverse mode",
                        f"materials.{trainable[0]}", "trainable")
    try:
        cfg.problem()
        cfg.setup()
        cfg.train_config()
    except PilePinnError as exc:
        raise ctx.error(str(exc)) from exc
    return cfg


def parse_config(text: str, path: str | None = None) -> ProblemConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"syntax error: {exc}", path, int(m.group(1)) if m else None) from exc
    return config_from_dict(raw, text, path)


def load_config(path: str | Path) -> ProblemConfig:
    """Read a config file; a bare bundled name such as ``axisym_eta50`` also works."""
    p = Path(path)
    if not p.exists():
        bundled = BUNDLED_DIR / f"{p.name}.toml"
        if p.suffix == "" and bundled.exists():
            p = bundled
        else:
            raise ConfigError(f"no such config file: {path}")
    return parse_config(p.read_text(encoding="utf-8"), str(p))


def dump_config(cfg: ProblemConfig) -> str:
    return tomli_w.dumps(cfg.to_dict())


def bundled_configs() -> list[str]:
    return sorted(p.stem for p in BUNDLED_DIR.glob("*.toml"))
