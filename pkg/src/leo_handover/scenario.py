"""Scenario configuration, run manifests and the experiment matrix.

Configs are YAML with a strict schema: every key must be known, omitted keys
take defaults (each one logged), and any violation names the offending key
and, when available, its line in the file.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import yaml

from . import __version__, metrics
from .agents import HEURISTICS, LEARNED, POLICIES
from .agents.controllers import DeepConfig, QLearningConfig, make_controller
from .agents.training import evaluate, save_training, train, write_curve
from .env import EpisodeGeometry, HandoverEnv, RewardParams, build_geometry
from .link import LinkBudgetParams
from .mobility import DESTINATIONS, LARGE_BOX, SMALL_BOX, UserType, spawn_users
from .orbits import ConstellationArrays, ConstellationSpec, GeodeticPoint, generate_walker, load_elements_file

log = logging.getLogger(__name__)

DATA_DIR = Path(__file__).with_name("data")
SCENARIOS = ("s1", "s2")
_TYPES = ("aircraft", "evtol", "uav", "ground")


class ConfigError(ValueError):
    """Invalid configuration; the message names the key and line where known."""


# ---------------------------------------------------------------------------
# Schema
# ---------------------------------------------------------------------------

@dataclass
class ConstellationConfig:
    num_planes: int = 12
    sats_per_plane: int = 49
    altitude: float = 1200.0  # km
    inclination: float = 87.9  # deg
    raan_spread: float = 180.0  # deg
    phase_offset: float = 0.0  # fraction of the in-plane spacing per plane
    raan_origin: float = 0.0  # deg
    elements_file: Optional[str] = None  # CSV of explicit elements; overrides the Walker fields

    def validate(self):
        ConstellationSpec(**self._spec_kwargs())

    def _spec_kwargs(self):
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "elements_file"}


@dataclass
class Destination:
    lat: float
    lon: float
    share: float


def _default_destinations():
    return {name: Destination(p.latitude, p.longitude, share) for name, (p, share) in DESTINATIONS.items()}


@dataclass
class UsersConfig:
    counts: dict = field(default_factory=lambda: {"aircraft": 10, "evtol": 10, "uav": 10, "ground": 50})
    small_box: list = field(default_factory=lambda: list(SMALL_BOX))  # lat_min, lat_max, lon_min, lon_max
    large_box: list = field(default_factory=lambda: list(LARGE_BOX))
    speeds: dict = field(default_factory=lambda: {"aircraft": 900.0, "evtol": 240.0, "uav": 80.0, "ground": 0.0})
    altitudes: dict = field(default_factory=lambda: {"aircraft": 10.0, "evtol": 1.0, "uav": 0.15, "ground": 0.0})
    destinations: dict = field(default_factory=_default_destinations)

    def validate(self):
        for name in ("counts", "speeds", "altitudes"):
            d = getattr(self, name)
            if set(d) != set(_TYPES):
                raise ConfigError(f"users.{name}: need exactly the keys {list(_TYPES)}")
        if any(int(v) < 0 for v in self.counts.values()) or sum(self.counts.values()) == 0:
            raise ConfigError("users.counts: counts must be >= 0 with at least one user")
        for name in ("small_box", "large_box"):
            box = getattr(self, name)
            if len(box) != 4 or not (box[0] <= box[1] and box[2] <= box[3]):
                raise ConfigError(f"users.{name}: expected [lat_min, lat_max, lon_min, lon_max]")
        if not self.destinations:
            raise ConfigError("users.destinations: at least one destination is required")
        total = sum(d.share for d in self.destinations.values())
        if not np.isclose(total, 1.0):
            raise ConfigError(f"users.destinations: shares sum to {total}, expected 1")

    def type_map(self, d: dict) -> dict:
        return {UserType[k.upper()]: float(v) for k, v in d.items()}


@dataclass
class LinkConfig:
    carrier_frequency: float = 18.5  # GHz
    bandwidth: float = 250.0  # MHz
    eirp: float = 73.1  # dBm
    gt_over_T: dict = field(default_factory=lambda: {"aircraft": 15.0, "evtol": 15.0, "uav": 14.2,
                                                      "ground": 15.4})
    polarization_isolation: float = 12.0  # dB
    noise_temperature_range: list = field(default_factory=lambda: [213.15, 273.15])  # K
    perturb_gt: bool = True  # shift G/T by 10 log10(290 / T_noise)
    elevation_threshold: float = 15.0  # deg

    def validate(self):
        if set(self.gt_over_T) != set(_TYPES):
            raise ConfigError(f"link.gt_over_T: need exactly the keys {list(_TYPES)}")
        self.params(0.0)

    def params(self, cinr_threshold: float) -> LinkBudgetParams:
        try:
            return LinkBudgetParams(
                carrier_frequency=self.carrier_frequency, bandwidth=self.bandwidth, eirp=self.eirp,
                gt_over_T={int(UserType[k.upper()]): float(v) for k, v in self.gt_over_T.items()},
                polarization_isolation=self.polarization_isolation,
                noise_temperature_range=tuple(self.noise_temperature_range), perturb_gt=self.perturb_gt,
                elevation_threshold=self.elevation_threshold, cinr_threshold=cinr_threshold)
        except ValueError as exc:
            raise ConfigError(f"link: {exc}") from None


@dataclass
class RewardConfig:
    beta: float = 1.0
    w1: float = 1.0 / 3.0  # remaining visible time
    w2: float = 1.0 / 3.0  # CINR
    w3: float = 1.0 / 3.0  # idle channels
    capacity: int = 8  # channels per satellite (L)
    cinr_threshold: float = 0.0  # dB
    cinr_max: float = 30.0  # dB, CINR normalisation scale
    normalize: bool = True

    def validate(self):
        self.params()

    def params(self) -> RewardParams:
        try:
            return RewardParams(**dataclasses.asdict(self))
        except ValueError as exc:
            raise ConfigError(f"reward: {exc}") from None


@dataclass
class UtilityConfig:
    w1: float = 1.0 / 3.0  # per handover
    w2: float = 1.0 / 3.0  # mean normalised CINR
    w3: float = 1.0 / 3.0  # per blocked section

    def validate(self):
        if not all(np.isfinite([self.w1, self.w2, self.w3])):
            raise ConfigError("utility: weights must be finite")


@dataclass
class TimeConfig:
    section_length: float = 10.0  # s
    episode_length: float = 900.0  # s
    start_time: float = 0.0  # s after the constellation epoch

    def validate(self):
        if self.section_length <= 0 or self.episode_length <= 0:
            raise ConfigError("time: section_length and episode_length must be > 0")
        ratio = self.episode_length / self.section_length
        if not np.isclose(ratio, round(ratio)):
            raise ConfigError("time.section_length: must divide episode_length")

    @property
    def sections(self) -> int:
        return int(round(self.episode_length / self.section_length))


@dataclass
class TrainingConfig:
    episodes: int = 100
    checkpoint_every: int = 0
    deep: DeepConfig = field(default_factory=DeepConfig)
    qlearning: QLearningConfig = field(default_factory=QLearningConfig)

    def validate(self):
        if self.episodes < 0:
            raise ConfigError("training.episodes: must be >= 0")
        d = self.deep
        if not 0.0 < d.gamma < 1.0:
            raise ConfigError("training.deep.gamma: must lie in (0, 1)")
        if not 0.0 < d.tau <= 1.0:
            raise ConfigError("training.deep.tau: must lie in (0, 1]")
        if d.init_alpha <= 0:
            raise ConfigError("training.deep.init_alpha: must be > 0")
        if min(d.lr_q, d.lr_pi, d.lr_alpha) <= 0:
            raise ConfigError("training.deep: learning rates must be > 0")
        if d.batch_size < 1 or d.buffer_size < 1 or d.gradient_steps < 0:
            raise ConfigError("training.deep: batch_size/buffer_size must be >= 1")
        if d.arch not in ("shared", "dense"):
            raise ConfigError("training.deep.arch: expected 'shared' or 'dense'")
        q = self.qlearning
        if not 0.0 <= q.gamma < 1.0:
            raise ConfigError("training.qlearning.gamma: must lie in [0, 1)")
        if not 0.0 < q.lr <= 1.0:
            raise ConfigError("training.qlearning.lr: must lie in (0, 1]")


@dataclass
class ScenarioConfig:
    constellation: ConstellationConfig = field(default_factory=ConstellationConfig)
    users: UsersConfig = field(default_factory=UsersConfig)
    link: LinkConfig = field(default_factory=LinkConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    utility: UtilityConfig = field(default_factory=UtilityConfig)
    time: TimeConfig = field(default_factory=TimeConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    policy: str = "nash-sac"
    scenario: str = "s2"  # s1: flying vehicles admitted first, s2: no priority
    seeds: list = field(default_factory=lambda: [1])

    def validate(self) -> "ScenarioConfig":
        for f in fields(self):
            v = getattr(self, f.name)
            if hasattr(v, "validate"):
                try:
                    v.validate()
                except ConfigError:
                    raise
                except ValueError as exc:
                    raise ConfigError(f"{f.name}: {exc}") from None
        if self.policy not in POLICIES:
            raise ConfigError(f"policy: unknown policy {self.policy!r}; choose from {list(POLICIES)}")
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario: expected one of {list(SCENARIOS)}")
        if not self.seeds or any(not isinstance(s, int) or s < 0 for s in self.seeds):
            raise ConfigError("seeds: expected a non-empty list of non-negative integers")
        return self

    def with_overrides(self, **kw) -> "ScenarioConfig":
        """Copy with top-level fields or dotted paths (``reward.capacity``) replaced."""
        data = to_dict(self)
        for key, value in kw.items():
            node = data
            parts = key.split(".")
            for p in parts[:-1]:
                node = node[p]
            if parts[-1] not in node:
                raise ConfigError(f"unknown key {key!r}")
            node[parts[-1]] = value
        return from_dict(data)


# ---------------------------------------------------------------------------
# (De)serialisation
# ---------------------------------------------------------------------------

def _plain(v):
    if is_dataclass(v):
        return {f.name: _plain(getattr(v, f.name)) for f in fields(v)}
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


def to_dict(cfg: ScenarioConfig) -> dict:
    return _plain(cfg)


def dump_config(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=True)


def config_hash(cfg: ScenarioConfig) -> str:
    """SHA-256 of the canonical JSON form; independent of key order in the source file."""
    blob = json.dumps(to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _where(lines, path):
    line = lines.get(path)
    return f" (line {line})" if line else ""


def _coerce(value, default, path, lines):
    """Check a leaf against the type of its default."""
    name = ".".join(path)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name}: expected true/false{_where(lines, path)}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name}: expected an integer{_where(lines, path)}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name}: expected a number{_where(lines, path)}")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{name}: expected a list{_where(lines, path)}")
        return tuple(value)
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{name}: expected a list{_where(lines, path)}")
        return [float(x) if isinstance(x, (int, float)) and default and isinstance(default[0], float) else x
                for x in value]
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{name}: expected a string{_where(lines, path)}")
        return value
    return value


def _build(cls, data, path: tuple, lines: dict, log_defaults: bool):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{'.'.join(path) or 'config'}: expected a mapping{_where(lines, path)}")
    defaults = cls()
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            where = ".".join(path + (str(key),))
            raise ConfigError(f"unknown key {where!r}{_where(lines, path + (str(key),))}")
    kwargs = {}
    for f in fields(cls):
        p = path + (f.name,)
        default = getattr(defaults, f.name)
        if f.name not in data:
            if log_defaults:
                log.info("config default %s = %r", ".".join(p), _plain(default))
            kwargs[f.name] = default
            continue
        value = data[f.name]
        if is_dataclass(default):
            kwargs[f.name] = _build(type(default), value, p, lines, log_defaults)
        elif f.name == "destinations":
            if not isinstance(value, dict):
                raise ConfigError(f"{'.'.join(p)}: expected a mapping{_where(lines, p)}")
            kwargs[f.name] = {str(k): _build_destination(v, p + (str(k),), lines) for k, v in value.items()}
        elif isinstance(default, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{'.'.join(p)}: expected a mapping{_where(lines, p)}")
            merged = dict(default)
            for k, v in value.items():
                if k not in default:
                    raise ConfigError(f"unknown key {'.'.join(p + (str(k),))!r}{_where(lines, p + (str(k),))}")
                merged[k] = _coerce(v, default[k], p + (str(k),), lines)
            kwargs[f.name] = merged
        elif default is None:
            if value is not None and not isinstance(value, (str, int, float)):
                raise ConfigError(f"{'.'.join(p)}: expected a scalar{_where(lines, p)}")
            kwargs[f.name] = value
        else:
            kwargs[f.name] = _coerce(value, default, p, lines)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{'.'.join(path) or 'config'}: {exc}{_where(lines, path)}") from None


def _build_destination(value, path, lines):
    if not isinstance(value, dict) or set(value) != {"lat", "lon", "share"}:
        raise ConfigError(f"{'.'.join(path)}: expected a mapping with lat, lon, share{_where(lines, path)}")
    return Destination(*(float(_coerce(value[k], 0.0, path + (k,), lines)) for k in ("lat", "lon", "share")))


def _compose_lines(text: str) -> tuple[Any, dict]:
    """Parse YAML, also returning ``{key path: 1-based line}`` for every mapping key."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line = f"line {mark.line + 1}: " if mark else ""
        raise ConfigError(f"malformed config: {line}{exc.problem or exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    lines: dict = {}

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                p = path + (str(k.value),)
                lines[p] = k.start_mark.line + 1
                walk(v, p)

    if root is not None:
        walk(root, ())
    return data, lines


def from_dict(data, lines: Optional[dict] = None, log_defaults: bool = False) -> ScenarioConfig:
    return _build(ScenarioConfig, data, (), lines or {}, log_defaults).validate()


def loads_config(text: str, log_defaults: bool = True) -> ScenarioConfig:
    data, lines = _compose_lines(text)
    return from_dict(data, lines, log_defaults)


def resolve_config_path(name) -> Path:
    """A path on disk, or the name of a shipped config (``default``, ``desk``)."""
    p = Path(name)
    if p.exists():
        return p
    builtin = DATA_DIR / f"{name}.yaml"
    if builtin.exists():
        return builtin
    raise FileNotFoundError(f"config not found: {name}")


def load_config(path, log_defaults: bool = True) -> ScenarioConfig:
    p = resolve_config_path(path)
    try:
        return loads_config(p.read_text(encoding="utf-8"), log_defaults)
    except ConfigError as exc:
        raise ConfigError(f"{p}: {exc}") from None


# ---------------------------------------------------------------------------
# Building a run
# ---------------------------------------------------------------------------

def build_constellation(cfg: ConstellationConfig) -> ConstellationArrays:
    if cfg.elements_file:
        return ConstellationArrays.from_states(load_elements_file(cfg.elements_file))
    return ConstellationArrays.from_states(generate_walker(ConstellationSpec(**cfg._spec_kwargs())))


def build_users(cfg: ScenarioConfig, seed: int):
    u = cfg.users
    return spawn_users(
        seed, {UserType[k.upper()]: int(v) for k, v in u.counts.items()},
        small_box=tuple(u.small_box), large_box=tuple(u.large_box),
        destinations={n: (GeodeticPoint(d.lat, d.lon), d.share) for n, d in u.destinations.items()},
        speeds=u.type_map(u.speeds), altitudes=u.type_map(u.altitudes),
        gt_over_T=u.type_map(cfg.link.gt_over_T), noise_temperature_range=tuple(cfg.link.noise_temperature_range),
        perturb_gt=cfg.link.perturb_gt)


def build_geometry_for(cfg: ScenarioConfig, seed: int) -> EpisodeGeometry:
    link = cfg.link.params(cfg.reward.cinr_threshold)
    return build_geometry(build_constellation(cfg.constellation), build_users(cfg, seed), link,
                          cfg.time.section_length, cfg.time.sections, cfg.time.start_time)


def build_env(cfg: ScenarioConfig, seed: int, geometry: Optional[EpisodeGeometry] = None) -> HandoverEnv:
    geo = geometry if geometry is not None else build_geometry_for(cfg, seed)
    return HandoverEnv(geo, cfg.reward.params(), fv_priority=cfg.scenario == "s1")


# ---------------------------------------------------------------------------
# Runs and the experiment matrix
# ---------------------------------------------------------------------------

@dataclass
class RunManifest:
    run_id: str
    config_hash: str
    policy: str
    seed: int
    L: int
    scenario: str
    version: str
    outputs: dict

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True, indent=2) + "\n"


@dataclass
class MatrixResult:
    manifests: list
    failures: list  # (run_id, policy, seed, L, scenario, message)
    rows: list

    @property
    def ok(self) -> bool:
        return not self.failures


def run_config(policy: str, L: int, scenario: str, seed: int, base: ScenarioConfig) -> ScenarioConfig:
    return base.with_overrides(policy=policy, scenario=scenario, seeds=[int(seed)], **{"reward.capacity": int(L)})


def execute_run(cfg: ScenarioConfig, out_root, geometry: Optional[EpisodeGeometry] = None) -> RunManifest:
    """Train (if needed) and evaluate one single-seed configuration; write all outputs."""
    seed = cfg.seeds[0]
    h = config_hash(cfg)
    run_id = h[:12]
    run_dir = Path(out_root) / "runs" / run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    env = build_env(cfg, seed, geometry)
    episodes = cfg.training.episodes
    ctrl = make_controller(cfg.policy, env, seed, episodes, deep=cfg.training.deep, qcfg=cfg.training.qlearning)
    outputs = {"config": "config.yaml", "trace": "trace.csv", "metrics": "metrics.csv", "cdf": "cdf.csv",
               "handovers": "handovers.csv"}
    (run_dir / "config.yaml").write_text(dump_config(cfg))
    if ctrl.learns:
        rows = train(lambda ep: env, ctrl, episodes, checkpoint_dir=run_dir / "checkpoint",
                     checkpoint_every=cfg.training.checkpoint_every)
        write_curve(rows, run_dir / "curve.csv")
        if episodes == 0:
            save_training(run_dir / "checkpoint", ctrl, 0, rows)
        outputs["curve"] = "curve.csv"
        outputs["checkpoint"] = "checkpoint"
    trace = evaluate(env, ctrl)
    with open(run_dir / "trace.csv", "w", newline="") as fh:
        trace.write_csv(fh)
    u = cfg.utility
    m = metrics.EpisodeMetrics.from_trace(trace, cfg.reward.capacity, u.w1, u.w2, u.w3, cfg.reward.cinr_max)
    if m.blocking != env.blocking:
        raise RuntimeError(f"blocking recount {m.blocking} != environment {env.blocking}")
    metrics.write_metrics_csv([m.row(run_id, cfg.policy, seed, cfg.reward.capacity, cfg.scenario)],
                              run_dir / "metrics.csv")
    metrics.write_cdf_csv(cfg.scenario, m.cinr_by_type, run_dir / "cdf.csv")
    with open(run_dir / "handovers.csv", "w") as fh:
        fh.write("t,cumulative_avg_handovers\n")
        for i, v in enumerate(m.cumulative_handovers):
            fh.write(f"{i * cfg.time.section_length:g},{v:.12g}\n")
    if hasattr(ctrl, "nonconverged"):
        (run_dir / "nash.json").write_text(json.dumps({"nonconverged_sections": ctrl.nonconverged}) + "\n")
        outputs["nash"] = "nash.json"
    manifest = RunManifest(run_id, h, cfg.policy, seed, cfg.reward.capacity, cfg.scenario, __version__, outputs)
    (run_dir / "manifest.json").write_text(manifest.to_json())
    return manifest


def _safe_run(args):
    cfg, out_root = args
    try:
        return execute_run(cfg, out_root), None
    except Exception as exc:  # a failed run must not stop the matrix
        log.debug("run failed:\n%s", traceback.format_exc())
        return None, f"{type(exc).__name__}: {exc}"


def matrix_configs(base: ScenarioConfig, policies: Sequence[str], L_values: Sequence[int],
                   scenarios: Sequence[str], seeds: Sequence[int]) -> list:
    return [run_config(p, L, s, seed, base) for p in policies for L in L_values for s in scenarios for seed in seeds]


def run_matrix(base: ScenarioConfig, policies: Sequence[str], L_values: Sequence[int], scenarios: Sequence[str],
               seeds: Sequence[int], out_root, workers: int = 1) -> MatrixResult:
    """Run the Cartesian product; one failing run is recorded and the rest continue."""
    for p in policies:
        if p not in POLICIES:
            raise ConfigError(f"unknown policy {p!r}")
    for s in scenarios:
        if s not in SCENARIOS:
            raise ConfigError(f"unknown scenario {s!r}")
    cfgs = matrix_configs(base, policies, L_values, scenarios, seeds)
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    jobs = [(c, out_root) for c in cfgs]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_safe_run, jobs))
    else:
        results = [_safe_run(j) for j in jobs]
    manifests, failures, rows = [], [], []
    for cfg, (man, err) in zip(cfgs, results):
        if err is not None:
            failures.append((config_hash(cfg)[:12], cfg.policy, cfg.seeds[0], cfg.reward.capacity, cfg.scenario, err))
            continue
        manifests.append(man)
        rows.extend(metrics.read_metrics_csv(out_root / "runs" / man.run_id / "metrics.csv"))
    metrics.write_metrics_csv(rows, out_root / "summary.csv")
    if failures:
        with open(out_root / "failures.txt", "w") as fh:
            for f in failures:
                fh.write("\t".join(str(x) for x in f) + "\n")
    return MatrixResult(manifests, failures, rows)
