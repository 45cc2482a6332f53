"""Pipeline configuration: a single JSON document with a `preset` field that
expands to defaults, deep-merged with any explicit overrides.

Presets bundle the experiment protocols: `single-task` (one task, one run),
`k-sweep` (cluster-count sweep including the single-skill variant),
`multitask` (multi-task vs per-task skill discovery plus the frozen-skill
transfer run), and `modality-ablation` (fused vs single-view vs
proprioception-only segmentation).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .clustering import ClusterConfig
from .errors import ConfigError
from .hbc import HbcConfig
from .hierarchy import SegConfig
from .representation import ReprConfig

PRESETS = ("single-task", "k-sweep", "multitask", "modality-ablation")
STAGES = (
    "gen-demos",
    "repr",
    "segment",
    "cluster",
    "train-skills",
    "train-meta",
    "rollout",
    "eval",
)


@dataclass
class EnvSettings:
    specs: list[str] = field(default_factory=lambda: ["kitchen"])
    demos_per_spec: int = 40
    noise_scale: float = 0.005


@dataclass
class EvalSettings:
    trials: int = 100
    seeds: int = 5
    max_steps: int = 350
    noise_scale: float = 0.005


@dataclass
class RunSpec:
    """One sub-experiment sharing the generated demo pool.

    `skill_specs` feed the unsupervised stages (representation, hierarchy,
    clustering); `policy_specs` restrict which trajectories may train skill
    policies (the transfer protocol freezes skills to a demo subset); each
    meta controller trains on `metas[name]` and is evaluated on
    `eval_specs[name]`.
    """

    name: str
    skill_specs: list[str]
    policy_specs: list[str]
    metas: dict[str, list[str]]
    eval_specs: dict[str, list[str]]
    max_clusters: int = 6
    modalities: list[str] | None = None
    segmentation_only: bool = False


@dataclass
class PipelineConfig:
    preset: str = "single-task"
    demo_dir: str = "demos"
    artifact_dir: str = "artifacts"
    seed: int = 0
    env: EnvSettings = field(default_factory=EnvSettings)
    repr: ReprConfig = field(default_factory=ReprConfig)
    seg: SegConfig = field(default_factory=SegConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    hbc: HbcConfig = field(default_factory=HbcConfig)
    eval: EvalSettings = field(default_factory=EvalSettings)
    runs: list[RunSpec] = field(default_factory=list)


_MULTI_FAMILIES = ("task1", "task2", "task3")


def _variants(family: str, variants: tuple[int, ...] = (1, 2, 3)) -> list[str]:
    return [f"{family}:v{v}" for v in variants]


def preset_config(preset: str, seed: int = 0) -> PipelineConfig:
    """Defaults for a named preset. Segmentation windows are sized to the toy
    demos (stages run a few tens of steps); every value can be overridden.
    """
    if preset not in PRESETS:
        raise ConfigError("preset", f"unknown preset {preset!r}; choose from {PRESETS}")
    cfg = PipelineConfig(preset=preset, seed=seed)
    cfg.seg = SegConfig(leaf_window=10, min_segment_len=15, min_frontier=7)
    cfg.repr = ReprConfig(epochs=120)
    cfg.cluster = ClusterConfig(max_clusters=6, min_avg_skill_len=12)
    cfg.hbc = HbcConfig(epochs=600)

    if preset == "single-task":
        cfg.env = EnvSettings(specs=["kitchen"], demos_per_spec=40)
        cfg.runs = [
            RunSpec(
                name="main",
                skill_specs=["kitchen"],
                policy_specs=["kitchen"],
                metas={"kitchen": ["kitchen"]},
                eval_specs={"kitchen": ["kitchen"]},
                max_clusters=6,
            )
        ]
    elif preset == "k-sweep":
        cfg.env = EnvSettings(specs=["kitchen"], demos_per_spec=40)
        cfg.runs = [
            RunSpec(
                name=f"k{k}",
                skill_specs=["kitchen"],
                policy_specs=["kitchen"],
                metas={"kitchen": ["kitchen"]},
                eval_specs={"kitchen": ["kitchen"]},
                max_clusters=k,
            )
            for k in (1, 3, 6, 9)
        ]
    elif preset == "multitask":
        all_specs = [s for fam in _MULTI_FAMILIES for s in _variants(fam)]
        train_specs = [s for fam in _MULTI_FAMILIES for s in _variants(fam, (1, 2))]
        cfg.env = EnvSettings(specs=all_specs, demos_per_spec=15)
        cfg.cluster = ClusterConfig(max_clusters=8, min_avg_skill_len=12)
        runs = [
            RunSpec(
                name="multi",
                skill_specs=all_specs,
                policy_specs=all_specs,
                metas={fam: _variants(fam) for fam in _MULTI_FAMILIES},
                eval_specs={fam: _variants(fam) for fam in _MULTI_FAMILIES},
                max_clusters=8,
            )
        ]
        for fam in _MULTI_FAMILIES:
            runs.append(
                RunSpec(
                    name=f"single-{fam}",
                    skill_specs=_variants(fam),
                    policy_specs=_variants(fam),
                    metas={fam: _variants(fam)},
                    eval_specs={fam: _variants(fam)},
                    max_clusters=8,
                )
            )
        runs.append(
            RunSpec(
                name="test",
                skill_specs=all_specs,
                policy_specs=train_specs,
                metas={fam: _variants(fam, (3,)) for fam in _MULTI_FAMILIES},
                eval_specs={fam: _variants(fam, (3,)) for fam in _MULTI_FAMILIES},
                max_clusters=8,
            )
        )
        cfg.runs = runs
    elif preset == "modality-ablation":
        cfg.env = EnvSettings(specs=["kitchen"], demos_per_spec=40)
        for name, mods in (
            ("fused", None),
            ("view", ["view_b"]),
            ("proprio", ["proprio"]),
        ):
            cfg.runs.append(
                RunSpec(
                    name=name,
                    skill_specs=["kitchen"],
                    policy_specs=["kitchen"],
                    metas={},
                    eval_specs={},
                    max_clusters=6,
                    modalities=mods,
                    segmentation_only=True,
                )
            )
    return cfg


_SECTION_TYPES = {
    "env": EnvSettings,
    "repr": ReprConfig,
    "seg": SegConfig,
    "cluster": ClusterConfig,
    "hbc": HbcConfig,
    "eval": EvalSettings,
}


def _apply_section(obj, section: str, overrides: dict) -> None:
    cls = _SECTION_TYPES[section]
    current = getattr(obj, section)
    fields = {f: getattr(current, f) for f in current.__dataclass_fields__}
    for key, value in overrides.items():
        if key not in fields:
            raise ConfigError(f"{section}.{key}", "unknown field")
        expected = type(fields[key])
        if expected in (int, float) and isinstance(value, (int, float)):
            value = expected(value)
        if key == "policy_hidden" or isinstance(fields[key], tuple):
            value = tuple(value)
        fields[key] = value
    setattr(obj, section, cls(**fields))


def load_config(path: str | Path) -> PipelineConfig:
    """Read a config JSON, expand its preset, and apply overrides.

    Relative demo/artifact paths resolve against the config file's directory.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError("config", f"no such file: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config", "top level must be an object")

    preset = raw.get("preset", "single-task")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed", "must be an integer")
    cfg = preset_config(preset, seed)

    for key, value in raw.items():
        if key in ("preset", "seed"):
            continue
        elif key in ("demo_dir", "artifact_dir"):
            if not isinstance(value, str):
                raise ConfigError(key, "must be a string path")
            setattr(cfg, key, str((path.parent / value)))
        elif key in _SECTION_TYPES:
            if not isinstance(value, dict):
                raise ConfigError(key, "must be an object")
            _apply_section(cfg, key, value)
        else:
            raise ConfigError(key, "unknown field")
    validate_config(cfg)
    return cfg


def validate_config(cfg: PipelineConfig) -> None:
    """Range checks mirroring the per-module invariants."""
    def need(cond: bool, fieldpath: str, message: str) -> None:
        if not cond:
            raise ConfigError(fieldpath, message)

    need(cfg.env.demos_per_spec >= 1, "env.demos_per_spec", "must be >= 1")
    need(cfg.env.noise_scale >= 0, "env.noise_scale", "must be >= 0")
    need(cfg.repr.latent_dim >= 1, "repr.latent_dim", "must be >= 1")
    need(cfg.repr.learning_rate > 0, "repr.learning_rate", "must be > 0")
    need(cfg.repr.kl_weight >= 0, "repr.kl_weight", "must be >= 0")
    need(cfg.seg.leaf_window >= 1, "seg.leaf_window", "must be >= 1")
    need(
        cfg.seg.min_segment_len >= cfg.seg.leaf_window,
        "seg.min_segment_len",
        "must be >= leaf_window",
    )
    need(cfg.seg.min_frontier >= 1, "seg.min_frontier", "must be >= 1")
    need(cfg.cluster.max_clusters >= 1, "cluster.max_clusters", "must be >= 1")
    need(cfg.cluster.mid_keyframes >= 1, "cluster.mid_keyframes", "must be >= 1")
    need(cfg.hbc.subgoal_dim >= 1, "hbc.subgoal_dim", "must be >= 1")
    need(cfg.hbc.lookahead >= 1, "hbc.lookahead", "must be >= 1")
    need(cfg.hbc.meta_period >= 1, "hbc.meta_period", "must be >= 1")
    need(cfg.hbc.latent_dim >= 0, "hbc.latent_dim", "must be >= 0")
    need(cfg.eval.trials >= 1, "eval.trials", "must be >= 1")
    need(cfg.eval.seeds >= 1, "eval.seeds", "must be >= 1")
    need(cfg.eval.max_steps >= 1, "eval.max_steps", "must be >= 1")
    for run in cfg.runs:
        need(run.max_clusters >= 1, f"runs.{run.name}.max_clusters", "must be >= 1")


def config_to_json(cfg: PipelineConfig) -> str:
    return json.dumps(asdict(cfg), indent=2, sort_keys=True)
