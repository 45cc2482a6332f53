"""Skill discovery from unsegmented multimodal demonstrations and
hierarchical imitation, with a bundled deterministic toy manipulation world.
"""

from .clustering import (
    ClusterConfig,
    SkillDataset,
    SkillPartition,
    build_skill_datasets,
    merge_short_clusters,
    segment_descriptor,
    spectral_cluster,
)
from .data import DemoSet, Modality, Trajectory, load_demoset, save_demoset, validate_demoset
from .hbc import (
    HbcConfig,
    MetaController,
    SkillPolicy,
    hier_act,
    meta_decide,
    skill_act,
    train_meta,
    train_skill,
)
from .hierarchy import MergeTree, SegConfig, TemporalSegment, build_hierarchy, extract_segments, init_leaves
from .metrics import MetricReport, boundary_f1, nmi, success_rate
from .representation import (
    GaussianExpert,
    ReprConfig,
    ReprModel,
    encode,
    grad_check,
    poe_fuse,
    train_repr,
)
from .toyenv import EnvState, RolloutResult, TaskSpec, env_reset, env_step, rollout, scripted_demo, task_specs

__version__ = "0.1.0"
