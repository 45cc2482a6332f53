"""Staged pipeline: demo generation through evaluation, with hermetic
artifact handoff between stages.

Every stage loads its inputs from disk, writes its outputs atomically
(temp + rename), and is deterministic given (inputs, config, seed), so
re-running a stage reproduces its artifacts byte for byte.
"""

from __future__ import annotations

import csv
import io
import json
import os
import shutil
import tempfile
import zlib
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import clustering, hbc, hierarchy, metrics, representation, toyenv
from .config import STAGES, PipelineConfig, RunSpec, validate_config
from .data import DemoSet, load_demoset, save_demoset
from .errors import ConfigError, StageDependencyError
from .hierarchy import TemporalSegment


def _seed_for(master: int, *tags: str) -> int:
    return zlib.crc32(("|".join(tags) + f"|{master}").encode())


def _atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump_json(path: Path, payload) -> None:
    _atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True))


def _require(path: Path) -> Path:
    if not path.exists():
        raise StageDependencyError(path.name)
    return path


def _run_dir(cfg: PipelineConfig, run: RunSpec) -> Path:
    return Path(cfg.artifact_dir) / run.name


def _load_demos(cfg: PipelineConfig) -> DemoSet:
    _require(Path(cfg.demo_dir) / "manifest.json")
    return load_demoset(cfg.demo_dir)


def _run_demos(cfg: PipelineConfig, run: RunSpec, specs: list[str]) -> DemoSet:
    demos = _load_demos(cfg).subset(specs)
    if run.modalities is not None:
        demos = demos.with_modalities(run.modalities)
    return demos


# --- stages -------------------------------------------------------------------


def stage_gen_demos(cfg: PipelineConfig) -> None:
    specs = toyenv.task_specs()
    for spec_id in cfg.env.specs:
        if spec_id not in specs:
            raise ConfigError("env.specs", f"unknown task spec {spec_id!r}")
    trajectories = []
    for spec_id in cfg.env.specs:
        spec = specs[spec_id]
        for i in range(cfg.env.demos_per_spec):
            demo_seed = _seed_for(cfg.seed, "demo", spec_id, str(i))
            trajectories.append(
                toyenv.scripted_demo(
                    spec, demo_seed, cfg.env.noise_scale, traj_id=f"{spec_id}-{i:03d}"
                )
            )
    demos = DemoSet(
        modalities=toyenv.make_modalities(),
        action_dim=3,
        tasks=list(cfg.env.specs),
        trajectories=trajectories,
    )
    target = Path(cfg.demo_dir)
    tmp = target.with_name(target.name + ".tmp")
    if tmp.exists():
        shutil.rmtree(tmp)
    save_demoset(demos, tmp)
    if target.exists():
        shutil.rmtree(target)
    os.replace(tmp, target)


def stage_repr(cfg: PipelineConfig) -> None:
    for run in cfg.runs:
        demos = _run_demos(cfg, run, run.skill_specs)
        rcfg = replace(cfg.repr, seed=_seed_for(cfg.seed, "repr", run.name))
        model = representation.train_repr(demos, rcfg)
        representation.save_repr(model, _run_dir(cfg, run))


def _trajectory_latents(model, demos: DemoSet) -> dict[str, np.ndarray]:
    return {
        t.id: representation.encode(model, {k: v.astype(float) for k, v in t.obs.items()})
        for t in demos.trajectories
    }


def stage_segment(cfg: PipelineConfig) -> None:
    for run in cfg.runs:
        run_dir = _run_dir(cfg, run)
        _require(run_dir / "repr.json")
        demos = _run_demos(cfg, run, run.skill_specs)
        model = representation.load_repr(run_dir)
        latents = _trajectory_latents(model, demos)
        entries = []
        for traj in demos.trajectories:
            tree = hierarchy.build_hierarchy(latents[traj.id], cfg.seg, traj.id)
            for seg in hierarchy.extract_segments(tree, cfg.seg):
                entries.append({"traj_id": seg.traj_id, "start": seg.start, "end": seg.end})
        _dump_json(run_dir / "segments.json", entries)


def _load_segments(run_dir: Path) -> list[TemporalSegment]:
    entries = json.loads(_require(run_dir / "segments.json").read_text())
    return [TemporalSegment(e["traj_id"], e["start"], e["end"]) for e in entries]


def stage_cluster(cfg: PipelineConfig) -> None:
    for run in cfg.runs:
        run_dir = _run_dir(cfg, run)
        segments = _load_segments(run_dir)
        _require(run_dir / "repr.json")
        demos = _run_demos(cfg, run, run.skill_specs)
        model = representation.load_repr(run_dir)
        latents = _trajectory_latents(model, demos)
        descriptors = np.stack(
            [
                clustering.segment_descriptor(
                    seg, latents[seg.traj_id], cfg.cluster.mid_keyframes
                ).vector
                for seg in segments
            ]
        )
        ccfg = replace(
            cfg.cluster,
            max_clusters=run.max_clusters,
            seed=_seed_for(cfg.seed, "cluster", run.name),
        )
        labels = clustering.spectral_cluster(descriptors, run.max_clusters, ccfg)
        partition = clustering.SkillPartition(run.max_clusters, segments, labels)
        partition = clustering.merge_short_clusters(partition, cfg.cluster.min_avg_skill_len)
        payload = {
            "K": partition.num_skills,
            "assignments": [
                {"traj_id": s.traj_id, "start": s.start, "end": s.end, "skill": int(l)}
                for s, l in zip(partition.segments, partition.labels)
            ],
        }
        _dump_json(run_dir / "skills.json", payload)


def _load_partition(run_dir: Path) -> clustering.SkillPartition:
    payload = json.loads(_require(run_dir / "skills.json").read_text())
    segments = [
        TemporalSegment(e["traj_id"], e["start"], e["end"]) for e in payload["assignments"]
    ]
    labels = np.array([e["skill"] for e in payload["assignments"]], dtype=int)
    return clustering.SkillPartition(payload["K"], segments, labels)


def _restrict_partition(
    partition: clustering.SkillPartition, traj_ids: set[str]
) -> clustering.SkillPartition:
    """Keep the same skill ids but drop segments of excluded trajectories."""
    keep = [
        (s, l) for s, l in zip(partition.segments, partition.labels) if s.traj_id in traj_ids
    ]
    segs = [s for s, _ in keep]
    labels = np.array([l for _, l in keep], dtype=int)
    return clustering.SkillPartition(partition.num_skills, segs, labels)


def stage_train_skills(cfg: PipelineConfig) -> None:
    for run in cfg.runs:
        if run.segmentation_only:
            continue
        run_dir = _run_dir(cfg, run)
        partition = _load_partition(run_dir)
        demos = _run_demos(cfg, run, run.policy_specs)
        ids = {t.id for t in demos.trajectories}
        usable = _restrict_partition(partition, ids)
        datasets = clustering.build_skill_datasets(demos, usable, cfg.hbc.lookahead)
        hcfg = replace(cfg.hbc, seed=_seed_for(cfg.seed, "skills", run.name))
        for dataset in datasets:
            if len(dataset):
                policy = hbc.train_skill(dataset, hcfg)
            else:
                # A skill absent from the policy-training split stays at its
                # zero initialization; the transfer protocol tolerates this.
                policy = hbc.init_skill_policy(
                    dataset.skill, demos.obs_dim, demos.action_dim, hcfg
                )
            hbc.save_skill(policy, run_dir)


def _load_skills(run_dir: Path, num_skills: int) -> list[hbc.SkillPolicy]:
    for k in range(num_skills):
        _require(run_dir / f"skill_{k}.json")
    return [hbc.load_skill(run_dir, k) for k in range(num_skills)]


def stage_train_meta(cfg: PipelineConfig) -> None:
    for run in cfg.runs:
        if run.segmentation_only:
            continue
        run_dir = _run_dir(cfg, run)
        partition = _load_partition(run_dir)
        skills = _load_skills(run_dir, partition.num_skills)
        for meta_name, spec_ids in run.metas.items():
            demos = _run_demos(cfg, run, spec_ids)
            ids = {t.id for t in demos.trajectories}
            usable = _restrict_partition(partition, ids)
            hcfg = replace(cfg.hbc, seed=_seed_for(cfg.seed, "meta", run.name, meta_name))
            meta = hbc.train_meta(demos, usable, skills, hcfg, meta_name)
            hbc.save_meta(meta, run_dir)


def stage_rollout(cfg: PipelineConfig) -> None:
    specs = toyenv.task_specs()
    for run in cfg.runs:
        if run.segmentation_only:
            continue
        run_dir = _run_dir(cfg, run)
        partition = _load_partition(run_dir)
        skills = _load_skills(run_dir, partition.num_skills)
        payload: dict = {}
        for meta_name, eval_ids in run.eval_specs.items():
            _require(run_dir / f"meta_{meta_name}.json")
            meta = hbc.load_meta(run_dir, meta_name)
            by_spec: dict[str, dict] = {
                sid: {"seeds": [[] for _ in range(cfg.eval.seeds)], "steps": []}
                for sid in eval_ids
            }
            for s in range(cfg.eval.seeds):
                for trial in range(cfg.eval.trials):
                    sid = eval_ids[trial % len(eval_ids)]
                    roll_seed = _seed_for(cfg.seed, "roll", run.name, meta_name, sid, str(s), str(trial))
                    result = toyenv.rollout(
                        meta,
                        skills,
                        specs[sid],
                        roll_seed,
                        cfg.eval.max_steps,
                        cfg.eval.noise_scale,
                    )
                    by_spec[sid]["seeds"][s].append(bool(result.success))
                    by_spec[sid]["steps"].append(result.steps)
            payload[meta_name] = by_spec
        _dump_json(run_dir / "rollouts.json", payload)


def _segmentation_metrics(cfg: PipelineConfig, run: RunSpec) -> dict:
    run_dir = _run_dir(cfg, run)
    partition = _load_partition(run_dir)
    demos = _load_demos(cfg).subset(run.skill_specs)
    by_spec_nmi = {}
    matched = n_pred = n_ref = 0
    for spec_id in run.skill_specs:
        gt_frames, skill_frames = [], []
        for traj in demos.by_task(spec_id):
            if traj.gt_stage_labels is None:
                continue
            painted = partition.frame_labels(traj.id, traj.length)
            gt_frames.append(traj.gt_stage_labels)
            skill_frames.append(painted)
            pred = metrics.segment_boundaries(
                [s.start for s, _ in partition.by_trajectory()[traj.id]]
            )
            ref = metrics.boundaries_from_labels(traj.gt_stage_labels)
            matched += metrics.match_boundaries(pred, ref, tol=5)
            n_pred += len(pred)
            n_ref += len(ref)
        if gt_frames:
            by_spec_nmi[spec_id] = metrics.nmi(
                np.concatenate(gt_frames), np.concatenate(skill_frames)
            )
    precision = matched / n_pred if n_pred else 0.0
    recall = matched / n_ref if n_ref else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    mean_nmi = float(np.mean(list(by_spec_nmi.values()))) if by_spec_nmi else 0.0
    return {
        "num_skills": partition.num_skills,
        "nmi": mean_nmi,
        "nmi_by_spec": by_spec_nmi,
        "boundary_precision": precision,
        "boundary_recall": recall,
        "boundary_f1": f1,
    }


def stage_eval(cfg: PipelineConfig) -> None:
    out: dict = {"preset": cfg.preset, "runs": {}}
    rows: list[list] = []
    for run in cfg.runs:
        run_dir = _run_dir(cfg, run)
        seg = _segmentation_metrics(cfg, run)
        entry: dict = {"segmentation": seg, "success": {}}
        rows.append([run.name, "nmi", "", "", f"{seg['nmi']:.6f}"])
        rows.append([run.name, "boundary_f1", "", "", f"{seg['boundary_f1']:.6f}"])
        if not run.segmentation_only:
            rollouts = json.loads(_require(run_dir / "rollouts.json").read_text())
            for meta_name, by_spec in sorted(rollouts.items()):
                meta_entry: dict = {}
                pooled: list[bool] = []
                pooled_by_seed: list[list[bool]] = [[] for _ in range(cfg.eval.seeds)]
                for sid, rec in sorted(by_spec.items()):
                    flags = [f for seed_flags in rec["seeds"] for f in seed_flags]
                    per_seed = [
                        float(np.mean(sf)) if sf else 0.0 for sf in rec["seeds"]
                    ]
                    report = metrics.success_rate(flags, per_seed)
                    meta_entry[sid] = {
                        "rate": report.value,
                        "ci95": report.ci95,
                        "trials": report.support,
                        "per_seed": per_seed,
                    }
                    pooled.extend(flags)
                    for s, sf in enumerate(rec["seeds"]):
                        pooled_by_seed[s].extend(sf)
                    rows.append([run.name, "success_rate", meta_name, sid, f"{report.value:.6f}"])
                overall = metrics.success_rate(
                    pooled, [float(np.mean(sf)) if sf else 0.0 for sf in pooled_by_seed]
                )
                meta_entry["overall"] = {
                    "rate": overall.value,
                    "ci95": overall.ci95,
                    "trials": overall.support,
                    "per_seed": overall.per_seed,
                }
                rows.append([run.name, "success_rate", meta_name, "overall", f"{overall.value:.6f}"])
                entry["success"][meta_name] = meta_entry
        out["runs"][run.name] = entry

    _dump_json(Path(cfg.artifact_dir) / "metrics.json", out)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["run", "metric", "meta", "scope", "value"])
    writer.writerows(rows)
    _atomic_write_text(Path(cfg.artifact_dir) / "metrics.csv", buf.getvalue())


_STAGE_FNS = {
    "gen-demos": stage_gen_demos,
    "repr": stage_repr,
    "segment": stage_segment,
    "cluster": stage_cluster,
    "train-skills": stage_train_skills,
    "train-meta": stage_train_meta,
    "rollout": stage_rollout,
    "eval": stage_eval,
}


def run_stage(cfg: PipelineConfig, stage: str) -> None:
    """Execute one stage (or `all` to chain every stage in order)."""
    validate_config(cfg)
    if stage == "all":
        for name in STAGES:
            _STAGE_FNS[name](cfg)
        return
    if stage not in _STAGE_FNS:
        raise ConfigError("stage", f"unknown stage {stage!r}")
    _STAGE_FNS[stage](cfg)
