"""Data model and on-disk format for multimodal demonstration sets.

A demo directory holds one ``manifest.json`` plus one little-endian float32
blob per (trajectory, modality), one per-trajectory action blob, and an
optional int32 stage-label blob. Arrays are row-major with the time axis
leading, so a round trip through disk is bitwise exact.

Stage labels are carried for evaluation only; none of the representation,
segmentation, or policy-learning modules read them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CorruptData, FormatError, IoError

MANIFEST_NAME = "manifest.json"

_F32 = np.dtype("<f4")
_I32 = np.dtype("<i4")


@dataclass(frozen=True)
class Modality:
    """One named observation stream (e.g. a camera view or proprioception)."""

    name: str
    dim: int
    kind: str = "observation"  # or "proprioception"


@dataclass
class Trajectory:
    """One demonstration: per-modality observations, actions, optional labels.

    Observation arrays are (T, dim) float32, actions (T, action_dim) float32,
    and ``gt_stage_labels`` (T,) int32 when present.
    """

    id: str
    task_id: str
    obs: dict[str, np.ndarray]
    actions: np.ndarray
    gt_stage_labels: np.ndarray | None = None

    @property
    def length(self) -> int:
        return int(self.actions.shape[0])

    def stacked_obs(self, order: list[str]) -> np.ndarray:
        """Concatenate modality arrays along the feature axis, in `order`."""
        return np.concatenate([self.obs[name] for name in order], axis=1)


@dataclass
class DemoSet:
    """An immutable collection of demonstrations over a fixed modality set."""

    modalities: list[Modality]
    action_dim: int
    tasks: list[str]
    trajectories: list[Trajectory]

    def modality_order(self) -> list[str]:
        return [m.name for m in self.modalities]

    @property
    def obs_dim(self) -> int:
        return sum(m.dim for m in self.modalities)

    def by_task(self, task_id: str) -> list[Trajectory]:
        return [t for t in self.trajectories if t.task_id == task_id]

    def subset(self, tasks: list[str]) -> "DemoSet":
        """Restrict to the given task ids (order preserved)."""
        keep = [t for t in tasks if t in self.tasks]
        return DemoSet(
            modalities=self.modalities,
            action_dim=self.action_dim,
            tasks=keep,
            trajectories=[t for t in self.trajectories if t.task_id in keep],
        )

    def with_modalities(self, names: list[str]) -> "DemoSet":
        """Keep only the named modalities (used by the modality ablation)."""
        mods = [m for m in self.modalities if m.name in names]
        trajs = [
            Trajectory(
                id=t.id,
                task_id=t.task_id,
                obs={m.name: t.obs[m.name] for m in mods},
                actions=t.actions,
                gt_stage_labels=t.gt_stage_labels,
            )
            for t in self.trajectories
        ]
        return DemoSet(mods, self.action_dim, list(self.tasks), trajs)


@dataclass(frozen=True)
class Finding:
    severity: str  # "error" | "warning"
    where: str
    message: str


@dataclass
class ValidationReport:
    findings: list[Finding] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not any(f.severity == "error" for f in self.findings)

    def errors(self) -> list[Finding]:
        return [f for f in self.findings if f.severity == "error"]


def validate_demoset(demos: DemoSet) -> ValidationReport:
    """Check every type invariant; findings are data, never exceptions."""
    report = ValidationReport()

    def err(where: str, message: str) -> None:
        report.findings.append(Finding("error", where, message))

    def warn(where: str, message: str) -> None:
        report.findings.append(Finding("warning", where, message))

    names = [m.name for m in demos.modalities]
    if len(set(names)) != len(names):
        err("modalities", "duplicate modality names")
    for m in demos.modalities:
        if m.dim < 1:
            err(f"modalities.{m.name}", f"dim must be >= 1, got {m.dim}")
    if demos.action_dim < 1:
        err("action_dim", f"must be >= 1, got {demos.action_dim}")

    seen_ids: set[str] = set()
    for traj in demos.trajectories:
        where = f"trajectory {traj.id}"
        if traj.id in seen_ids:
            err(where, "duplicate trajectory id")
        seen_ids.add(traj.id)
        if traj.task_id not in demos.tasks:
            err(where, f"task_id {traj.task_id!r} not declared in tasks")
        T = traj.length
        if T < 1:
            err(where, "empty trajectory (length 0)")
        for m in demos.modalities:
            arr = traj.obs.get(m.name)
            if arr is None:
                err(where, f"missing modality {m.name!r}")
            elif arr.shape != (T, m.dim):
                err(where, f"modality {m.name!r} has shape {arr.shape}, expected {(T, m.dim)}")
        if traj.actions.shape != (T, demos.action_dim):
            err(where, f"actions have shape {traj.actions.shape}, expected {(T, demos.action_dim)}")
        elif not np.all(np.isfinite(traj.actions)):
            t_bad = int(np.argwhere(~np.isfinite(traj.actions))[0][0])
            err(where, f"non-finite action at ({traj.id}, {t_bad})")
        if traj.gt_stage_labels is None:
            warn(where, "missing gt stage labels")
        else:
            labels = traj.gt_stage_labels
            if labels.shape != (T,):
                err(where, f"labels have shape {labels.shape}, expected {(T,)}")
            elif labels.size and labels.min() < 0:
                err(where, "negative stage label")

    for task in demos.tasks:
        if not any(t.task_id == task for t in demos.trajectories):
            err(f"task {task}", "empty task: no trajectories")

    return report


def _blob_names(traj_id: str, modality: str | None = None) -> str:
    if modality is None:
        return f"{traj_id}.actions.f32"
    return f"{traj_id}.{modality}.f32"


def save_demoset(demos: DemoSet, path: str | Path) -> None:
    """Write the demo directory; `load_demoset` restores it bitwise."""
    root = Path(path)
    try:
        root.mkdir(parents=True, exist_ok=True)
        index = []
        for traj in demos.trajectories:
            entry: dict = {
                "id": traj.id,
                "task_id": traj.task_id,
                "length": traj.length,
                "blobs": {},
                "actions": _blob_names(traj.id),
            }
            for m in demos.modalities:
                fname = _blob_names(traj.id, m.name)
                entry["blobs"][m.name] = fname
                traj.obs[m.name].astype(_F32).tofile(root / fname)
            traj.actions.astype(_F32).tofile(root / entry["actions"])
            if traj.gt_stage_labels is not None:
                fname = f"{traj.id}.labels.i32"
                entry["labels"] = fname
                traj.gt_stage_labels.astype(_I32).tofile(root / fname)
            index.append(entry)
        manifest = {
            "action_dim": demos.action_dim,
            "modalities": [
                {"name": m.name, "dim": m.dim, "kind": m.kind} for m in demos.modalities
            ],
            "tasks": list(demos.tasks),
            "trajectories": index,
        }
        (root / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    except OSError as exc:
        raise IoError(f"cannot write demo set to {root}: {exc}") from exc


def _read_blob(root: Path, fname: str, dtype: np.dtype, shape: tuple[int, ...]) -> np.ndarray:
    blob = root / fname
    if not blob.is_file():
        raise CorruptData(f"missing blob {fname}")
    arr = np.fromfile(blob, dtype=dtype)
    expected = int(np.prod(shape))
    if arr.size != expected:
        raise CorruptData(f"blob {fname} holds {arr.size} values, expected {expected}")
    return arr.reshape(shape)


def load_demoset(path: str | Path) -> DemoSet:
    """Load a demo directory written by `save_demoset`."""
    root = Path(path)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise FormatError(f"missing manifest: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable manifest: {exc}") from exc

    try:
        modalities = [
            Modality(m["name"], int(m["dim"]), m.get("kind", "observation"))
            for m in manifest["modalities"]
        ]
        action_dim = int(manifest["action_dim"])
        tasks = list(manifest["tasks"])
        index = manifest["trajectories"]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"manifest missing field: {exc}") from exc
    if not index:
        raise FormatError("manifest declares no trajectories (at least one required)")

    trajectories = []
    for entry in index:
        T = int(entry["length"])
        obs = {}
        for m in modalities:
            fname = entry["blobs"].get(m.name)
            if fname is None:
                raise FormatError(f"trajectory {entry['id']} lists no blob for {m.name!r}")
            obs[m.name] = _read_blob(root, fname, _F32, (T, m.dim))
        actions = _read_blob(root, entry["actions"], _F32, (T, action_dim))
        labels = None
        if "labels" in entry:
            labels = _read_blob(root, entry["labels"], _I32, (T,))
        trajectories.append(
            Trajectory(entry["id"], entry["task_id"], obs, actions, labels)
        )

    demos = DemoSet(modalities, action_dim, tasks, trajectories)
    report = validate_demoset(demos)
    if not report.ok:
        details = "; ".join(f"{f.where}: {f.message}" for f in report.errors())
        raise FormatError(f"demo set fails validation: {details}")
    return demos
