"""History replay: drive the workspace through ordered snapshots plus a
clone log, and detect pending change propagations."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import asset_ops
from .asset_ops import _model_of
from .assets import Asset
from .errors import CorruptState, IoFailure, NotFound, VplatError
from .sync import CloneLogEntry, ChangeSet, apply_change_set, diff_snapshots, scan
from .workspace import OperatorApplication, Workspace


@dataclass(frozen=True)
class HistoryStep:
    index: int
    snapshot_dir: Path
    timestamp: Optional[str] = None


@dataclass
class ReplayResult:
    workspace: Workspace
    applications: list[OperatorApplication]
    # (step index, source path, target path) for every detected candidate
    propagation_reports: list[tuple[int, str, str]] = field(default_factory=list)


def read_history_manifest(path: Path) -> list[HistoryStep]:
    """``history.tsv``: ``index<TAB>snapshotDir`` rows; relative snapshot
    directories resolve against the manifest's directory."""
    path = Path(path)
    if not path.is_file():
        raise IoFailure(f"history manifest not found: {path}")
    steps: list[HistoryStep] = []
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) < 2:
            raise CorruptState(f"{path}:{n}: expected index<TAB>snapshotDir")
        try:
            index = int(parts[0])
        except ValueError as exc:
            raise CorruptState(f"{path}:{n}: bad step index {parts[0]!r}") from exc
        snapshot = Path(parts[1])
        if not snapshot.is_absolute():
            snapshot = path.parent / snapshot
        steps.append(HistoryStep(index, snapshot,
                                 parts[2] if len(parts) > 2 else None))
    if not steps:
        raise CorruptState(f"{path}: empty history manifest")
    indices = [s.index for s in steps]
    if indices != sorted(indices) or len(set(indices)) != len(indices):
        raise CorruptState(f"{path}: step indices must be strictly increasing")
    return steps


def read_clone_log(path: Path) -> list[CloneLogEntry]:
    """``clones.tsv``: feature, sourceRepo, targetRepo, sourceRef, targetRef."""
    path = Path(path)
    if not path.is_file():
        raise IoFailure(f"clone log not found: {path}")
    entries: list[CloneLogEntry] = []
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise CorruptState(f"{path}:{n}: expected 5 tab-separated columns")
        entries.append(CloneLogEntry(*parts))
    return entries


def _entries_for_step(clone_log: list[CloneLogEntry],
                      step: HistoryStep) -> list[CloneLogEntry]:
    refs = {str(step.index), step.snapshot_dir.name}
    return [e for e in clone_log if e.target_ref in refs]


def replay(steps: list[HistoryStep], clone_log: list[CloneLogEntry] = (),
           apply_propagations: bool = False) -> ReplayResult:
    """Scan the baseline snapshot, then per step: diff, apply the derived
    operators and the step's clone-log entries, and detect propagations.
    Deterministic; operator errors abort at the offending step."""
    if not steps:
        raise CorruptState("replay needs at least one history step")
    clone_log = list(clone_log)
    result_reports: list[tuple[int, str, str]] = []

    first = steps[0]
    try:
        ws = scan(first.snapshot_dir)
        apply_change_set(ws, ChangeSet([]), _entries_for_step(clone_log, first))
    except VplatError as exc:
        raise type(exc)(f"step {first.index}: {exc}") from exc
    _detect_step(ws, first.index, result_reports, apply_propagations)

    for step in steps[1:]:
        try:
            cs = diff_snapshots(ws, step.snapshot_dir)
            apply_change_set(ws, cs, _entries_for_step(clone_log, step))
        except VplatError as exc:
            raise type(exc)(f"step {step.index}: {exc}") from exc
        _detect_step(ws, step.index, result_reports, apply_propagations)

    return ReplayResult(ws, list(ws.log), result_reports)


def _detect_step(ws: Workspace, index: int,
                 reports: list[tuple[int, str, str]],
                 apply_propagations: bool) -> None:
    candidates = detect_propagations(ws)
    for source, target in candidates:
        reports.append((index, ws.tree.path_of(source), ws.tree.path_of(target)))
    if apply_propagations:
        for source, target in candidates:
            asset_ops.propagate_asset(ws, source, target, derived=True)


def detect_propagations(ws: Workspace) -> list[tuple[Asset, Asset]]:
    """Source-ahead clone pairs whose target is mapped to a feature cloned
    from the source's repository; reported, never auto-applied here."""
    latest: dict[tuple[int, int], object] = {}
    for trace in ws.traces.asset_traces:
        key = (min(trace.source_id, trace.clone_id),
               max(trace.source_id, trace.clone_id))
        prev = latest.get(key)
        if prev is None or trace.seq > prev.seq:  # type: ignore[attr-defined]
            latest[key] = trace

    out: list[tuple[Asset, Asset]] = []
    for trace in latest.values():
        source = ws.asset_by_id(trace.source_id)  # type: ignore[attr-defined]
        target = ws.asset_by_id(trace.clone_id)  # type: ignore[attr-defined]
        if source is None or target is None:
            continue
        if source.version <= trace.version_at:  # type: ignore[attr-defined]
            continue
        if _target_feature_cloned_from_source_scope(ws, source, target):
            out.append((source, target))
    out.sort(key=lambda pair: (ws.tree.path_of(pair[0]), ws.tree.path_of(pair[1])))
    return out


def _target_feature_cloned_from_source_scope(ws: Workspace, source: Asset,
                                             target: Asset) -> bool:
    try:
        tgt_fm = ws.tree.ancestor_feature_model(target)
    except VplatError:
        return False
    for name in target.mapped_features():
        feature = tgt_fm.find(name)
        if feature is None or feature.id is None:
            continue
        for ftrace in ws.traces.feature_traces:
            if ftrace.clone_id != feature.id:
                continue
            origin = ws.feature_by_id(ftrace.source_id)
            if origin is None:
                continue
            try:
                origin_fm = _model_of(ws, origin)
                owner = ws.tree.feature_model_owner(origin_fm)
            except NotFound:
                continue
            if source is owner or source.is_descendant_of(owner):
                return True
    return False
