"""Workspace state: the asset tree plus traces and the operator log,
persisted deterministically under ``<root>/.vp/``."""

from __future__ import annotations

import contextlib
import copy
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional

from . import pc as pc_mod
from .assets import Asset, AssetKind, AssetTree, containable
from .errors import CorruptState, LockHeld, VplatError
from .features import Feature, FeatureModel, GroupKind, UNASSIGNED_NAME
from .traces import Trace, TraceDatabase

STATE_DIR = ".vp"
FORMAT_VERSION = 1


@dataclass
class OperatorApplication:
    """One high-level operator invocation, as recorded in the log."""

    operator: str
    args: list[str]
    result_version: int
    derived: bool = False
    late: bool = False


class Workspace:
    """Single-writer container binding an asset tree to a directory."""

    def __init__(self, root_dir: Optional[Path] = None) -> None:
        self.root_dir = Path(root_dir) if root_dir is not None else None
        self.tree = AssetTree()
        self.traces = TraceDatabase()
        self.log: list[OperatorApplication] = []
        self.file_hashes: dict[str, str] = {}
        self._op_depth = 0

    # -- operator bookkeeping -------------------------------------------

    @contextlib.contextmanager
    def nested_operator(self) -> Iterator[bool]:
        """Yields True for a top-level application; recursive invocations
        inside an operator neither bump versions nor log."""
        top = self._op_depth == 0
        self._op_depth += 1
        try:
            yield top
        finally:
            self._op_depth -= 1

    def record(self, operator: str, args: list[str], result_version: int,
               derived: bool = False) -> OperatorApplication:
        app = OperatorApplication(operator, list(args), result_version, derived)
        self.log.append(app)
        return app

    @contextlib.contextmanager
    def atomic(self) -> Iterator[None]:
        """Roll the workspace back if the body raises an operator error.

        Only the outermost frame snapshots; nested operators rely on it.
        Callers holding direct object references must re-resolve them after
        a failure.
        """
        if self._op_depth > 0:
            yield
            return
        snapshot = copy.deepcopy((self.tree, self.traces, self.log,
                                  self.file_hashes))
        try:
            yield
        except VplatError:
            self.tree, self.traces, self.log, self.file_hashes = snapshot
            raise

    # -- queries over traces ----------------------------------------------

    def asset_by_id(self, asset_id: int) -> Optional[Asset]:
        asset = self.tree.assets_by_id.get(asset_id)
        if asset is not None and self.tree.in_tree(asset):
            return asset
        return None

    def feature_by_id(self, feature_id: int) -> Optional[Feature]:
        return self.tree.features_by_id.get(feature_id)

    def asset_clones(self, source: Asset) -> list[Asset]:
        """Live direct clones of an asset; removed clones are dropped."""
        out = []
        for cid in self.traces.asset_clone_ids(source.id):
            clone = self.asset_by_id(cid)
            if clone is not None:
                out.append(clone)
        return out


# -- persistence ----------------------------------------------------------

_KIND_BY_VALUE = {k.value: k for k in AssetKind}
_GROUP_BY_VALUE = {g.value: g for g in GroupKind}


def _j(value) -> str:
    return json.dumps(value, ensure_ascii=True)


def _tsv(rows: list[list[str]]) -> str:
    return "".join("\t".join(row) + "\n" for row in rows)


def save(ws: Workspace, state_dir: Optional[Path] = None) -> Path:
    """Write the full workspace state; byte-identical for equal states."""
    if state_dir is None:
        if ws.root_dir is None:
            raise ValueError("workspace has no root directory to save into")
        state_dir = ws.root_dir / STATE_DIR
    state_dir = Path(state_dir)
    state_dir.mkdir(parents=True, exist_ok=True)

    tree = ws.tree
    meta = [
        ["format", str(FORMAT_VERSION)],
        ["global_version", str(tree.global_version)],
        ["next_asset_id", str(tree._next_asset_id)],
        ["next_feature_id", str(tree._next_feature_id)],
        ["next_trace_seq", str(ws.traces._next_seq)],
    ]

    asset_rows = []
    pc_rows = []
    feature_rows = []
    for asset in sorted(tree.walk(), key=lambda a: a.id):
        parent = "" if asset.parent is None else str(asset.parent.id)
        ordinal = "0" if asset.parent is None else str(
            asset.parent.sub_assets.index(asset))
        asset_rows.append([str(asset.id), parent, ordinal, asset.kind.value,
                           str(asset.version), _j(asset.name), _j(asset.content)])
        if asset.pc != pc_mod.TRUE:
            pc_rows.append([str(asset.id), pc_mod.to_text(asset.pc)])
        if asset.feature_model is not None:
            for f in asset.feature_model.features():
                assert f.id is not None
                fparent = "" if f.parent is None else str(f.parent.id)
                ford = "0" if f.parent is None else str(
                    f.parent.sub_features.index(f))
                feature_rows.append([
                    str(f.id), str(asset.id), fparent, ford, str(f.version),
                    "1" if f.optional else "0", "1" if f.incomplete else "0",
                    f.group_kind.value, _j(f.name),
                ])
    feature_rows.sort(key=lambda r: int(r[0]))

    trace_rows = [[str(t.seq), str(t.source_id), str(t.clone_id), str(t.version_at)]
                  for t in sorted(ws.traces.asset_traces, key=lambda t: t.seq)]
    ftrace_rows = [[str(t.seq), str(t.source_id), str(t.clone_id), str(t.version_at)]
                   for t in sorted(ws.traces.feature_traces, key=lambda t: t.seq)]
    log_rows = [[str(i), app.operator, str(app.result_version),
                 "1" if app.derived else "0", "1" if app.late else "0",
                 _j(app.args)]
                for i, app in enumerate(ws.log)]
    file_rows = [[_j(path), digest]
                 for path, digest in sorted(ws.file_hashes.items())]

    for name, rows in [("meta", meta), ("assets.tsv", asset_rows),
                       ("features.tsv", feature_rows), ("pcs.tsv", pc_rows),
                       ("traces.tsv", trace_rows), ("ftraces.tsv", ftrace_rows),
                       ("log.tsv", log_rows), ("files.tsv", file_rows)]:
        (state_dir / name).write_text(_tsv(rows), encoding="utf-8", newline="\n")
    return state_dir


def _read_rows(path: Path, columns: int, file: str) -> list[list[str]]:
    if not path.exists():
        raise CorruptState(f"missing state file {file}")
    rows = []
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        parts = line.split("\t")
        if len(parts) != columns:
            raise CorruptState(f"{file}:{n}: expected {columns} columns")
        rows.append(parts)
    return rows


def load(root_dir: Path, state_dir: Optional[Path] = None) -> Workspace:
    """Reconstruct a workspace; any schema or invariant violation raises
    CorruptState."""
    root_dir = Path(root_dir)
    state_dir = Path(state_dir) if state_dir is not None else root_dir / STATE_DIR
    try:
        meta = dict((k, v) for k, v in _read_rows(state_dir / "meta", 2, "meta"))
        if meta.get("format") != str(FORMAT_VERSION):
            raise CorruptState(f"unsupported state format {meta.get('format')!r}")

        ws = Workspace(root_dir)
        tree = ws.tree
        tree.assets_by_id.clear()
        tree.features_by_id.clear()

        assets: dict[int, Asset] = {}
        parents: dict[int, tuple[Optional[int], int]] = {}
        root_id: Optional[int] = None
        for row in _read_rows(state_dir / "assets.tsv", 7, "assets.tsv"):
            aid = int(row[0])
            if aid in assets:
                raise CorruptState(f"duplicate asset id {aid}")
            kind = _KIND_BY_VALUE.get(row[3])
            if kind is None:
                raise CorruptState(f"unknown asset kind {row[3]!r}")
            asset = Asset(aid, json.loads(row[5]), kind, json.loads(row[6]))
            asset.version = int(row[4])
            assets[aid] = asset
            parents[aid] = (int(row[1]) if row[1] else None, int(row[2]))
            if row[1] == "":
                if kind is not AssetKind.VP_ROOT or root_id is not None:
                    raise CorruptState("workspace must have exactly one VpRoot root")
                root_id = aid
        if root_id is None:
            raise CorruptState("no VpRoot asset")

        by_parent: dict[int, list[tuple[int, Asset]]] = {}
        for aid, (pid, ordinal) in parents.items():
            if pid is None:
                continue
            if pid not in assets:
                raise CorruptState(f"asset {aid} references missing parent {pid}")
            by_parent.setdefault(pid, []).append((ordinal, assets[aid]))
        tree.root = assets[root_id]
        for pid, children in by_parent.items():
            parent = assets[pid]
            children.sort(key=lambda t: t[0])
            if [o for o, _ in children] != list(range(len(children))):
                raise CorruptState(f"bad sibling ordinals under asset {pid}")
            for _, child in children:
                if not containable(child.kind, parent.kind):
                    raise CorruptState(
                        f"{child.kind.value} not containable in {parent.kind.value}")
                if parent.child(child.name) is not None:
                    raise CorruptState(f"duplicate sibling name {child.name!r}")
                child.parent = parent
                parent.sub_assets.append(child)

        reachable = sum(1 for _ in tree.walk())
        if reachable != len(assets):
            raise CorruptState("asset tree has cycles or orphan branches")
        for asset in assets.values():
            if asset.version > tree.global_version:
                raise CorruptState(
                    f"asset {asset.id} version exceeds the global version")
        tree.assets_by_id.update(assets)

        features: dict[int, Feature] = {}
        frows = _read_rows(state_dir / "features.tsv", 9, "features.tsv")
        fparents: dict[int, tuple[int, Optional[int], int]] = {}
        for row in frows:
            fid = int(row[0])
            if fid in features:
                raise CorruptState(f"duplicate feature id {fid}")
            group = _GROUP_BY_VALUE.get(row[7])
            if group is None:
                raise CorruptState(f"unknown group kind {row[7]!r}")
            f = Feature(json.loads(row[8]), optional=row[5] == "1", group_kind=group)
            f.incomplete = row[6] == "1"
            f.version = int(row[4])
            f.id = fid
            features[fid] = f
            fparents[fid] = (int(row[1]), int(row[2]) if row[2] else None, int(row[3]))
        froots: dict[int, Feature] = {}
        fchildren: dict[int, list[tuple[int, Feature]]] = {}
        for fid, (owner, fpid, ordinal) in fparents.items():
            if fpid is None:
                if owner in froots:
                    raise CorruptState(f"asset {owner} has two feature-model roots")
                froots[owner] = features[fid]
            else:
                if fpid not in features:
                    raise CorruptState(f"feature {fid} references missing parent")
                fchildren.setdefault(fpid, []).append((ordinal, features[fid]))
        for fpid, children in fchildren.items():
            children.sort(key=lambda t: t[0])
            if [o for o, _ in children] != list(range(len(children))):
                raise CorruptState(f"bad feature ordinals under feature {fpid}")
            for _, child in children:
                child.parent = features[fpid]
                features[fpid].sub_features.append(child)
        for owner, froot in froots.items():
            if owner not in assets:
                raise CorruptState(f"feature model owner {owner} missing")
            bucket = None
            for child in froot.sub_features:
                if child.name == UNASSIGNED_NAME:
                    bucket = child
            if bucket is None:
                raise CorruptState(
                    f"feature model {froot.name!r} lacks the UNASSIGNED bucket")
            fm = FeatureModel.__new__(FeatureModel)
            fm.root = froot
            fm.unassigned = bucket
            assets[owner].feature_model = fm
            names = [f.name for f in froot.walk()]
            if len(names) != len(set(names)):
                raise CorruptState(f"duplicate feature names in model {froot.name!r}")
            for f in froot.walk():
                if f.version > froot.version:
                    raise CorruptState("feature version exceeds its model version")
        attached = set()
        for froot in froots.values():
            for f in froot.walk():
                attached.add(f.id)
        if attached != set(features):
            raise CorruptState("feature rows outside any feature model")
        tree.features_by_id.update(features)

        for row in _read_rows(state_dir / "pcs.tsv", 2, "pcs.tsv"):
            aid = int(row[0])
            if aid not in assets:
                raise CorruptState(f"pc row for unknown asset {aid}")
            assets[aid].pc = pc_mod.parse(row[1])

        last_seq = 0
        for name, store in [("traces.tsv", ws.traces.asset_traces),
                            ("ftraces.tsv", ws.traces.feature_traces)]:
            for row in _read_rows(state_dir / name, 4, name):
                store.append(Trace(int(row[1]), int(row[2]), int(row[3]), int(row[0])))
        for store in (ws.traces.asset_traces, ws.traces.feature_traces):
            for prev, cur in zip(store, store[1:]):
                if cur.seq <= prev.seq:
                    raise CorruptState("trace sequence numbers not increasing")
            if store:
                last_seq = max(last_seq, store[-1].seq)

        for row in _read_rows(state_dir / "log.tsv", 6, "log.tsv"):
            ws.log.append(OperatorApplication(
                row[1], json.loads(row[5]), int(row[2]),
                derived=row[3] == "1", late=row[4] == "1"))

        for row in _read_rows(state_dir / "files.tsv", 2, "files.tsv"):
            ws.file_hashes[json.loads(row[0])] = row[1]

        tree._next_asset_id = int(meta["next_asset_id"])
        tree._next_feature_id = int(meta["next_feature_id"])
        ws.traces._next_seq = int(meta["next_trace_seq"])
        if int(meta["global_version"]) != tree.global_version:
            raise CorruptState("meta global_version disagrees with the root asset")
        if tree._next_asset_id <= max(assets):
            raise CorruptState("next_asset_id collides with stored assets")
        if features and tree._next_feature_id <= max(features):
            raise CorruptState("next_feature_id collides with stored features")
        if ws.traces._next_seq <= last_seq:
            raise CorruptState("next_trace_seq collides with stored traces")
        return ws
    except CorruptState:
        raise
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise CorruptState(f"malformed state: {exc}") from exc


# -- advisory single-writer lock -------------------------------------------

@contextlib.contextmanager
def workspace_lock(root_dir: Path) -> Iterator[None]:
    """Exclusive advisory lock; concurrent writers fail fast with LockHeld."""
    state_dir = Path(root_dir) / STATE_DIR
    state_dir.mkdir(parents=True, exist_ok=True)
    lock_path = state_dir / "lock"
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise LockHeld(f"workspace lock is held: {lock_path}") from None
    try:
        os.write(fd, str(os.getpid()).encode("ascii"))
        os.close(fd)
        yield
    finally:
        with contextlib.suppress(FileNotFoundError):
            lock_path.unlink()
