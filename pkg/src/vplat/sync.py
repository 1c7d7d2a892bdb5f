"""Bind the asset tree to a real directory: initial scan, name-status
diffing between snapshots, and the five-step change-set application."""

from __future__ import annotations

import fnmatch
import hashlib
from dataclasses import dataclass
from pathlib import Path, PurePosixPath
from typing import Optional, Sequence

from . import asset_ops, feature_ops
from . import pc as pc_mod
from .annotations import (
    MappingScope,
    build_file_structure,
    parse_annotations,
    parse_feature_model_file,
    parse_mapping_file,
)
from .assets import Asset, AssetKind
from .errors import IoFailure, NotFound, UnknownFile, UnsupportedChange, VplatError
from .features import Feature, FeatureModel, resolve_feature_path
from .workspace import STATE_DIR, OperatorApplication, Workspace

METADATA_NAMES = {".vp-project", ".vp-folder", ".vp-files"}
IGNORE_FILE = ".vpignore"


@dataclass(frozen=True)
class ChangeEntry:
    status: str  # A, M, D, R
    path: str
    new_path: Optional[str] = None
    content: Optional[str] = None
    digest: Optional[str] = None


@dataclass
class ChangeSet:
    entries: list[ChangeEntry]

    def __bool__(self) -> bool:
        return bool(self.entries)


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _read_ignore(root: Path) -> list[str]:
    ignore = root / IGNORE_FILE
    if not ignore.is_file():
        return []
    return [ln.strip() for ln in ignore.read_text(encoding="utf-8").splitlines()
            if ln.strip() and not ln.strip().startswith("#")]


def _ignored(rel: str, patterns: list[str]) -> bool:
    parts = PurePosixPath(rel).parts
    for pattern in patterns:
        if fnmatch.fnmatch(rel, pattern):
            return True
        if any(fnmatch.fnmatch(part, pattern) for part in parts):
            return True
    return False


def _read_dir(root: Path) -> dict[str, bytes]:
    """All files under root (lexicographic, POSIX relpaths), minus the state
    directory, the ignore file, and .vpignore matches."""
    root = Path(root)
    if not root.is_dir():
        raise IoFailure(f"not a directory: {root}")
    patterns = _read_ignore(root)
    out: dict[str, bytes] = {}

    def visit(directory: Path, rel: str) -> None:
        try:
            entries = sorted(directory.iterdir(), key=lambda p: p.name)
        except OSError as exc:
            raise IoFailure(f"cannot list {directory}: {exc}") from exc
        for entry in entries:
            erel = f"{rel}/{entry.name}" if rel else entry.name
            if entry.name == STATE_DIR or entry.name == IGNORE_FILE:
                continue
            if _ignored(erel, patterns):
                continue
            if entry.is_dir():
                visit(entry, erel)
            elif entry.is_file():
                try:
                    out[erel] = entry.read_bytes()
                except OSError as exc:
                    raise IoFailure(f"cannot read {entry}: {exc}") from exc

    visit(root, "")
    return out


def _decode(path: str, data: bytes) -> str:
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise IoFailure(f"{path}: not valid UTF-8 text") from exc


# -- scan -------------------------------------------------------------------


def scan(root_dir: Path) -> Workspace:
    """Bootstrap a workspace from a directory tree.

    The directory itself becomes the Repository asset; files become File
    assets with annotation-derived blocks; ``.vp-project`` attaches feature
    models, ``.vp-folder``/``.vp-files`` map features. Deterministic.
    """
    root_dir = Path(root_dir)
    if not root_dir.is_dir():
        raise IoFailure(f"workspace root does not exist: {root_dir}")
    ws = Workspace(root_dir)
    files = _read_dir(root_dir)
    ws.file_hashes = {p: _sha256(b) for p, b in files.items()}

    repo = ws.tree.new_asset(root_dir.name or "repo", AssetKind.REPOSITORY)
    asset_ops.add_asset(ws, repo, ws.tree.root, derived=True)
    _scan_dir(ws, files, repo, "")
    return ws


def _dir_listing(files: dict[str, bytes], rel: str
                 ) -> tuple[list[str], list[str]]:
    """(file names, subdir names) directly under ``rel``, sorted."""
    prefix = rel + "/" if rel else ""
    names: set[str] = set()
    dirs: set[str] = set()
    for path in files:
        if not path.startswith(prefix):
            continue
        rest = path[len(prefix):]
        if "/" in rest:
            dirs.add(rest.split("/", 1)[0])
        else:
            names.add(rest)
    return sorted(names), sorted(dirs)


def _scan_dir(ws: Workspace, files: dict[str, bytes], dir_asset: Asset,
              rel: str) -> None:
    prefix = rel + "/" if rel else ""
    names, dirs = _dir_listing(files, rel)

    if ".vp-project" in names:
        text = _decode(prefix + ".vp-project", files[prefix + ".vp-project"])
        fm = parse_feature_model_file(text)
        feature_ops.add_feature_model_to_asset(ws, dir_asset, fm, derived=True)

    for name in names:
        if name in METADATA_NAMES:
            continue
        text = _decode(prefix + name, files[prefix + name])
        file_asset = ws.tree.new_asset(name, AssetKind.FILE, text)
        build_file_structure(ws.tree, file_asset)
        asset_ops.add_asset(ws, file_asset, dir_asset, derived=True)

    if ".vp-folder" in names:
        doc = parse_mapping_file(
            _decode(prefix + ".vp-folder", files[prefix + ".vp-folder"]),
            MappingScope.FOLDER)
        for _, feats in doc.entries:
            for feat in feats:
                asset_ops.map_asset_to_feature(ws, dir_asset, feat, derived=True)

    if ".vp-files" in names:
        doc = parse_mapping_file(
            _decode(prefix + ".vp-files", files[prefix + ".vp-files"]),
            MappingScope.FILES)
        for fname, feats in doc.entries:
            sibling = dir_asset.child(fname)
            if sibling is None:
                raise UnknownFile(f"{prefix}.vp-files maps unknown file {fname!r}")
            for feat in feats:
                asset_ops.map_asset_to_feature(ws, sibling, feat, derived=True)

    for name in dirs:
        sub = ws.tree.new_asset(name, AssetKind.FOLDER)
        asset_ops.add_asset(ws, sub, dir_asset, derived=True)
        _scan_dir(ws, files, sub, prefix + name)


# -- diff ---------------------------------------------------------------------


def diff_snapshots(ws: Workspace, new_dir: Path) -> ChangeSet:
    """Name-status comparison of the workspace's file manifest against a
    directory; renames are exact-content-hash matches with a single
    candidate on both sides."""
    new_files = _read_dir(Path(new_dir))
    new_hashes = {p: _sha256(b) for p, b in new_files.items()}
    old_hashes = ws.file_hashes

    added = [p for p in new_hashes if p not in old_hashes]
    deleted = [p for p in old_hashes if p not in new_hashes]
    modified = [p for p in new_hashes
                if p in old_hashes and new_hashes[p] != old_hashes[p]]

    renames: list[tuple[str, str]] = []
    added_by_hash: dict[str, list[str]] = {}
    for p in added:
        added_by_hash.setdefault(new_hashes[p], []).append(p)
    deleted_by_hash: dict[str, list[str]] = {}
    for p in deleted:
        deleted_by_hash.setdefault(old_hashes[p], []).append(p)
    for digest, old_paths in deleted_by_hash.items():
        new_paths = added_by_hash.get(digest, [])
        if len(old_paths) == 1 and len(new_paths) == 1:
            renames.append((old_paths[0], new_paths[0]))
    renamed_old = {o for o, _ in renames}
    renamed_new = {n for _, n in renames}

    entries: list[ChangeEntry] = []
    for p in sorted(added):
        if p in renamed_new:
            continue
        entries.append(ChangeEntry("A", p, content=_decode(p, new_files[p]),
                                   digest=new_hashes[p]))
    for p in sorted(modified):
        entries.append(ChangeEntry("M", p, content=_decode(p, new_files[p]),
                                   digest=new_hashes[p]))
    for p in sorted(deleted):
        if p in renamed_old:
            continue
        entries.append(ChangeEntry("D", p))
    for old, new in sorted(renames):
        entries.append(ChangeEntry("R", old, new_path=new,
                                   content=_decode(new, new_files[new]),
                                   digest=new_hashes[new]))
    entries.sort(key=lambda e: (e.path, e.status))
    return ChangeSet(entries)


# -- change-set application ----------------------------------------------------


@dataclass(frozen=True)
class CloneLogEntry:
    feature_path: str
    source_repo: str
    target_repo: str
    source_ref: str = ""
    target_ref: str = ""


def _root_repo(ws: Workspace) -> Asset:
    if not ws.tree.root.sub_assets:
        name = ws.root_dir.name if ws.root_dir is not None else "repo"
        repo = ws.tree.new_asset(name or "repo", AssetKind.REPOSITORY)
        asset_ops.add_asset(ws, repo, ws.tree.root, derived=True)
    return ws.tree.root.sub_assets[0]


def _resolve_repo(ws: Workspace, name: str) -> Asset:
    """Resolve a clone-log repository path, absolute or relative to the
    scanned root repository."""
    for base in [ws.tree.root] + ws.tree.root.sub_assets:
        node = base
        ok = True
        for seg in [s for s in name.split("/") if s]:
            nxt = node.child(seg)
            if nxt is None:
                ok = False
                break
            node = nxt
        if ok and node is not base:
            return node
    raise NotFound(f"clone-log repository {name!r} not found in the workspace")


def _resolve_feature_in_model(fm: FeatureModel, path: str) -> Feature:
    segments = [s for s in path.split("/") if s]
    if not segments:
        raise NotFound("empty feature path")
    if segments[0] != fm.root.name:
        segments = [fm.root.name] + segments
    return resolve_feature_path(fm, segments)


def _ensure_dir_asset(ws: Workspace, dir_rel: str) -> Asset:
    node = _root_repo(ws)
    for seg in [s for s in dir_rel.split("/") if s]:
        nxt = node.child(seg)
        if nxt is None:
            nxt = ws.tree.new_asset(seg, AssetKind.FOLDER)
            asset_ops.add_asset(ws, nxt, node, derived=True)
        node = nxt
    return node


def _lookup_file(ws: Workspace, rel: str) -> Optional[Asset]:
    node: Optional[Asset] = _root_repo(ws)
    for seg in [s for s in rel.split("/") if s]:
        node = node.child(seg) if node is not None else None
        if node is None:
            return None
    return node


def _nearest_file_ancestor(asset: Asset) -> Asset:
    node = asset
    while node.parent is not None and node.kind is AssetKind.BLOCK:
        node = node.parent
    return node


class _ApplyState:
    def __init__(self, ws: Workspace) -> None:
        self.preexisting = {a.id for a in ws.tree.walk()}
        self.late_features: set[str] = set()

    def mark_late(self, ws: Workspace, target: Asset, feature: str,
                  app: OperatorApplication) -> None:
        anchor = _nearest_file_ancestor(target)
        if anchor.id in self.preexisting:
            app.late = True
            self.late_features.add(feature)


def _reparse_file(ws: Workspace, file_asset: Asset, content: str,
                  state: _ApplyState) -> None:
    """M entry: changeAsset plus a re-parse of the annotation-derived
    blocks; the sole-mapping cascade is suppressed for the old blocks."""
    spans = parse_annotations(content)
    asset_ops.change_asset(ws, file_asset, new_content=content, derived=True)
    build_file_structure(ws.tree, file_asset, spans, apply_pcs=False)
    version = file_asset.version
    blocks = [n for n in file_asset.walk() if n.kind is AssetKind.BLOCK]
    for block in blocks:
        block.version = version
    # the built blocks appear in the spans' (pre-sorted) order
    for block, span in zip(blocks, spans):
        for feature in span.features:
            asset_ops.map_asset_to_feature(ws, block, feature, derived=True)
            state.mark_late(ws, block, feature, ws.log[-1])


def _sync_feature_model(ws: Workspace, owner: Asset, doc: FeatureModel) -> None:
    """Reconcile an attached model with a re-read document: additions,
    removals (UNASSIGNED children exempt) and hierarchy moves."""
    fm = owner.feature_model
    assert fm is not None
    if doc.root.name != fm.root.name:
        raise UnsupportedChange(
            f"feature-model root renamed ({fm.root.name!r} -> {doc.root.name!r})")
    doc_names = {f.name for f in doc.features()}

    while True:
        victim = None
        for feature in fm.features():
            if feature is fm.root or feature is fm.unassigned:
                continue
            if feature.parent is fm.unassigned:
                continue  # clone side effects pending user filing
            if feature.name not in doc_names:
                victim = feature
                break
        if victim is None:
            break
        feature_ops.remove_feature(ws, victim, derived=True)

    for doc_feature in doc.features():
        if doc_feature is doc.root:
            continue
        if fm.find(doc_feature.name) is None:
            assert doc_feature.parent is not None
            parent = fm.find(doc_feature.parent.name)
            assert parent is not None, "document parents precede children"
            fresh = Feature(doc_feature.name, optional=doc_feature.optional,
                            group_kind=doc_feature.group_kind)
            feature_ops.add_feature(ws, fresh, parent, derived=True)

    for doc_feature in doc.features():
        if doc_feature is doc.root or doc_feature.parent is None:
            continue
        current = fm.find(doc_feature.name)
        assert current is not None
        if current.parent is not None \
                and current.parent.name != doc_feature.parent.name:
            new_parent = fm.find(doc_feature.parent.name)
            if new_parent is not None:
                feature_ops.move_feature(ws, current, new_parent, derived=True)


def apply_change_set(ws: Workspace, cs: ChangeSet,
                     clone_directives: Sequence[CloneLogEntry] = (),
                     ) -> list[OperatorApplication]:
    """Derive and run operators for a change set in the fixed precedence:
    feature-model files, asset files, mapping files, clone directives.
    A failure rolls the whole application back."""
    mark = len(ws.log)
    state = _ApplyState(ws)

    def basename(path: str) -> str:
        return path.rsplit("/", 1)[-1]

    def dirname(path: str) -> str:
        return path.rsplit("/", 1)[0] if "/" in path else ""

    with ws.atomic():
        # 1. feature-model files
        for entry in cs.entries:
            name = basename(entry.new_path or entry.path)
            if name != ".vp-project":
                continue
            if entry.status == "D":
                raise UnsupportedChange(
                    f"deleting {entry.path}: feature-model removal is not "
                    "supported")
            if entry.status == "R" and dirname(entry.path) != dirname(
                    entry.new_path or entry.path):
                raise UnsupportedChange(
                    f"moving {entry.path}: feature-model files cannot move")
            assert entry.content is not None
            doc = parse_feature_model_file(entry.content)
            owner = _ensure_dir_asset(ws, dirname(entry.new_path or entry.path))
            if owner.feature_model is None:
                feature_ops.add_feature_model_to_asset(ws, owner, doc,
                                                       derived=True)
            else:
                _sync_feature_model(ws, owner, doc)

        # 2. asset files
        for entry in cs.entries:
            path = entry.path
            if basename(entry.new_path or path) in METADATA_NAMES \
                    or basename(path) in METADATA_NAMES:
                continue
            if entry.status == "A":
                existing = _lookup_file(ws, path)
                if existing is not None:
                    if existing.content != entry.content:
                        assert entry.content is not None
                        _reparse_file(ws, existing, entry.content, state)
                    continue
                assert entry.content is not None
                parent = _ensure_dir_asset(ws, dirname(path))
                file_asset = ws.tree.new_asset(basename(path), AssetKind.FILE,
                                               entry.content)
                build_file_structure(ws.tree, file_asset)
                asset_ops.add_asset(ws, file_asset, parent, derived=True)
            elif entry.status == "M":
                existing = _lookup_file(ws, path)
                assert entry.content is not None
                if existing is None:
                    parent = _ensure_dir_asset(ws, dirname(path))
                    file_asset = ws.tree.new_asset(basename(path),
                                                   AssetKind.FILE, entry.content)
                    build_file_structure(ws.tree, file_asset)
                    asset_ops.add_asset(ws, file_asset, parent, derived=True)
                else:
                    _reparse_file(ws, existing, entry.content, state)
            elif entry.status == "D":
                existing = _lookup_file(ws, path)
                if existing is not None:
                    asset_ops.remove_asset(ws, existing, derived=True)
            else:  # R
                assert entry.new_path is not None
                existing = _lookup_file(ws, path)
                if existing is None:
                    if _lookup_file(ws, entry.new_path) is None:
                        assert entry.content is not None
                        parent = _ensure_dir_asset(ws, dirname(entry.new_path))
                        file_asset = ws.tree.new_asset(
                            basename(entry.new_path), AssetKind.FILE,
                            entry.content)
                        build_file_structure(ws.tree, file_asset)
                        asset_ops.add_asset(ws, file_asset, parent, derived=True)
                    continue
                old_dir, new_dir = dirname(path), dirname(entry.new_path)
                if old_dir != new_dir:
                    parent = _ensure_dir_asset(ws, new_dir)
                    asset_ops.move_asset(ws, existing, parent, derived=True)
                    existing = _lookup_file(
                        ws, f"{new_dir}/{basename(path)}" if new_dir
                        else basename(path))
                    assert existing is not None
                if basename(path) != basename(entry.new_path):
                    asset_ops.change_asset(ws, existing,
                                           new_name=basename(entry.new_path),
                                           derived=True)

        # 3. mapping files
        for entry in cs.entries:
            path = entry.new_path or entry.path
            name = basename(path)
            if name not in (".vp-folder", ".vp-files"):
                continue
            if entry.status == "D":
                continue  # mappings persist
            assert entry.content is not None
            owner = _ensure_dir_asset(ws, dirname(path))
            if name == ".vp-folder":
                doc = parse_mapping_file(entry.content, MappingScope.FOLDER)
                for _, feats in doc.entries:
                    for feat in feats:
                        if feat in owner.mapped_features():
                            continue
                        asset_ops.map_asset_to_feature(ws, owner, feat,
                                                       derived=True)
                        state.mark_late(ws, owner, feat, ws.log[-1])
            else:
                doc = parse_mapping_file(entry.content, MappingScope.FILES)
                for fname, feats in doc.entries:
                    target = owner.child(fname)
                    if target is None:
                        raise UnknownFile(
                            f"{path} maps unknown file {fname!r}")
                    for feat in feats:
                        if feat in target.mapped_features():
                            continue
                        asset_ops.map_asset_to_feature(ws, target, feat,
                                                       derived=True)
                        state.mark_late(ws, target, feat, ws.log[-1])

        # 4. clone-feature directives
        for directive in clone_directives:
            _apply_clone_directive(ws, directive, state)

        for entry in cs.entries:
            if entry.status == "D":
                ws.file_hashes.pop(entry.path, None)
            elif entry.status == "R":
                assert entry.new_path is not None and entry.digest is not None
                ws.file_hashes.pop(entry.path, None)
                ws.file_hashes[entry.new_path] = entry.digest
            else:
                assert entry.digest is not None
                ws.file_hashes[entry.path] = entry.digest

    return ws.log[mark:]


def _apply_clone_directive(ws: Workspace, directive: CloneLogEntry,
                           state: _ApplyState) -> None:
    try:
        src_repo = _resolve_repo(ws, directive.source_repo)
        tgt_repo = _resolve_repo(ws, directive.target_repo)
    except NotFound as exc:
        raise NotFound(f"clone log entry {directive.feature_path!r}: {exc}"
                       ) from exc
    src_fm = ws.tree.ancestor_feature_model(src_repo)
    tgt_fm = ws.tree.ancestor_feature_model(tgt_repo)
    source = _resolve_feature_in_model(src_fm, directive.feature_path)

    existing = tgt_fm.find(source.name)
    if existing is None:
        feature_ops.clone_feature(ws, source, tgt_fm.root, derived=True)
    else:
        # metadata was committed ahead: reconstruct traces and mappings
        # against the already-present feature and assets
        with ws.atomic(), ws.nested_operator() as top:
            fstate = feature_ops._FeatureOpState(ws, src_fm, tgt_fm)
            _reconstruct_clone(ws, source, existing, fstate)
            version = fstate.finish(ws, existing)
            if top:
                ws.record("CloneFeature",
                          [feature_ops.feature_address(ws, source),
                           feature_ops.feature_address(ws, existing)],
                          version, derived=True)
    app = ws.log[-1]
    if source.name in state.late_features:
        app.late = True


def _reconstruct_clone(ws: Workspace, source: Feature, target: Feature,
                       fstate: "feature_ops._FeatureOpState") -> None:
    ws.traces.add_feature_trace(source.id, target.id, fstate.src_fm.version)
    src_owner = fstate.src_owner
    for asset in ws.tree.mapped_assets(fstate.src_fm, source.name):
        if asset is src_owner:
            continue
        counterpart = _scope_counterpart(ws, asset, src_owner, fstate.tgt_owner)
        if counterpart is not None:
            if not ws.traces.is_asset_clone(asset.id, counterpart.id):
                ws.traces.add_asset_trace(asset.id, counterpart.id,
                                          asset.version)
            leaf = counterpart
        else:
            leaf = feature_ops._materialize_clone(ws, asset, fstate)
        if target.name not in leaf.mapped_features():
            leaf.pc = pc_mod.disjoin_feature(leaf.pc, target.name)
    for sub in source.sub_features:
        existing = None
        for candidate in target.sub_features:
            if candidate.name == sub.name:
                existing = candidate
                break
        if existing is not None:
            _reconstruct_clone(ws, sub, existing, fstate)
        else:
            feature_ops._clone_feature_rec(ws, sub, target, fstate)


def _scope_counterpart(ws: Workspace, asset: Asset, src_owner: Asset,
                       tgt_owner: Asset) -> Optional[Asset]:
    """Find the target-scope asset at the same relative path (name match)."""
    rel: list[str] = []
    node: Optional[Asset] = asset
    while node is not None and node is not src_owner:
        rel.append(node.name)
        node = node.parent
    if node is None:
        return None
    cursor: Optional[Asset] = tgt_owner
    for seg in reversed(rel):
        cursor = cursor.child(seg) if cursor is not None else None
        if cursor is None:
            return None
    return cursor
