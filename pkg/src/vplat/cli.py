"""The ``vplat`` command line: every operator, query, sync, replay and the
metrics report. Exit codes: 0 success, 1 operator error, 2 usage error."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional

from . import asset_ops, feature_ops, metrics as metrics_mod
from .annotations import build_file_structure, parse_feature_model_file
from .assets import Asset, AssetKind
from .errors import IoFailure, NotFound, VplatError
from .features import Feature, resolve_feature_path
from .replay import detect_propagations, read_clone_log, read_history_manifest, \
    replay as run_replay
from .sync import apply_change_set, diff_snapshots, scan
from .workspace import STATE_DIR, Workspace, load, save, workspace_lock


def find_workspace_root(cwd: Optional[Path] = None) -> Path:
    env = os.environ.get("VPLAT_ROOT")
    if env:
        return Path(env)
    cur = Path(cwd) if cwd is not None else Path.cwd()
    for candidate in [cur, *cur.parents]:
        if (candidate / STATE_DIR).is_dir():
            return candidate
    raise NotFound(f"no workspace found above {cur} (run `vplat init`)")


def resolve_feature_address(ws: Workspace, address: str) -> Feature:
    """``<fm-owner asset path>/<feature names…>``; the owner path alone
    names the model root; longest owning prefix wins."""
    segments = [s for s in address.split("/") if s]
    for cut in range(len(segments), -1, -1):
        try:
            asset = ws.tree.resolve(segments[:cut])
        except NotFound:
            continue
        if asset.feature_model is None:
            continue
        fm = asset.feature_model
        rest = segments[cut:]
        try:
            if not rest:
                return fm.root
            if rest[0] == fm.root.name:
                return resolve_feature_path(fm, rest)
            return resolve_feature_path(fm, [fm.root.name, *rest])
        except NotFound:
            continue
    raise NotFound(f"no feature at {address!r}")


class Reporter:
    def __init__(self, as_json: bool) -> None:
        self.as_json = as_json

    def emit(self, rows: list[list[str]], keys: Optional[list[str]] = None) -> None:
        if self.as_json:
            if keys:
                print(json.dumps([dict(zip(keys, row)) for row in rows]))
            else:
                print(json.dumps(rows))
        else:
            for row in rows:
                print("\t".join(row))


def _asset_disk_path(ws: Workspace, asset_path: str) -> Path:
    assert ws.root_dir is not None
    segments = [s for s in asset_path.split("/") if s]
    return ws.root_dir.joinpath(*segments[1:]) if len(segments) > 1 \
        else ws.root_dir


def _build_from_disk(ws: Workspace, disk_path: Path, top: bool) -> Asset:
    if disk_path.is_file():
        try:
            text = disk_path.read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            raise IoFailure(f"cannot read {disk_path}: {exc}") from exc
        asset = ws.tree.new_asset(disk_path.name, AssetKind.FILE, text)
        build_file_structure(ws.tree, asset)
        return asset
    if disk_path.is_dir():
        kind = AssetKind.REPOSITORY if top else AssetKind.FOLDER
        asset = ws.tree.new_asset(disk_path.name, kind)
        for entry in sorted(disk_path.iterdir(), key=lambda p: p.name):
            if entry.name == STATE_DIR:
                continue
            child = _build_from_disk(ws, entry, top=False)
            child.parent = asset
            asset.sub_assets.append(child)
        return asset
    raise IoFailure(f"no such file or directory: {disk_path}")


def _new_asset_ids(ws: Workspace) -> set[int]:
    return {a.id for a in ws.tree.walk()}


def main(argv: Optional[list[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    reporter = Reporter(getattr(args, "json", False))
    try:
        return _dispatch(args, reporter)
    except VplatError as exc:
        print(f"{exc.name}: {exc}", file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vplat",
        description="feature- and clone-aware layer over a directory tree")
    parser.add_argument("--json", action="store_true",
                        help="emit reports as JSON instead of TSV")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("init", help="scan the directory and create .vp state")
    sub.add_parser("sync", help="reconcile on-disk changes into operators")

    p = sub.add_parser("add-asset", help="add a disk file/dir into the tree")
    p.add_argument("src", help="path on disk, relative to the workspace root")
    p.add_argument("tgt", help="asset path of the target parent")

    p = sub.add_parser("change-asset")
    p.add_argument("path")
    p.add_argument("--rename")
    p.add_argument("--content-file")

    p = sub.add_parser("remove-asset")
    p.add_argument("path")

    p = sub.add_parser("move-asset")
    p.add_argument("src")
    p.add_argument("tgt")

    p = sub.add_parser("map", help="map an asset to a feature")
    p.add_argument("path")
    p.add_argument("feature")

    p = sub.add_parser("clone-asset")
    p.add_argument("src")
    p.add_argument("tgt")

    p = sub.add_parser("propagate-asset")
    p.add_argument("src")
    p.add_argument("tgt")

    p = sub.add_parser("add-feature")
    p.add_argument("name")
    p.add_argument("parentpath")

    p = sub.add_parser("add-fm", help="attach a .vp-project model to an asset")
    p.add_argument("path")
    p.add_argument("fmfile")

    p = sub.add_parser("remove-feature")
    p.add_argument("fpath")

    p = sub.add_parser("move-feature")
    p.add_argument("fpath")
    p.add_argument("parent")

    p = sub.add_parser("make-optional")
    p.add_argument("fpath")

    p = sub.add_parser("clone-feature")
    p.add_argument("src")
    p.add_argument("tgt")

    p = sub.add_parser("propagate-feature")
    p.add_argument("src")
    p.add_argument("tgt")

    p = sub.add_parser("query")
    qsub = p.add_subparsers(dest="query_command", required=True)
    q = qsub.add_parser("mapped-assets")
    q.add_argument("fpath")
    q = qsub.add_parser("clones")
    q.add_argument("path")
    qsub.add_parser("changes")

    p = sub.add_parser("replay")
    p.add_argument("manifest")
    p.add_argument("--clone-log")
    p.add_argument("--apply", action="store_true",
                   help="apply detected propagations instead of reporting")

    p = sub.add_parser("metrics")
    p.add_argument("--cost-per-invocation", type=float, default=54.0)
    return parser


def _dispatch(args: argparse.Namespace, out: Reporter) -> int:
    if args.command == "init":
        root = Path(os.environ.get("VPLAT_ROOT", Path.cwd()))
        if (root / STATE_DIR / "meta").exists():
            raise IoFailure(f"workspace already initialized at {root}")
        with workspace_lock(root):
            ws = scan(root)
            save(ws)
        out.emit([["initialized", str(root), str(ws.tree.global_version)]])
        return 0

    root = find_workspace_root()
    ws = load(root)

    if args.command == "sync":
        with workspace_lock(root):
            cs = diff_snapshots(ws, root)
            ops = apply_change_set(ws, cs)
            save(ws)
        out.emit([[op.operator, str(op.result_version), json.dumps(op.args)]
                  for op in ops],
                 keys=["operator", "result_version", "args"])
        return 0

    if args.command == "query":
        return _query(args, ws, out)
    if args.command == "metrics":
        return _metrics(args, ws, out)
    if args.command == "replay":
        return _replay(args, ws, root, out)
    return _mutate(args, ws, root, out)


def _mutate(args: argparse.Namespace, ws: Workspace, root: Path,
            out: Reporter) -> int:
    tree = ws.tree
    with workspace_lock(root):
        if args.command == "add-asset":
            target = tree.resolve(args.tgt)
            src = _build_from_disk(ws, root / args.src,
                                   top=target.kind is AssetKind.VP_ROOT)
            asset_ops.add_asset(ws, src, target)
            rows = [[tree.path_of(src), str(src.version)]]
        elif args.command == "change-asset":
            asset = tree.resolve(args.path)
            content = None
            if args.content_file:
                content = Path(args.content_file).read_text(encoding="utf-8")
            elif not args.rename:
                disk = _asset_disk_path(ws, args.path)
                if not disk.is_file():
                    raise IoFailure(f"no file on disk for {args.path} "
                                    "(use --content-file or --rename)")
                content = disk.read_text(encoding="utf-8")
            asset_ops.change_asset(ws, asset, new_content=content,
                                   new_name=args.rename)
            if content is not None and asset.kind is AssetKind.FILE:
                build_file_structure(tree, asset)
            rows = [[tree.path_of(asset), str(asset.version)]]
        elif args.command == "remove-asset":
            asset_ops.remove_asset(ws, tree.resolve(args.path))
            rows = [["removed", args.path]]
        elif args.command == "move-asset":
            asset_ops.move_asset(ws, tree.resolve(args.src),
                                 tree.resolve(args.tgt))
            rows = [["moved", args.src, args.tgt]]
        elif args.command == "map":
            asset = tree.resolve(args.path)
            asset_ops.map_asset_to_feature(ws, asset, args.feature)
            rows = [[tree.path_of(asset), str(asset.pc)]]
        elif args.command == "clone-asset":
            clone = asset_ops.clone_asset(ws, tree.resolve(args.src),
                                          tree.resolve(args.tgt))
            rows = [[tree.path_of(clone), str(clone.version)]]
        elif args.command == "propagate-asset":
            done = asset_ops.propagate_asset(ws, tree.resolve(args.src),
                                             tree.resolve(args.tgt))
            rows = [["propagated" if done else "up-to-date",
                     args.src, args.tgt]]
        elif args.command == "add-feature":
            parent = resolve_feature_address(ws, args.parentpath)
            feature_ops.add_feature(ws, Feature(args.name), parent)
            rows = [[args.name, str(parent.version)]]
        elif args.command == "add-fm":
            asset = tree.resolve(args.path)
            text = Path(args.fmfile).read_text(encoding="utf-8")
            feature_ops.add_feature_model_to_asset(
                ws, asset, parse_feature_model_file(text))
            rows = [[tree.path_of(asset), "feature model attached"]]
        elif args.command == "remove-feature":
            feature_ops.remove_feature(ws, resolve_feature_address(ws, args.fpath))
            rows = [["removed", args.fpath]]
        elif args.command == "move-feature":
            feature_ops.move_feature(ws, resolve_feature_address(ws, args.fpath),
                                     resolve_feature_address(ws, args.parent))
            rows = [["moved", args.fpath, args.parent]]
        elif args.command == "make-optional":
            feature = resolve_feature_address(ws, args.fpath)
            fm_root = feature
            while fm_root.parent is not None:
                fm_root = fm_root.parent
            feature_ops.make_feature_optional(ws, feature)
            rows = [["optional", args.fpath]]
            if feature is fm_root:
                rows.append(["note", "the model root was made optional"])
        elif args.command == "clone-feature":
            before = _new_asset_ids(ws)
            clone = feature_ops.clone_feature(
                ws, resolve_feature_address(ws, args.src),
                resolve_feature_address(ws, args.tgt))
            created = sorted(tree.path_of(a) for a in tree.walk()
                             if a.id not in before)
            rows = [["feature", feature_ops.feature_address(ws, clone)]]
            rows += [["asset", path] for path in created]
        elif args.command == "propagate-feature":
            done = feature_ops.propagate_feature(
                ws, resolve_feature_address(ws, args.src),
                resolve_feature_address(ws, args.tgt))
            rows = [["propagated" if done else "up-to-date", args.src, args.tgt]]
        else:  # pragma: no cover
            raise NotFound(f"unknown command {args.command}")
        save(ws)
    out.emit(rows)
    return 0


def _query(args: argparse.Namespace, ws: Workspace, out: Reporter) -> int:
    tree = ws.tree
    if args.query_command == "mapped-assets":
        feature = resolve_feature_address(ws, args.fpath)
        fm = feature_ops._model_of(ws, feature)
        rows = sorted([tree.path_of(a)] for a in
                      tree.mapped_assets(fm, feature.name))
        out.emit(rows, keys=["path"])
    elif args.query_command == "clones":
        asset = tree.resolve(args.path)
        rows = []
        for cid in ws.traces.asset_clone_ids(asset.id):
            clone = ws.asset_by_id(cid)
            rows.append([tree.path_of(clone) if clone is not None
                         else f"<removed:{cid}>"])
        out.emit(sorted(rows), keys=["clone"])
    else:  # changes
        cs = diff_snapshots(ws, ws.root_dir)
        rows = [[e.status, e.path, e.new_path or ""] for e in cs.entries]
        out.emit(rows, keys=["status", "path", "new_path"])
    return 0


def _metrics(args: argparse.Namespace, ws: Workspace, out: Reporter) -> int:
    counts = metrics_mod.tally(ws.log)
    model = metrics_mod.CostModel(args.cost_per_invocation)
    rows = [["operator", name, str(count)]
            for name, count in sorted(counts.per_operator.items())]
    rows.append(["feature_op_total", "", str(counts.feature_op_total)])
    rows.append(["late_invocations", "", str(counts.late_invocations)])
    rows.append(["saved_feature_locations", "",
                 str(counts.saved_feature_locations)])
    rows.append(["saved_clone_detections", "",
                 str(counts.saved_clone_detections)])
    rows.append(["total_benefit_seconds", "",
                 f"{metrics_mod.total_benefit(counts, model):.3f}"])
    try:
        be = f"{metrics_mod.break_even_seconds(counts, model):.3f}"
    except VplatError:
        be = "n/a"
    rows.append(["break_even_seconds", "", be])
    out.emit(rows, keys=["key", "operator", "value"])
    return 0


def _replay(args: argparse.Namespace, ws: Workspace, root: Path,
            out: Reporter) -> int:
    steps = read_history_manifest(Path(args.manifest))
    clone_log = read_clone_log(Path(args.clone_log)) if args.clone_log else []
    result = run_replay(steps, clone_log, apply_propagations=args.apply)
    with workspace_lock(root):
        save(result.workspace, root / STATE_DIR)
    rows = [["op", op.operator, str(op.result_version), json.dumps(op.args)]
            for op in result.applications]
    rows += [["propagation", str(idx), src, tgt]
             for idx, src, tgt in result.propagation_reports]
    out.emit(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
