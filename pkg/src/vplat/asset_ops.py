"""The traditional, asset-oriented operators.

Every top-level application bumps the global version exactly once and logs
exactly one entry; recursive invocations inside another operator do neither.
All operators validate fully before mutating.
"""

from __future__ import annotations

from typing import Optional

from . import pc as pc_mod
from .assets import Asset, AssetKind, containable
from .errors import (
    CannotRemoveRoot,
    DuplicateName,
    NoFeatureModelInScope,
    NotContainable,
    NotFound,
    NoTrace,
)
from .features import Feature, FeatureModel, clone_feature_node
from .workspace import Workspace


def _require_in_tree(ws: Workspace, asset: Asset) -> None:
    if not ws.tree.in_tree(asset):
        raise NotFound(f"asset {asset.name!r} is not part of the workspace tree")


def _subtree_mapped_names(asset: Asset) -> list[str]:
    names: list[str] = []
    for node in asset.walk():
        for name in node.mapped_features():
            if name not in names:
                names.append(name)
    return names


def _find_feature_clone_in(ws: Workspace, source: Feature,
                           fm: FeatureModel) -> Optional[Feature]:
    assert source.id is not None
    for cid in ws.traces.feature_clone_ids(source.id):
        feature = ws.feature_by_id(cid)
        if feature is not None and fm.contains(feature):
            return feature
    return None


def _ensure_feature_clone(ws: Workspace, name: str, src_fm: Optional[FeatureModel],
                          tgt_fm: FeatureModel,
                          created: list[Feature]) -> Optional[Feature]:
    """Locate the feature for ``name`` in the target model, cloning it under
    UNASSIGNED (with a feature trace) when absent; dedup by name or trace."""
    existing = tgt_fm.find(name)
    if existing is not None:
        return existing
    src = src_fm.find(name) if src_fm is not None else None
    if src is None:
        return None
    cloned = _find_feature_clone_in(ws, src, tgt_fm)
    if cloned is not None:
        return cloned
    fc = clone_feature_node(src)
    tgt_fm.insert(fc, tgt_fm.unassigned)
    ws.tree.register_feature(fc)
    ws.traces.add_feature_trace(src.id, fc.id, src_fm.version)
    created.append(fc)
    return fc


def add_asset(ws: Workspace, source: Asset, target: Asset, *,
              derived: bool = False) -> bool:
    """Parent a detached asset (subtree) under a target in the tree."""
    _require_in_tree(ws, target)
    if source.parent is not None or source.kind is AssetKind.VP_ROOT:
        raise NotFound(f"source {source.name!r} must be a detached non-root asset")
    if not containable(source.kind, target.kind):
        raise NotContainable(
            f"{source.kind.value} cannot be contained in {target.kind.value}")
    if target.child(source.name) is not None:
        raise DuplicateName(f"{source.name!r} already exists under {target.name!r}")
    mapped = _subtree_mapped_names(source)
    fm: Optional[FeatureModel] = None
    if mapped:
        fm = ws.tree.ancestor_feature_model(target)

    with ws.nested_operator() as top:
        target_path = ws.tree.path_of(target)
        ws.tree.attach(source, target)
        if fm is not None:
            added: list[Feature] = []
            for name in mapped:
                if fm.find(name) is None:
                    feature = Feature(name)
                    fm.insert(feature, fm.unassigned)
                    ws.tree.register_feature(feature)
                    added.append(feature)
            if added:
                fm.bump_version(added)
        if top:
            version = ws.tree.bump_global_version([*source.walk(), target])
            ws.record("AddAsset", [ws.tree.path_of(source), target_path],
                      version, derived)
    return True


def change_asset(ws: Workspace, asset: Asset, new_content: Optional[str] = None,
                 new_name: Optional[str] = None, *, derived: bool = False) -> bool:
    """Versionable change: payload and/or rename. A no-op change still bumps."""
    _require_in_tree(ws, asset)
    if new_name and new_name != asset.name and asset.parent is not None:
        if asset.parent.child(new_name) is not None:
            raise DuplicateName(f"{new_name!r} already exists under "
                                f"{asset.parent.name!r}")
    with ws.nested_operator() as top:
        args = [ws.tree.path_of(asset)]
        if new_content is not None:
            asset.content = new_content
        if new_name:
            asset.name = new_name
            args.append(new_name)
        if top:
            version = ws.tree.bump_global_version([asset])
            ws.record("ChangeAsset", args, version, derived)
    return True


# -- removal cascade -------------------------------------------------------

class _CascadePlan:
    def __init__(self) -> None:
        self.assets: dict[int, Asset] = {}
        self.features: dict[int, Feature] = {}
        self.feature_models: dict[int, FeatureModel] = {}

    def absorb_asset(self, root: Asset) -> None:
        for node in root.walk():
            self.assets[node.id] = node

    def absorb_feature(self, root: Feature, fm: FeatureModel) -> None:
        for node in root.walk():
            assert node.id is not None
            self.features[node.id] = node
            self.feature_models[node.id] = fm


def _model_of(ws: Workspace, feature: Feature) -> FeatureModel:
    root = feature
    while root.parent is not None:
        root = root.parent
    for asset in ws.tree.walk():
        if asset.feature_model is not None and asset.feature_model.root is root:
            return asset.feature_model
    raise NotFound(f"feature {feature.name!r} belongs to no attached model")


def plan_removal_cascade(ws: Workspace, seed_assets: list[Asset],
                         seed_features: list[Feature]) -> _CascadePlan:
    """Fixpoint of the two sole-mapping cascade rules; pure analysis."""
    plan = _CascadePlan()
    for a in seed_assets:
        plan.absorb_asset(a)
    for f in seed_features:
        plan.absorb_feature(f, _model_of(ws, f))

    while True:
        changed = False
        for owner in ws.tree.walk():
            fm = owner.feature_model
            if fm is None:
                continue
            scope = list(ws.tree.scope_assets(fm))
            for feature in list(fm.features()):
                if feature.id in plan.features or feature is fm.root \
                        or feature is fm.unassigned:
                    continue
                mapped = [a for a in scope if feature.name in a.mapped_features()]
                doomed = [a for a in mapped if a.id in plan.assets]
                if doomed and len(doomed) == len(mapped):
                    plan.absorb_feature(feature, fm)
                    changed = True
        for asset in ws.tree.walk():
            if asset.id in plan.assets or asset.kind is AssetKind.VP_ROOT:
                continue
            names = asset.mapped_features()
            if not names:
                continue
            try:
                fm = ws.tree.ancestor_feature_model(asset)
            except NoFeatureModelInScope:
                continue
            resolved = [fm.find(n) for n in names]
            resolved = [f for f in resolved if f is not None]
            if resolved and all(f.id in plan.features for f in resolved):
                plan.absorb_asset(asset)
                changed = True
        if not changed:
            return plan


def commit_removal_cascade(ws: Workspace, plan: _CascadePlan
                           ) -> tuple[list[Asset], dict[int, list[Feature]],
                                      list[Asset]]:
    """Detach everything in the plan and FALSE out dangling literals.

    Returns (former asset parents, former feature parents per model owner id,
    surviving assets whose PCs changed).
    """
    asset_roots = [a for a in plan.assets.values()
                   if a.parent is not None and a.parent.id not in plan.assets]
    asset_parents: list[Asset] = []
    for root in asset_roots:
        parent = root.parent
        assert parent is not None
        ws.tree.detach(root)
        if parent.id not in plan.assets and parent not in asset_parents:
            asset_parents.append(parent)

    feature_parents: dict[int, list[Feature]] = {}
    feature_roots = [f for f in plan.features.values()
                     if f.parent is not None and f.parent.id not in plan.features]
    for froot in feature_roots:
        fm = plan.feature_models[froot.id]
        parent = froot.parent
        assert parent is not None
        fm.detach(froot)
        owner = ws.tree.feature_model_owner(fm)
        bucket = feature_parents.setdefault(owner.id, [])
        if parent.id not in plan.features and parent not in bucket:
            bucket.append(parent)

    pc_touched: list[Asset] = []
    for feature in plan.features.values():
        fm = plan.feature_models[feature.id]
        try:
            owner = ws.tree.feature_model_owner(fm)
        except NotFound:
            continue  # whole model scope was removed
        for asset in ws.tree.scope_assets(fm):
            if feature.name in asset.mapped_features():
                asset.pc = pc_mod.replace_literal(asset.pc, feature.name)
                if asset not in pc_touched:
                    pc_touched.append(asset)
    return asset_parents, feature_parents, pc_touched


def remove_asset(ws: Workspace, asset: Asset, *, derived: bool = False) -> bool:
    """Detach a subtree; features that lose their last mapped asset cascade."""
    if asset.kind is AssetKind.VP_ROOT:
        raise CannotRemoveRoot("the VpRoot asset cannot be removed")
    _require_in_tree(ws, asset)
    plan = plan_removal_cascade(ws, [asset], [])

    with ws.nested_operator() as top:
        path = ws.tree.path_of(asset)
        asset_parents, feature_parents, pc_touched = commit_removal_cascade(ws, plan)
        for owner_id, parents in feature_parents.items():
            owner = ws.tree.assets_by_id[owner_id]
            assert owner.feature_model is not None
            owner.feature_model.bump_version(parents)
        if top:
            touched = asset_parents + [a for a in pc_touched
                                       if a not in asset_parents]
            version = ws.tree.bump_global_version(touched)
            ws.record("RemoveAsset", [path], version, derived)
    return True


def map_asset_to_feature(ws: Workspace, asset: Asset, feature_name: str, *,
                         derived: bool = False) -> bool:
    """Disjoin a feature onto the asset's PC, creating it under UNASSIGNED
    of the closest feature model when absent."""
    _require_in_tree(ws, asset)
    pc_mod.check_feature_name(feature_name)
    fm = ws.tree.ancestor_feature_model(asset)

    with ws.nested_operator() as top:
        if fm.find(feature_name) is None:
            feature = Feature(feature_name)
            fm.insert(feature, fm.unassigned)
            ws.tree.register_feature(feature)
            fm.bump_version([feature])
        asset.pc = pc_mod.disjoin_feature(asset.pc, feature_name)
        if top:
            version = ws.tree.bump_global_version([asset])
            ws.record("MapAssetToFeature", [ws.tree.path_of(asset), feature_name],
                      version, derived)
    return True


def clone_asset(ws: Workspace, source: Asset, target: Asset, *,
                derived: bool = False) -> Asset:
    """Deep clone under target; mapped features cloned into the target's
    model; one asset trace per cloned node; clones retain source versions."""
    _require_in_tree(ws, source)
    _require_in_tree(ws, target)
    if not containable(source.kind, target.kind):
        raise NotContainable(
            f"{source.kind.value} cannot be contained in {target.kind.value}")
    if target.child(source.name) is not None:
        raise DuplicateName(f"{source.name!r} already exists under {target.name!r}")
    mapped_names = _subtree_mapped_names(source)
    tgt_fm: Optional[FeatureModel] = None
    if mapped_names:
        tgt_fm = ws.tree.ancestor_feature_model(target)
    try:
        src_fm: Optional[FeatureModel] = ws.tree.ancestor_feature_model(source)
    except NoFeatureModelInScope:
        src_fm = None

    with ws.nested_operator() as top:
        src_path = ws.tree.path_of(source)
        tgt_path = ws.tree.path_of(target)
        clone = ws.tree.deep_clone(source)
        ws.tree.attach(clone, target)
        originals = list(source.walk())
        copies = list(clone.walk())
        for orig, copy in zip(originals, copies):
            ws.traces.add_asset_trace(orig.id, copy.id, orig.version)
        if tgt_fm is not None:
            created: list[Feature] = []
            resolved: dict[str, Optional[Feature]] = {}
            for name in mapped_names:
                resolved[name] = _ensure_feature_clone(ws, name, src_fm, tgt_fm,
                                                       created)
            # re-map the top clone: true, then disjoin the source's mapped
            # features (reverse appearance order reproduces disjoin chains)
            clone.pc = pc_mod.TRUE
            for name in reversed(source.mapped_features()):
                feature = resolved.get(name)
                clone.pc = pc_mod.disjoin_feature(
                    clone.pc, feature.name if feature is not None else name)
            if created:
                tgt_fm.bump_version(created)
        if top:
            version = ws.tree.bump_global_version([target])
            ws.record("CloneAsset", [src_path, tgt_path], version, derived)
    return clone


def move_asset(ws: Workspace, asset: Asset, new_target: Asset, *,
               derived: bool = False) -> bool:
    """Behaviorally cloneAsset then removeAsset; logged as one application."""
    _require_in_tree(ws, asset)
    _require_in_tree(ws, new_target)
    src_path = ws.tree.path_of(asset)
    tgt_path = ws.tree.path_of(new_target)
    mark = len(ws.log)
    clone_asset(ws, asset, new_target)
    remove_asset(ws, asset)
    del ws.log[mark:]
    ws.record("MoveAsset", [src_path, tgt_path], ws.tree.global_version, derived)
    return True


def make_consistent(ws: Workspace, source: Asset, target: Asset) -> bool:
    """Propagation helper: align name/payload and clone in sub-assets the
    target lacks; deletions at source and target-local additions are kept."""
    if source.name != target.name and target.parent is not None:
        existing = target.parent.child(source.name)
        if existing is not None and existing is not target:
            raise DuplicateName(
                f"renaming target to {source.name!r} would clash")
    target.name = source.name
    target.content = source.content
    for child in source.sub_assets:
        if _clone_of_in(ws, child, target) is None:
            clone_asset(ws, child, target)
    return True


def _clone_of_in(ws: Workspace, source_child: Asset,
                 target: Asset) -> Optional[Asset]:
    for candidate in target.sub_assets:
        if ws.traces.is_asset_clone(source_child.id, candidate.id):
            return candidate
    return None


def _validate_propagation(ws: Workspace, source: Asset, target: Asset) -> None:
    if source.name != target.name and target.parent is not None:
        existing = target.parent.child(source.name)
        if existing is not None and existing is not target:
            raise DuplicateName(
                f"renaming target to {source.name!r} would clash")
    for child in source.sub_assets:
        clone = _clone_of_in(ws, child, target)
        if clone is None:
            if target.child(child.name) is not None:
                raise DuplicateName(
                    f"{child.name!r} already exists under {target.name!r} "
                    "and is not a clone")
        else:
            trace = ws.traces.latest_asset_trace(child.id, clone.id)
            if trace is not None and child.version > trace.version_at:
                _validate_propagation(ws, child, clone)


def propagate_asset(ws: Workspace, source: Asset, target: Asset, *,
                    derived: bool = False) -> bool:
    """Propagate changes recorded after the latest trace from source to its
    clone; clone-local changes are retained. No-op when source is not ahead."""
    _require_in_tree(ws, source)
    _require_in_tree(ws, target)
    trace = ws.traces.latest_asset_trace(source.id, target.id)
    if trace is None:
        raise NoTrace(f"no trace links {source.name!r} and {target.name!r}")
    if source.version <= trace.version_at:
        return False
    mapped = _subtree_mapped_names(source)
    if mapped:
        ws.tree.ancestor_feature_model(target)  # NoFeatureModelInScope if absent
    _validate_propagation(ws, source, target)
    try:
        src_fm: Optional[FeatureModel] = ws.tree.ancestor_feature_model(source)
    except NoFeatureModelInScope:
        src_fm = None

    with ws.nested_operator() as top:
        src_path = ws.tree.path_of(source)
        tgt_path = ws.tree.path_of(target)
        make_consistent(ws, source, target)
        if source.mapped_features():
            tgt_fm = ws.tree.ancestor_feature_model(target)
            created: list[Feature] = []
            for name in source.mapped_features():
                if name in target.mapped_features():
                    continue
                feature = _ensure_feature_clone(ws, name, src_fm, tgt_fm, created)
                target.pc = pc_mod.disjoin_feature(
                    target.pc, feature.name if feature is not None else name)
            if created:
                tgt_fm.bump_version(created)
        for child in source.sub_assets:
            clone = _clone_of_in(ws, child, target)
            if clone is not None:
                propagate_asset(ws, child, clone)
        ws.traces.add_asset_trace(source.id, target.id, source.version)
        if top:
            version = ws.tree.bump_global_version([target])
            ws.record("PropagateAsset", [src_path, tgt_path], version, derived)
    return True
