"""The feature-oriented operators.

Feature operators bump their feature model's version once per top-level
application; when they create or change assets (tree slicing) they also bump
the AT global version once. Failures roll the workspace back.
"""

from __future__ import annotations

from typing import Optional

from . import pc as pc_mod
from .asset_ops import (
    _ensure_feature_clone,
    _model_of,
    commit_removal_cascade,
    plan_removal_cascade,
)
from .assets import Asset
from .errors import (
    CannotMoveIntoDescendant,
    CannotRemoveRoot,
    CannotRemoveUnassigned,
    DuplicateFeatureName,
    FeatureModelAlreadyPresent,
    NotAClone,
    NotFound,
)
from .features import (
    Feature,
    FeatureModel,
    clone_feature_node,
    detect_feature_changes,
    feature_path,
)
from .workspace import Workspace


def feature_address(ws: Workspace, feature: Feature) -> str:
    """CLI-style address: owner asset path, then feature names below root."""
    fm = _model_of(ws, feature)
    owner_path = ws.tree.path_of(ws.tree.feature_model_owner(fm))
    below_root = feature.path_segments()[1:]
    if not below_root:
        return owner_path
    return owner_path + "/" + "/".join(below_root)


def add_feature(ws: Workspace, feature: Feature, target_feature: Feature, *,
                derived: bool = False) -> bool:
    """Create a feature under a target feature of an attached model."""
    fm = _model_of(ws, target_feature)
    for node in feature.walk():
        if fm.find(node.name) is not None:
            raise DuplicateFeatureName(node.name)
    with ws.nested_operator() as top:
        fm.insert(feature, target_feature)
        for node in feature.walk():
            ws.tree.register_feature(node)
        version = fm.bump_version(list(feature.walk()))
        if top:
            ws.record("AddFeature", [feature.name, feature_address(ws, target_feature)],
                      version, derived)
    return True


def add_feature_model_to_asset(ws: Workspace, asset: Asset, fm: FeatureModel, *,
                               derived: bool = False) -> bool:
    """Attach a feature model to an asset; bumps the AT global version."""
    if not ws.tree.in_tree(asset):
        raise NotFound(f"asset {asset.name!r} is not part of the workspace tree")
    if asset.feature_model is not None:
        raise FeatureModelAlreadyPresent(
            f"asset {asset.name!r} already owns a feature model")
    with ws.nested_operator() as top:
        asset.feature_model = fm
        ws.tree.register_feature_model(fm)
        if top:
            version = ws.tree.bump_global_version([asset])
            ws.record("AddFeatureModelToAsset", [ws.tree.path_of(asset)],
                      version, derived)
    return True


def remove_feature(ws: Workspace, feature: Feature, *,
                   derived: bool = False) -> bool:
    """Remove the feature and its sub-features; un-map survivors (literal
    becomes false); assets mapped only to removed features are removed."""
    fm = _model_of(ws, feature)
    if feature is fm.root:
        raise CannotRemoveRoot("the root feature cannot be removed")
    if feature is fm.unassigned:
        raise CannotRemoveUnassigned("the UNASSIGNED bucket cannot be removed")
    plan = plan_removal_cascade(ws, [], [feature])

    with ws.atomic(), ws.nested_operator() as top:
        address = feature_address(ws, feature)
        asset_parents, feature_parents, pc_touched = commit_removal_cascade(ws, plan)
        version = fm.version
        for owner_id, parents in feature_parents.items():
            owner = ws.tree.assets_by_id[owner_id]
            assert owner.feature_model is not None
            bumped = owner.feature_model.bump_version(parents)
            if owner.feature_model is fm:
                version = bumped
        if top:
            if asset_parents or pc_touched:
                touched = asset_parents + [a for a in pc_touched
                                           if a not in asset_parents]
                ws.tree.bump_global_version(touched)
            ws.record("RemoveFeature", [address], version, derived)
    return True


def move_feature(ws: Workspace, feature: Feature, new_parent: Feature, *,
                 derived: bool = False) -> bool:
    """Reparent within one model; across models: cloneFeature then
    removeFeature, logged as a single application."""
    fm = _model_of(ws, feature)
    target_fm = _model_of(ws, new_parent)
    if new_parent is feature or new_parent.is_descendant_of(feature):
        raise CannotMoveIntoDescendant(
            f"cannot move {feature.name!r} into its own subtree")
    if feature is fm.root:
        raise CannotRemoveRoot("the root feature cannot be moved")
    if feature is fm.unassigned:
        raise CannotRemoveUnassigned("the UNASSIGNED bucket cannot be moved")

    src_address = feature_address(ws, feature)
    tgt_address = feature_address(ws, new_parent)
    if target_fm is fm:
        with ws.nested_operator() as top:
            fm.detach(feature)
            fm.insert(feature, new_parent)
            version = fm.bump_version([feature])
            if top:
                ws.record("MoveFeature", [src_address, tgt_address],
                          version, derived)
        return True

    with ws.atomic():
        mark = len(ws.log)
        clone_feature(ws, feature, new_parent)
        remove_feature(ws, feature)
        del ws.log[mark:]
        ws.record("MoveFeature", [src_address, tgt_address],
                  target_fm.version, derived)
    return True


def make_feature_optional(ws: Workspace, feature: Feature, *,
                          derived: bool = False) -> bool:
    """Set the optional flag; idempotent, still a versioned model change."""
    fm = _model_of(ws, feature)
    with ws.nested_operator() as top:
        feature.optional = True
        version = fm.bump_version([feature])
        if top:
            ws.record("MakeFeatureOptional", [feature_address(ws, feature)],
                      version, derived)
    return True


class _FeatureOpState:
    """Accumulators shared by one clone/propagate application."""

    def __init__(self, ws: Workspace, src_fm: FeatureModel,
                 tgt_fm: FeatureModel) -> None:
        self.ws = ws
        self.src_fm = src_fm
        self.tgt_fm = tgt_fm
        self.src_owner = ws.tree.feature_model_owner(src_fm)
        self.tgt_owner = ws.tree.feature_model_owner(tgt_fm)
        self.created_features: list[Feature] = []
        self.changed_features: list[Feature] = []
        self.created_assets: list[tuple[Asset, Asset]] = []

    def finish(self, ws: Workspace, top_target: Feature) -> int:
        version = self.tgt_fm.bump_version(
            [top_target] + self.created_features + self.changed_features)
        if self.created_assets:
            created = {a.id for a, _ in self.created_assets}
            parents: list[Asset] = []
            for _, parent in self.created_assets:
                if parent.id not in created and parent not in parents:
                    parents.append(parent)
            ws.tree.bump_global_version(parents)
        for f in self.created_features:
            recompute_incomplete(ws, f)
        return version


def _clone_in_subtree(ws: Workspace, source: Asset,
                      scope_root: Asset) -> Optional[Asset]:
    for cid in ws.traces.asset_clone_ids(source.id):
        clone = ws.asset_by_id(cid)
        if clone is not None and (clone is scope_root
                                  or clone.is_descendant_of(scope_root)):
            return clone
    return None


def _materialize_clone(ws: Workspace, asset: Asset,
                       state: _FeatureOpState) -> Asset:
    """Ensure a clone of a mapped asset exists in the target scope, slicing
    the ancestor chain and reusing containers already cloned (dedup by trace)."""
    existing = _clone_in_subtree(ws, asset, state.tgt_owner)
    if existing is not None:
        return existing
    chain: list[Asset] = []
    node: Optional[Asset] = asset
    while node is not state.src_owner:
        assert node is not None, "mapped asset escaped its feature-model scope"
        chain.append(node)
        node = node.parent
    chain.reverse()

    cursor = state.tgt_owner
    for container in chain[:-1]:
        reuse = None
        for child in cursor.sub_assets:
            if ws.traces.is_asset_clone(container.id, child.id):
                reuse = child
                break
        if reuse is not None:
            cursor = reuse
            continue
        dup = ws.tree.new_asset(container.name, container.kind, container.content)
        dup.version = container.version
        ws.tree.attach(dup, cursor)
        ws.traces.add_asset_trace(container.id, dup.id, container.version)
        state.created_assets.append((dup, cursor))
        cursor = dup

    leaf = ws.tree.deep_clone(asset)
    ws.tree.attach(leaf, cursor)
    state.created_assets.append((leaf, cursor))
    for orig, copy in zip(asset.walk(), leaf.walk()):
        ws.traces.add_asset_trace(orig.id, copy.id, orig.version)
    # descendant PCs travel verbatim; make their features resolvable
    for node in asset.walk():
        if node is asset:
            continue
        for name in node.mapped_features():
            _ensure_feature_clone(ws, name, state.src_fm, state.tgt_fm,
                                  state.created_features)
    return leaf


def _clone_feature_rec(ws: Workspace, source: Feature, target: Feature,
                       state: _FeatureOpState) -> Feature:
    clone = clone_feature_node(source)
    state.tgt_fm.insert(clone, target)
    ws.tree.register_feature(clone)
    state.created_features.append(clone)
    for asset in ws.tree.mapped_assets(state.src_fm, source.name):
        if asset is state.src_owner:
            continue  # the scope root itself cannot be sliced
        leaf = _materialize_clone(ws, asset, state)
        if clone.name not in leaf.mapped_features():
            leaf.pc = pc_mod.disjoin_feature(leaf.pc, clone.name)
    assert source.id is not None and clone.id is not None
    ws.traces.add_feature_trace(source.id, clone.id, state.src_fm.version)
    for sub in source.sub_features:
        _clone_feature_rec(ws, sub, clone, state)
    return clone


def clone_feature(ws: Workspace, source_feature: Feature,
                  target_feature: Feature, *, derived: bool = False) -> Feature:
    """Clone a feature (and sub-features) under the target feature, slicing
    every mapped asset into the target scope; traces for both sides."""
    src_fm = _model_of(ws, source_feature)
    tgt_fm = _model_of(ws, target_feature)
    for node in source_feature.walk():
        if tgt_fm.find(node.name) is not None:
            raise DuplicateFeatureName(node.name)

    with ws.atomic(), ws.nested_operator() as top:
        src_address = feature_address(ws, source_feature)
        tgt_address = feature_address(ws, target_feature)
        state = _FeatureOpState(ws, src_fm, tgt_fm)
        clone = _clone_feature_rec(ws, source_feature, target_feature, state)
        version = state.finish(ws, target_feature)
        if top:
            ws.record("CloneFeature", [src_address, tgt_address], version, derived)
    return clone


def _propagate_feature_rec(ws: Workspace, source: Feature, target: Feature,
                           state: _FeatureOpState) -> None:
    if source.name != target.name:
        if state.tgt_fm.find(source.name) is not None:
            raise DuplicateFeatureName(source.name)
        target.name = source.name
    target.optional = source.optional
    target.group_kind = source.group_kind
    state.changed_features.append(target)
    for asset in ws.tree.mapped_assets(state.src_fm, source.name):
        if asset is state.src_owner:
            continue
        if _clone_in_subtree(ws, asset, state.tgt_owner) is None:
            leaf = _materialize_clone(ws, asset, state)
            if target.name not in leaf.mapped_features():
                leaf.pc = pc_mod.disjoin_feature(leaf.pc, target.name)
    assert source.id is not None and target.id is not None
    ws.traces.add_feature_trace(source.id, target.id, state.src_fm.version)
    for sub in source.sub_features:
        sub_clone = None
        for candidate in target.sub_features:
            if ws.traces.is_feature_clone(sub.id, candidate.id):
                sub_clone = candidate
                break
        if sub_clone is None:
            _clone_feature_rec(ws, sub, target, state)
        else:
            trace = ws.traces.latest_feature_trace(sub.id, sub_clone.id)
            assert trace is not None
            if detect_feature_changes(sub, trace.version_at):
                _propagate_feature_rec(ws, sub, sub_clone, state)


def propagate_feature(ws: Workspace, source_feature: Feature,
                      target_feature: Feature, *, derived: bool = False) -> bool:
    """Replicate feature changes (rename, flags, new sub-features, newly
    mapped assets) to a recorded clone; no-op when nothing changed."""
    src_fm = _model_of(ws, source_feature)
    tgt_fm = _model_of(ws, target_feature)
    trace = ws.traces.latest_feature_trace(source_feature.id, target_feature.id)
    if trace is None:
        raise NotAClone(f"{target_feature.name!r} is not a recorded clone of "
                        f"{source_feature.name!r}")
    if not detect_feature_changes(source_feature, trace.version_at):
        return False

    with ws.atomic(), ws.nested_operator() as top:
        src_address = feature_address(ws, source_feature)
        tgt_address = feature_address(ws, target_feature)
        state = _FeatureOpState(ws, src_fm, tgt_fm)
        _propagate_feature_rec(ws, source_feature, target_feature, state)
        version = state.finish(ws, target_feature)
        recompute_incomplete(ws, target_feature)
        if top:
            ws.record("PropagateFeature", [src_address, tgt_address],
                      version, derived)
    return True


def recompute_incomplete(ws: Workspace, feature: Feature) -> None:
    """incomplete is true iff the feature is a clone and some asset mapped
    to its source has no clone inside this feature's scope."""
    try:
        fm = _model_of(ws, feature)
    except NotFound:
        return
    owner = ws.tree.feature_model_owner(fm)
    traces = [t for t in ws.traces.feature_traces if t.clone_id == feature.id]
    if not traces:
        feature.incomplete = False
        return
    latest = max(traces, key=lambda t: t.seq)
    source = ws.feature_by_id(latest.source_id)
    if source is None:
        feature.incomplete = False
        return
    try:
        src_fm = _model_of(ws, source)
    except NotFound:
        feature.incomplete = False
        return
    for asset in ws.tree.mapped_assets(src_fm, source.name):
        if asset is ws.tree.feature_model_owner(src_fm):
            continue
        if _clone_in_subtree(ws, asset, owner) is None:
            feature.incomplete = True
            return
    feature.incomplete = False
