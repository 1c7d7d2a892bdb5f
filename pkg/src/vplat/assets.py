"""The asset tree: typed nodes, containment rules, paths, cloning, slicing."""

from __future__ import annotations

import enum
from typing import Iterator, Optional

from . import pc as pc_mod
from .errors import (
    CannotCloneRoot,
    DuplicateName,
    NoFeatureModelInScope,
    NotAnAncestor,
    NotContainable,
    NotFound,
)
from .features import Feature, FeatureModel
from .pc import TRUE, Pc


class AssetKind(enum.Enum):
    VP_ROOT = "VpRoot"
    REPOSITORY = "Repository"
    FOLDER = "Folder"
    FILE = "File"
    CLASS = "Class"
    METHOD = "Method"
    BLOCK = "Block"


# parent kind -> kinds it may contain
_CONTAINMENT: dict[AssetKind, frozenset[AssetKind]] = {
    AssetKind.VP_ROOT: frozenset({AssetKind.REPOSITORY}),
    AssetKind.REPOSITORY: frozenset({AssetKind.FOLDER, AssetKind.FILE}),
    AssetKind.FOLDER: frozenset({AssetKind.FOLDER, AssetKind.FILE}),
    AssetKind.FILE: frozenset({AssetKind.CLASS, AssetKind.METHOD, AssetKind.BLOCK}),
    AssetKind.CLASS: frozenset({AssetKind.CLASS, AssetKind.METHOD, AssetKind.BLOCK}),
    AssetKind.METHOD: frozenset({AssetKind.BLOCK}),
    AssetKind.BLOCK: frozenset({AssetKind.BLOCK}),
}


def containable(child: AssetKind, parent: AssetKind) -> bool:
    """Membership in the fixed containment order."""
    return child in _CONTAINMENT[parent]


class Asset:
    """One node of the asset tree.

    Version is 0 until the asset is inserted into a workspace tree; a
    mutation stamps the post-increment global version onto touched assets.
    """

    def __init__(self, asset_id: int, name: str, kind: AssetKind,
                 content: Optional[str] = None) -> None:
        if not name:
            raise ValueError("asset name must be non-empty")
        self.id = asset_id
        self.name = name
        self.kind = kind
        self.version = 0
        self.parent: Optional[Asset] = None
        self.sub_assets: list[Asset] = []
        self.pc: Pc = TRUE
        self.feature_model: Optional[FeatureModel] = None
        self.content = content

    def __repr__(self) -> str:
        return f"Asset({self.name!r}, {self.kind.value}, id={self.id}, v{self.version})"

    def walk(self) -> Iterator[Asset]:
        yield self
        for child in self.sub_assets:
            yield from child.walk()

    def child(self, name: str) -> Optional[Asset]:
        for c in self.sub_assets:
            if c.name == name:
                return c
        return None

    def depth(self) -> int:
        d = 0
        node = self.parent
        while node is not None:
            d += 1
            node = node.parent
        return d

    def is_descendant_of(self, other: Asset) -> bool:
        node = self.parent
        while node is not None:
            if node is other:
                return True
            node = node.parent
        return False

    def mapped_features(self) -> list[str]:
        return pc_mod.mapped_features(self.pc)


def annotate(asset: Asset, *feature_names: str) -> Asset:
    """Pre-insertion feature mapping: disjoin each name onto the PC."""
    for name in feature_names:
        asset.pc = pc_mod.disjoin_feature(asset.pc, name)
    return asset


class AssetTree:
    """The AT: a single VpRoot, workspace-unique ids, global versioning."""

    ROOT_NAME = "ROOT"

    def __init__(self) -> None:
        self._next_asset_id = 1
        self._next_feature_id = 1
        self.assets_by_id: dict[int, Asset] = {}
        self.features_by_id: dict[int, Feature] = {}
        self.root = self.new_asset(self.ROOT_NAME, AssetKind.VP_ROOT)
        self.root.version = 1

    @property
    def global_version(self) -> int:
        return self.root.version

    # -- identity ------------------------------------------------------

    def new_asset(self, name: str, kind: AssetKind,
                  content: Optional[str] = None) -> Asset:
        asset = Asset(self._next_asset_id, name, kind, content)
        self._next_asset_id += 1
        self.assets_by_id[asset.id] = asset
        return asset

    def register_feature(self, feature: Feature) -> None:
        if feature.id is None:
            feature.id = self._next_feature_id
            self._next_feature_id += 1
            self.features_by_id[feature.id] = feature

    def register_feature_model(self, fm: FeatureModel) -> None:
        for f in fm.features():
            self.register_feature(f)

    # -- structure -----------------------------------------------------

    def attach(self, child: Asset, parent: Asset) -> None:
        """Low-level edge insertion; operators validate before calling."""
        if not containable(child.kind, parent.kind):
            raise NotContainable(
                f"{child.kind.value} cannot be contained in {parent.kind.value}")
        if parent.child(child.name) is not None:
            raise DuplicateName(f"{child.name!r} already exists under {parent.name!r}")
        child.parent = parent
        parent.sub_assets.append(child)
        for node in child.walk():
            if node.feature_model is not None:
                self.register_feature_model(node.feature_model)

    def detach(self, asset: Asset) -> Asset:
        assert asset.parent is not None
        asset.parent.sub_assets.remove(asset)
        asset.parent = None
        return asset

    def in_tree(self, asset: Asset) -> bool:
        node = asset
        while node.parent is not None:
            node = node.parent
        return node is self.root

    def walk(self) -> Iterator[Asset]:
        return self.root.walk()

    # -- addressing ----------------------------------------------------

    def resolve(self, path: str | list[str]) -> Asset:
        segments = path.split("/") if isinstance(path, str) else list(path)
        segments = [s for s in segments if s]
        node = self.root
        for seg in segments:
            nxt = node.child(seg)
            if nxt is None:
                raise NotFound(f"no asset at path {'/'.join(segments)!r}")
            node = nxt
        return node

    def path_of(self, asset: Asset) -> str:
        if asset is self.root:
            return "/"
        segs: list[str] = []
        node: Optional[Asset] = asset
        while node is not None and node is not self.root:
            segs.append(node.name)
            node = node.parent
        if node is None:
            raise NotFound(f"asset {asset.name!r} is not attached to the tree")
        return "/".join(reversed(segs))

    # -- versioning ----------------------------------------------------

    def bump_global_version(self, touched: list[Asset]) -> int:
        new = self.root.version + 1
        self.root.version = new
        for asset in touched:
            asset.version = new
        return new

    # -- feature scope ---------------------------------------------------

    def ancestor_feature_model(self, asset: Asset) -> FeatureModel:
        """Feature model of the closest ancestor-or-self owning one."""
        node: Optional[Asset] = asset
        while node is not None:
            if node.feature_model is not None:
                return node.feature_model
            node = node.parent
        raise NoFeatureModelInScope(f"no feature model in scope of {asset.name!r}")

    def feature_model_owner(self, fm: FeatureModel) -> Asset:
        for asset in self.walk():
            if asset.feature_model is fm:
                return asset
        raise NotFound("feature model is not attached to this tree")

    def scope_assets(self, fm: FeatureModel) -> Iterator[Asset]:
        """Assets whose closest-ancestor feature model is ``fm``."""
        owner = self.feature_model_owner(fm)

        def walk_scope(asset: Asset) -> Iterator[Asset]:
            yield asset
            for child in asset.sub_assets:
                if child.feature_model is None:
                    yield from walk_scope(child)

        return walk_scope(owner)

    def mapped_assets(self, fm: FeatureModel, feature_name: str) -> list[Asset]:
        return [a for a in self.scope_assets(fm)
                if feature_name in a.mapped_features()]

    # -- copying ---------------------------------------------------------

    def deep_clone(self, source: Asset) -> Asset:
        """Structural copy with fresh ids; versions retained; top PC reset
        to true, descendant PCs preserved pending re-mapping."""
        if source.kind is AssetKind.VP_ROOT:
            raise CannotCloneRoot("the VpRoot asset cannot be cloned")

        def copy(node: Asset, top: bool) -> Asset:
            dup = self.new_asset(node.name, node.kind, node.content)
            dup.version = node.version
            dup.pc = TRUE if top else node.pc
            if node.feature_model is not None:
                dup.feature_model = _copy_feature_model(node.feature_model)
                self.register_feature_model(dup.feature_model)
            for child in node.sub_assets:
                sub = copy(child, top=False)
                sub.parent = dup
                dup.sub_assets.append(sub)
            return dup

        return copy(source, top=True)

    def get_slice(self, asset: Asset, ancestor: Asset) -> Asset:
        """Fresh single-child chain from ancestor's child down to a deep
        clone of ``asset``; no siblings included."""
        if asset is ancestor or not asset.is_descendant_of(ancestor):
            raise NotAnAncestor(
                f"{ancestor.name!r} is not a proper ancestor of {asset.name!r}")
        path: list[Asset] = []
        node: Optional[Asset] = asset
        while node is not ancestor:
            assert node is not None
            path.append(node)
            node = node.parent
        path.reverse()

        top: Optional[Asset] = None
        parent_copy: Optional[Asset] = None
        for original in path[:-1]:
            dup = self.new_asset(original.name, original.kind, original.content)
            dup.version = original.version
            if parent_copy is not None:
                dup.parent = parent_copy
                parent_copy.sub_assets.append(dup)
            else:
                top = dup
            parent_copy = dup
        leaf = self.deep_clone(asset)
        if parent_copy is not None:
            leaf.parent = parent_copy
            parent_copy.sub_assets.append(leaf)
        return top if top is not None else leaf


def _copy_feature_model(fm: FeatureModel) -> FeatureModel:
    def copy(feature: Feature) -> Feature:
        dup = Feature(feature.name, optional=feature.optional,
                      group_kind=feature.group_kind)
        dup.incomplete = feature.incomplete
        dup.version = feature.version
        for child in feature.sub_features:
            sub = copy(child)
            sub.parent = dup
            dup.sub_features.append(sub)
        return dup

    return FeatureModel(copy(fm.root))
