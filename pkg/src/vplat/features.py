"""Features and feature models: hierarchy, group kinds, versioning."""

from __future__ import annotations

import enum
from typing import Iterator, Optional

from .errors import DuplicateFeatureName, NotFound
from .pc import check_feature_name

UNASSIGNED_NAME = "UNASSIGNED"


class GroupKind(enum.Enum):
    AND = "and"
    OR = "or"
    XOR = "xor"


class Feature:
    """One node of a feature model.

    ``group_kind`` describes the relationship of this feature's children.
    ``version`` is 0 until the feature is part of an attached model.
    """

    def __init__(self, name: str, *, optional: bool = False,
                 group_kind: GroupKind = GroupKind.AND) -> None:
        self.id: Optional[int] = None
        self.name = check_feature_name(name)
        self.optional = optional
        self.incomplete = False
        self.group_kind = group_kind
        self.version = 0
        self.parent: Optional[Feature] = None
        self.sub_features: list[Feature] = []

    def __repr__(self) -> str:
        return f"Feature({self.name!r}, id={self.id}, v{self.version})"

    def walk(self) -> Iterator[Feature]:
        yield self
        for child in self.sub_features:
            yield from child.walk()

    def is_descendant_of(self, other: Feature) -> bool:
        node = self.parent
        while node is not None:
            if node is other:
                return True
            node = node.parent
        return False

    def path_segments(self) -> list[str]:
        segs = [self.name]
        node = self.parent
        while node is not None:
            segs.append(node.name)
            node = node.parent
        return list(reversed(segs))


class FeatureModel:
    """A feature tree with the mandatory UNASSIGNED bucket.

    The model's global version lives on the root feature and starts at 1.
    """

    def __init__(self, root: Feature | str) -> None:
        self.root = Feature(root) if isinstance(root, str) else root
        self.root.version = max(self.root.version, 1)
        bucket = self.find(UNASSIGNED_NAME)
        if bucket is None or bucket.parent is not self.root:
            bucket = Feature(UNASSIGNED_NAME)
            bucket.version = self.root.version
            self._attach(bucket, self.root)
        self.unassigned = bucket

    def __repr__(self) -> str:
        return f"FeatureModel({self.root.name!r}, v{self.version})"

    @property
    def version(self) -> int:
        return self.root.version

    def features(self) -> Iterator[Feature]:
        return self.root.walk()

    def find(self, name: str) -> Optional[Feature]:
        for f in self.root.walk():
            if f.name == name:
                return f
        return None

    def contains(self, feature: Feature) -> bool:
        return any(f is feature for f in self.root.walk())

    def _attach(self, feature: Feature, parent: Feature) -> None:
        feature.parent = parent
        parent.sub_features.append(feature)

    def insert(self, feature: Feature, parent: Feature) -> None:
        """Structural insertion with name-uniqueness check (no versioning)."""
        for node in feature.walk():
            if self.find(node.name) is not None:
                raise DuplicateFeatureName(node.name)
        self._attach(feature, parent)

    def detach(self, feature: Feature) -> Feature:
        assert feature.parent is not None
        feature.parent.sub_features.remove(feature)
        feature.parent = None
        return feature

    def bump_version(self, touched: list[Feature]) -> int:
        """Increment the model version and stamp the touched features."""
        new = self.root.version + 1
        self.root.version = new
        for f in touched:
            f.version = new
        return new


def resolve_feature_path(fm: FeatureModel, path: str | list[str]) -> Feature:
    """Resolve root-anchored segments ("BC/DIV") to a unique feature."""
    segments = path.split("/") if isinstance(path, str) else list(path)
    segments = [s for s in segments if s]
    if not segments or segments[0] != fm.root.name:
        raise NotFound(f"feature path {'/'.join(segments)!r} not in model {fm.root.name!r}")
    node = fm.root
    for seg in segments[1:]:
        for child in node.sub_features:
            if child.name == seg:
                node = child
                break
        else:
            raise NotFound(f"feature path {'/'.join(segments)!r} not found")
    return node


def feature_path(feature: Feature) -> str:
    return "/".join(feature.path_segments())


def detect_feature_changes(feature: Feature, since_version: int) -> bool:
    """True iff the feature or any sub-feature changed after ``since_version``."""
    return any(f.version > since_version for f in feature.walk())


def clone_feature_node(feature: Feature) -> Feature:
    """Copy name/flags/group of a single feature; fresh identity, version 0."""
    copy = Feature(feature.name, optional=feature.optional,
                   group_kind=feature.group_kind)
    copy.incomplete = feature.incomplete
    return copy
