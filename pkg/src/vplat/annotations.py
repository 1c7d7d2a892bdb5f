"""Readers/writers for the three external formats: ``.vp-project`` feature
models, ``.vp-folder``/``.vp-files`` mappings, and embedded code annotations
(``&begin``/``&end``/``&line``); plus annotation-driven file structure."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass

from . import pc as pc_mod
from .assets import Asset, AssetKind, AssetTree
from .errors import (
    BadFeatureName,
    BadIndent,
    BadMappingLine,
    DuplicateFeatureName,
    EmptyDocument,
    MismatchedEnd,
    MultipleRoots,
    OverlapWithoutNesting,
    UnbalancedAnnotation,
)
from .features import Feature, FeatureModel, GroupKind, UNASSIGNED_NAME

_GROUP_KEYWORDS = {"and": GroupKind.AND, "or": GroupKind.OR, "xor": GroupKind.XOR}


def parse_feature_model_file(text: str) -> FeatureModel:
    """Build a feature model from tab-indented lines; a leading or/xor/and
    keyword on a first child sets the parent's group kind."""
    stack: list[Feature] = []
    root: Feature | None = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        if not raw.strip():
            continue
        depth = len(raw) - len(raw.lstrip("\t"))
        body = raw[depth:]
        if body != body.lstrip():
            raise BadIndent(f"line {lineno}: indentation must use tabs only")
        if depth > len(stack):
            raise BadIndent(f"line {lineno}: indentation jumps by more than one")
        keyword: GroupKind | None = None
        name = body.rstrip()
        first, _, rest = name.partition(" ")
        if first in _GROUP_KEYWORDS and rest.strip():
            keyword = _GROUP_KEYWORDS[first]
            name = rest.strip()
        feature = Feature(name)
        feature.version = 1
        if depth == 0:
            if root is not None:
                raise MultipleRoots(f"line {lineno}: second root feature {name!r}")
            root = feature
            stack = [feature]
            continue
        if root is None:
            raise BadIndent("line 1: document must start at depth 0")
        parent = stack[depth - 1]
        if keyword is not None and not parent.sub_features:
            parent.group_kind = keyword
        feature.parent = parent
        parent.sub_features.append(feature)
        stack[depth:] = [feature]
    if root is None:
        raise EmptyDocument("feature model document has no feature lines")
    names = [f.name for f in root.walk()]
    duplicates = {n for n in names if names.count(n) > 1}
    if duplicates:
        raise DuplicateFeatureName(
            f"duplicate feature names: {', '.join(sorted(duplicates))}")
    fm = FeatureModel(root)
    fm.unassigned.version = 1
    return fm


def serialize_feature_model(fm: FeatureModel) -> str:
    """Canonical emission: tabs for depth, group keyword once on the first
    child of a non-And parent, empty UNASSIGNED omitted, LF line ends."""
    lines: list[str] = []

    def emit(feature: Feature, depth: int) -> None:
        if feature is fm.unassigned and not feature.sub_features:
            return
        first_child = (feature.parent is not None
                       and feature.parent.sub_features
                       and feature.parent.sub_features[0] is feature)
        prefix = ""
        if (first_child and feature.parent is not None
                and feature.parent.group_kind is not GroupKind.AND):
            prefix = feature.parent.group_kind.value + " "
        lines.append("\t" * depth + prefix + feature.name)
        for child in feature.sub_features:
            emit(child, depth + 1)

    emit(fm.root, 0)
    return "\n".join(lines) + "\n"


class SpanKind(enum.Enum):
    BLOCK = "block"
    LINE = "line"


@dataclass(frozen=True)
class AnnotationSpan:
    features: tuple[str, ...]
    start_line: int  # 1-based, inclusive, marker lines included
    end_line: int
    kind: SpanKind


_MARKER_RE = re.compile(r"(?://|#|<!--)\s*&(begin|end|line)\[([^\]\n]*)\]")


def _feature_list(raw: str, lineno: int) -> tuple[str, ...]:
    parts = [p.strip() for p in raw.split(",")]
    if not parts or any(not p for p in parts):
        raise BadFeatureName(f"line {lineno}: empty feature name in annotation")
    for p in parts:
        pc_mod.check_feature_name(p)
    return tuple(parts)


def parse_annotations(text: str) -> list[AnnotationSpan]:
    """Match nested &begin/&end pairs (identical feature lists) and &line
    markers; crossing, mismatched or unbalanced markers are rejected."""
    spans: list[AnnotationSpan] = []
    stack: list[tuple[tuple[str, ...], int]] = []
    line_features: dict[int, list[str]] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        for match in _MARKER_RE.finditer(line):
            kind = match.group(1)
            features = _feature_list(match.group(2), lineno)
            if kind == "begin":
                stack.append((features, lineno))
            elif kind == "end":
                if not stack:
                    raise UnbalancedAnnotation(
                        f"line {lineno}: &end{list(features)} without &begin")
                if stack[-1][0] != features:
                    if any(entry[0] == features for entry in stack[:-1]):
                        raise OverlapWithoutNesting(
                            f"line {lineno}: &end[{','.join(features)}] crosses "
                            f"the open block [{','.join(stack[-1][0])}]")
                    raise MismatchedEnd(
                        f"line {lineno}: &end[{','.join(features)}] does not "
                        f"match &begin[{','.join(stack[-1][0])}]")
                _, start = stack.pop()
                spans.append(AnnotationSpan(features, start, lineno, SpanKind.BLOCK))
            else:
                bucket = line_features.setdefault(lineno, [])
                for f in features:
                    if f not in bucket:
                        bucket.append(f)
    if stack:
        features, start = stack[-1]
        raise UnbalancedAnnotation(
            f"line {start}: &begin[{','.join(features)}] is never closed")
    for lineno, features in line_features.items():
        spans.append(AnnotationSpan(tuple(features), lineno, lineno, SpanKind.LINE))
    spans.sort(key=lambda s: (s.start_line, -s.end_line,
                              0 if s.kind is SpanKind.BLOCK else 1))
    return spans


def build_file_structure(tree: AssetTree, file_asset: Asset,
                         spans: list[AnnotationSpan] | None = None,
                         apply_pcs: bool = True) -> Asset:
    """Rebuild a file's Block sub-assets from its annotation spans.

    Outermost spans become Blocks, nested spans nested Blocks; a block's PC
    is the disjunction of its feature list (skipped with ``apply_pcs=False``
    when the caller derives explicit mapping operators instead); the file
    keeps the full payload.
    """
    if spans is None:
        spans = parse_annotations(file_asset.content or "")
    for old in list(file_asset.sub_assets):
        if old.kind is AssetKind.BLOCK:
            old.parent = None
            file_asset.sub_assets.remove(old)

    lines = (file_asset.content or "").splitlines()

    def block_for(span: AnnotationSpan) -> Asset:
        name = "+".join(span.features) + "@" + str(span.start_line)
        content = "\n".join(lines[span.start_line - 1:span.end_line])
        block = tree.new_asset(name, AssetKind.BLOCK, content)
        if apply_pcs:
            for feature in span.features:
                block.pc = pc_mod.disjoin_feature(block.pc, feature)
        return block

    # spans are pre-sorted outer-first; a stack assembles the nesting
    open_blocks: list[tuple[AnnotationSpan, Asset]] = []
    for span in spans:
        while open_blocks and span.start_line > open_blocks[-1][0].end_line:
            open_blocks.pop()
        block = block_for(span)
        if open_blocks:
            parent = open_blocks[-1][1]
            block.parent = parent
            parent.sub_assets.append(block)
        else:
            block.parent = file_asset
            file_asset.sub_assets.append(block)
        open_blocks.append((span, block))
    return file_asset


class MappingScope(enum.Enum):
    FOLDER = "folder"
    FILES = "files"


@dataclass(frozen=True)
class MappingDocument:
    scope: MappingScope
    entries: tuple[tuple[str | None, tuple[str, ...]], ...]


def parse_mapping_file(text: str, scope: MappingScope) -> MappingDocument:
    """Folder scope: one feature name per line. Files scope: rows of
    ``filename<TAB>feature1,feature2``."""
    entries: list[tuple[str | None, tuple[str, ...]]] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if scope is MappingScope.FOLDER:
            pc_mod.check_feature_name(line)
            entries.append((None, (line,)))
        else:
            name, sep, feats = raw.rstrip("\r\n").partition("\t")
            if not sep or not name.strip() or not feats.strip():
                raise BadMappingLine(
                    f"line {lineno}: expected 'filename<TAB>feature,…'")
            entries.append((name.strip(), _feature_list(feats, lineno)))
    if not entries:
        raise EmptyDocument("mapping document has no entries")
    return MappingDocument(scope, tuple(entries))
