"""vplat: a feature- and clone-aware layer over a directory tree.

Records provenance meta-data during clone-and-own development and exploits
it through cloning, change-propagation, history-replay and cost-benefit
operators.
"""

from . import pc
from .assets import Asset, AssetKind, AssetTree, annotate, containable
from .errors import VplatError
from .features import (
    Feature,
    FeatureModel,
    GroupKind,
    detect_feature_changes,
    feature_path,
    resolve_feature_path,
)
from .traces import Trace, TraceDatabase
from .workspace import OperatorApplication, Workspace, load, save, workspace_lock
from .asset_ops import (
    add_asset,
    change_asset,
    clone_asset,
    make_consistent,
    map_asset_to_feature,
    move_asset,
    propagate_asset,
    remove_asset,
)
from .feature_ops import (
    add_feature,
    add_feature_model_to_asset,
    clone_feature,
    feature_address,
    make_feature_optional,
    move_feature,
    propagate_feature,
    remove_feature,
)
from .annotations import (
    AnnotationSpan,
    MappingDocument,
    MappingScope,
    SpanKind,
    build_file_structure,
    parse_annotations,
    parse_feature_model_file,
    parse_mapping_file,
    serialize_feature_model,
)
from .sync import ChangeEntry, ChangeSet, CloneLogEntry, apply_change_set, \
    diff_snapshots, scan
from .replay import (
    HistoryStep,
    ReplayResult,
    detect_propagations,
    read_clone_log,
    read_history_manifest,
    replay,
)
from .metrics import (
    CostModel,
    UsageCounts,
    break_even_seconds,
    cost_feat,
    tally,
    total_benefit,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
