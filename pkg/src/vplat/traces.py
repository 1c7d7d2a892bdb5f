"""Clone provenance: append-only (source, clone, versionAt) triplets."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .errors import SelfTrace


@dataclass(frozen=True)
class Trace:
    source_id: int
    clone_id: int
    version_at: int
    seq: int

    def links(self, a: int, b: int) -> bool:
        return {self.source_id, self.clone_id} == {a, b}


class TraceDatabase:
    """Append-only stores for asset and feature traces.

    A shared sequence number keeps insertion order recoverable; nothing is
    ever deleted, removals leave historical traces in place.
    """

    def __init__(self) -> None:
        self.asset_traces: list[Trace] = []
        self.feature_traces: list[Trace] = []
        self._next_seq = 1

    def _append(self, store: list[Trace], source_id: int, clone_id: int,
                version_at: int) -> Trace:
        if source_id == clone_id:
            raise SelfTrace(f"trace would link id {source_id} to itself")
        trace = Trace(source_id, clone_id, version_at, self._next_seq)
        self._next_seq += 1
        store.append(trace)
        return trace

    def add_asset_trace(self, source_id: int, clone_id: int,
                        version_at: int) -> Trace:
        return self._append(self.asset_traces, source_id, clone_id, version_at)

    def add_feature_trace(self, source_id: int, clone_id: int,
                          version_at: int) -> Trace:
        return self._append(self.feature_traces, source_id, clone_id, version_at)

    @staticmethod
    def _latest(store: list[Trace], a: int, b: int) -> Optional[Trace]:
        best: Optional[Trace] = None
        for t in store:
            if t.links(a, b) and (best is None or t.seq > best.seq):
                best = t
        return best

    def latest_asset_trace(self, a: int, b: int) -> Optional[Trace]:
        """Highest-seq trace linking the pair in either direction."""
        return self._latest(self.asset_traces, a, b)

    def latest_feature_trace(self, a: int, b: int) -> Optional[Trace]:
        return self._latest(self.feature_traces, a, b)

    def is_asset_clone(self, a: int, b: int) -> bool:
        return any(t.links(a, b) for t in self.asset_traces)

    def is_feature_clone(self, a: int, b: int) -> bool:
        return any(t.links(a, b) for t in self.feature_traces)

    def asset_clone_ids(self, source_id: int) -> list[int]:
        """Direct clones only; transitivity is left to callers."""
        out: list[int] = []
        for t in self.asset_traces:
            if t.source_id == source_id and t.clone_id not in out:
                out.append(t.clone_id)
        return out

    def feature_clone_ids(self, source_id: int) -> list[int]:
        out: list[int] = []
        for t in self.feature_traces:
            if t.source_id == source_id and t.clone_id not in out:
                out.append(t.clone_id)
        return out
