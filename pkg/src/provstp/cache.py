"""Windowed hopset cache with energy decay and a file-backed eviction store.

Resident hopsets age by one per window; energy epsilon^age * has decides
who gets evicted to disk when the member budget is exceeded.  Evicted
hopsets come back through lookup() so long-running campaigns can be
stitched together across large time gaps.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .stp import Hopset, MemberRec, hopset_id, hopset_score, merge_hopsets

DEFAULT_CAPACITY = 10_000
DEFAULT_EPSILON = 0.8


def energy(h: Hopset, epsilon: float) -> float:
    return (epsilon ** h.age) * h.has


def hopset_to_doc(h: Hopset) -> dict:
    return {
        "terminals": sorted(h.terminals),
        "members": {n: {"as": rec.as_score, "hops": rec.hops, "iv": rec.iv}
                    for n, rec in sorted(h.members.items())},
        "edges": sorted(list(e) for e in h.edges),
        "has": h.has,
        "age": h.age,
        "last_window": h.last_window,
        "attrs": {n: h.attrs[n] for n in sorted(h.attrs)},
        "edge_ops": {"%s|%s" % e: op for e, op in sorted(h.edge_ops.items())},
    }


def hopset_from_doc(doc: dict) -> Hopset:
    members = {n: MemberRec(rec["as"], rec["hops"], rec["iv"])
               for n, rec in doc["members"].items()}
    edges = {(e[0], e[1]) for e in doc["edges"]}
    edge_ops = {}
    for key, op in doc.get("edge_ops", {}).items():
        u, _, v = key.partition("|")
        edge_ops[(u, v)] = op
    return Hopset(
        terminals=set(doc["terminals"]),
        members=members,
        edges=edges,
        has=doc["has"],
        age=doc["age"],
        last_window=doc["last_window"],
        attrs=dict(doc.get("attrs", {})),
        edge_ops=edge_ops,
    )


class EvictionStore:
    """Directory of hopset JSON records plus a node -> hopset-id index."""

    def __init__(self, root: str):
        self.root = root
        self.hopset_dir = os.path.join(root, "hopsets")
        self.index_path = os.path.join(root, "node_index.json")
        os.makedirs(self.hopset_dir, exist_ok=True)
        self.node_index: Dict[str, str] = {}
        if os.path.exists(self.index_path):
            with open(self.index_path, "r", encoding="utf-8") as fh:
                self.node_index = json.load(fh)

    def _record_path(self, hid: str) -> str:
        return os.path.join(self.hopset_dir, hid + ".json")

    def _flush_index(self):
        with open(self.index_path, "w", encoding="utf-8") as fh:
            json.dump(self.node_index, fh, sort_keys=True, indent=2)

    def store(self, h: Hopset) -> str:
        hid = hopset_id(h)
        with open(self._record_path(hid), "w", encoding="utf-8") as fh:
            json.dump(hopset_to_doc(h), fh, sort_keys=True, indent=2)
        for n in h.members:
            self.node_index[n] = hid
        self._flush_index()
        return hid

    def load(self, hid: str) -> Hopset:
        path = self._record_path(hid)
        try:
            with open(path, "r", encoding="utf-8") as fh:
                return hopset_from_doc(json.load(fh))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise IOError("corrupted store record %s: %s" % (path, exc)) from exc

    def remove(self, hid: str):
        path = self._record_path(hid)
        if os.path.exists(path):
            os.remove(path)
        self.node_index = {n: h for n, h in self.node_index.items() if h != hid}
        self._flush_index()

    def find_node(self, n: str) -> Optional[str]:
        return self.node_index.get(n)


@dataclass
class CacheState:
    store: EvictionStore
    capacity: int = DEFAULT_CAPACITY
    epsilon: float = DEFAULT_EPSILON
    theta: int = 10
    entries: Dict[str, Hopset] = field(default_factory=dict)
    node_index: Dict[str, str] = field(default_factory=dict)

    def member_total(self) -> int:
        return sum(len(h.members) for h in self.entries.values())


def _drop_entry(c: CacheState, hid: str) -> Hopset:
    h = c.entries.pop(hid)
    for n in h.members:
        if c.node_index.get(n) == hid:
            del c.node_index[n]
    return h


def _add_entry(c: CacheState, h: Hopset) -> str:
    hid = hopset_id(h)
    c.entries[hid] = h
    for n in h.members:
        c.node_index[n] = hid
    return hid


def insert_or_merge(c: CacheState, hs: List[Hopset], window_index: int) -> CacheState:
    """Fold the window's hopsets into the cache.

    Incoming hopsets that share a member with residents are merged with
    them (theta cap included) and reset to age 0; every resident that
    was not touched this window ages by one.
    """
    touched = set()
    for h in hs:
        h.age = 0
        h.last_window = window_index
        partners = sorted({c.node_index[n] for n in h.members if n in c.node_index})
        group = [h] + [_drop_entry(c, pid) for pid in partners]
        touched -= set(partners)
        for merged in merge_hopsets(group, c.theta):
            merged.age = 0
            merged.last_window = window_index
            merged.has = hopset_score(merged)
            touched.add(_add_entry(c, merged))
    for hid, h in c.entries.items():
        if hid not in touched:
            h.age += 1
    return c


def evict(c: CacheState) -> List[str]:
    """Push minimum-energy entries to the store until the member budget holds."""
    evicted = []
    while c.member_total() > c.capacity and c.entries:
        victim = min(c.entries, key=lambda hid: (energy(c.entries[hid], c.epsilon), hid))
        h = _drop_entry(c, victim)
        c.store.store(h)
        evicted.append(victim)
    return evicted


def lookup(c: CacheState, n: str) -> Tuple[Optional[Hopset], str]:
    """Find the hopset owning node n: resident, restored from disk, or absent.

    A hit on the eviction store moves the hopset back into the cache with
    age 0 and deletes the on-disk record.
    """
    hid = c.node_index.get(n)
    if hid is not None:
        return c.entries[hid], "resident"
    sid = c.store.find_node(n)
    if sid is not None:
        h = c.store.load(sid)
        h.age = 0
        c.store.remove(sid)
        _add_entry(c, h)
        return h, "restored"
    return None, "absent"
