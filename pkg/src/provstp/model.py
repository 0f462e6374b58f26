"""Graph model and node identity for audit-event provenance windows.

Nodes are processes, files, and socket 4-tuples.  Each entity gets a
deterministic md5 uuid so the same real-world object maps to the same
node across windows and across runs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Iterable, List, Set

PROCESS = "process"
FILE = "file"
IP = "ip"
KINDS = (PROCESS, FILE, IP)

FILE_OPS = ("read", "write", "create", "chmod", "rename")
PROCESS_OPS = ("fork", "clone", "execve", "pipe")
IP_OPS = ("sendto", "recvfrom", "recvmsg", "sendmsg")
ALL_OPS = frozenset(FILE_OPS + PROCESS_OPS + IP_OPS)

# op -> endpoint kinds as a sorted pair; direction does not matter for legality
_OP_ENDPOINTS = {}
for _op in FILE_OPS:
    _OP_ENDPOINTS[_op] = (FILE, PROCESS)
for _op in PROCESS_OPS:
    _OP_ENDPOINTS[_op] = (PROCESS, PROCESS)
for _op in IP_OPS:
    _OP_ENDPOINTS[_op] = (IP, PROCESS)


@dataclass(slots=True)
class ProcessAttrs:
    pid: int
    tid: int  # falls back to pid when the source omits it
    uid: int
    name: str
    cmdline: str
    host: str = ""


@dataclass(slots=True)
class FileAttrs:
    path: str
    host: str = ""


@dataclass(slots=True)
class IpAttrs:
    src_ip: str
    src_port: int
    dst_ip: str
    dst_port: int


@dataclass(slots=True)
class Edge:
    src: str  # NodeId digest
    dst: str
    op: str
    ts: int  # epoch milliseconds


def legal_op(op: str, src_kind: str, dst_kind: str) -> bool:
    """True when op is defined for this endpoint kind pair (either direction)."""
    pair = (src_kind, dst_kind) if src_kind <= dst_kind else (dst_kind, src_kind)
    return _OP_ENDPOINTS.get(op) == pair


@lru_cache(maxsize=1 << 20)
def _md5_hex(text: str) -> str:
    return hashlib.md5(text.encode("utf-8")).hexdigest()


def entity_uuid(kind: str, attrs) -> str:
    """Deterministic 32-char hex NodeId for an entity.

    Process identity is pid + tid + cmdline concatenated without
    separators, so a reused pid with a different command line is a new
    node.  Host is deliberately not part of the digest; cross-host
    activity links through ip nodes instead.
    """
    if kind == PROCESS:
        text = str(attrs.pid) + str(attrs.tid) + attrs.cmdline
    elif kind == FILE:
        text = attrs.path
    elif kind == IP:
        text = "%s:%d:%s:%d" % (attrs.src_ip, attrs.src_port, attrs.dst_ip, attrs.dst_port)
    else:
        raise ValueError("unknown entity kind: %r" % (kind,))
    return _md5_hex(text)


@dataclass(slots=True)
class NodeRec:
    kind: str
    attrs: object
    in_degree: int = 0
    out_degree: int = 0


class WindowGraph:
    """One window of the event stream plus its undirected unit-weight view.

    The directed edge multiset keeps parallel edges for forensics; the
    undirected adjacency collapses every (u, v) pair to a single edge of
    weight 1.  Built single-threaded, then treated as read-only.
    """

    def __init__(self, window_index: int = 0):
        self.window_index = window_index
        self.nodes: Dict[str, NodeRec] = {}
        self.edges: List[Edge] = []
        self.undirected: Dict[str, Set[str]] = {}
        self.rejected = 0  # events whose op was illegal for the endpoint kinds

    def _add_node(self, kind: str, attrs) -> str:
        nid = entity_uuid(kind, attrs)
        if nid not in self.nodes:
            self.nodes[nid] = NodeRec(kind, attrs)
            self.undirected[nid] = set()
        return nid

    def add_event(self, ev) -> bool:
        if not legal_op(ev.op, ev.src_kind, ev.dst_kind):
            self.rejected += 1
            return False
        src = self._add_node(ev.src_kind, ev.src)
        dst = self._add_node(ev.dst_kind, ev.dst)
        self.nodes[src].out_degree += 1
        self.nodes[dst].in_degree += 1
        self.edges.append(Edge(src, dst, ev.op, ev.ts))
        self.undirected[src].add(dst)
        self.undirected[dst].add(src)
        return True

    def processes(self) -> List[str]:
        return [nid for nid, rec in self.nodes.items() if rec.kind == PROCESS]

    def neighbors(self, nid: str) -> Set[str]:
        return self.undirected.get(nid, set())


def build_window_graph(events: Iterable, window_index: int = 0) -> WindowGraph:
    """Fold one window's events into a WindowGraph.

    Events whose op is illegal for their endpoint kinds are dropped and
    counted in graph.rejected; everything else merges by NodeId.
    """
    g = WindowGraph(window_index)
    for ev in events:
        g.add_event(ev)
    return g
