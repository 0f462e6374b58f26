import json
import os
import random

import pytest

from provstp.cache import (
    CacheState,
    EvictionStore,
    energy,
    evict,
    hopset_from_doc,
    hopset_to_doc,
    insert_or_merge,
    lookup,
)
from provstp.stp import Hopset, MemberRec, hopset_id, hopset_score


def make_hopset(term, leaf_scores, attrs=None, ops=None):
    members = {term: MemberRec(1.0, 0, 100.0)}
    edges = set()
    edge_ops = {}
    for leaf, sc in leaf_scores.items():
        members[leaf] = MemberRec(sc, 1, 10.0 + sc)
        e = (term, leaf) if term < leaf else (leaf, term)
        edges.add(e)
        edge_ops[e] = (ops or {}).get(leaf, "read")
    h = Hopset({term}, members, edges, attrs=dict(attrs or {}), edge_ops=edge_ops)
    h.has = hopset_score(h)
    return h


def fresh_cache(tmp_path, capacity=100, theta=10):
    store = EvictionStore(str(tmp_path / "store"))
    return CacheState(store=store, capacity=capacity, theta=theta)


def audit(c):
    expect = {}
    for hid, h in c.entries.items():
        for n in h.members:
            assert n not in expect, "node owned by two resident hopsets"
            expect[n] = hid
    assert c.node_index == expect


def same_content(a, b):
    return (a.terminals == b.terminals and a.members == b.members
            and a.edges == b.edges and a.has == b.has
            and a.attrs == b.attrs and a.edge_ops == b.edge_ops)


def test_energy_examples():
    h = Hopset({"t"}, {}, set(), has=10.0, age=0)
    assert energy(h, 0.8) == 10.0
    h.age = 2
    assert energy(h, 0.8) == pytest.approx(6.4)
    h.has = 0.0
    for age in (0, 1, 5):
        h.age = age
        assert energy(h, 0.8) == 0.0


def test_doc_round_trip_bit_exact():
    h = make_hopset("t0", {"f1": 0.1 + 0.2, "f2": -1.75},
                    attrs={"t0": {"kind": "Process", "name": "sh"}},
                    ops={"f1": "write"})
    h.age = 3
    h.last_window = 17
    doc = json.loads(json.dumps(hopset_to_doc(h), sort_keys=True))
    back = hopset_from_doc(doc)
    assert same_content(h, back)
    assert back.age == 3 and back.last_window == 17
    assert back.members["f1"].as_score == 0.1 + 0.2


def test_insert_into_empty_cache(tmp_path):
    c = fresh_cache(tmp_path)
    h = make_hopset("t0", {"f1": 0.5})
    insert_or_merge(c, [h], window_index=4)
    assert len(c.entries) == 1
    entry = next(iter(c.entries.values()))
    assert entry.age == 0
    assert entry.last_window == 4
    audit(c)


def test_untouched_entries_age(tmp_path):
    c = fresh_cache(tmp_path)
    insert_or_merge(c, [make_hopset("t0", {"f1": 0.5})], 0)
    for w in (1, 2, 3):
        insert_or_merge(c, [], w)
    entry = next(iter(c.entries.values()))
    assert entry.age == 3


def test_incoming_merges_with_resident(tmp_path):
    c = fresh_cache(tmp_path)
    insert_or_merge(c, [make_hopset("t0", {"shared": 0.5, "f1": 0.25})], 0)
    insert_or_merge(c, [make_hopset("t1", {"shared": 0.5, "g1": 0.25})], 1)
    assert len(c.entries) == 1
    entry = next(iter(c.entries.values()))
    assert entry.terminals == {"t0", "t1"}
    assert entry.age == 0
    assert set(entry.members) == {"t0", "t1", "shared", "f1", "g1"}
    assert entry.has == pytest.approx(1.0 + 1.0 + 0.5 + 0.25 + 0.25)
    audit(c)


def test_disjoint_incoming_ages_resident(tmp_path):
    c = fresh_cache(tmp_path)
    insert_or_merge(c, [make_hopset("t0", {"f1": 0.5})], 0)
    insert_or_merge(c, [make_hopset("t1", {"g1": 0.5})], 1)
    ages = sorted(h.age for h in c.entries.values())
    assert ages == [0, 1]
    audit(c)


def test_evict_under_capacity_noop(tmp_path):
    c = fresh_cache(tmp_path, capacity=100)
    insert_or_merge(c, [make_hopset("t0", {"f1": 0.5})], 0)
    assert evict(c) == []
    assert len(c.entries) == 1


def test_evict_lowest_energy(tmp_path):
    c = fresh_cache(tmp_path, capacity=10)
    low = make_hopset("t0", {"f%d" % i: 0.8 for i in range(5)})   # has = 5
    high = make_hopset("t1", {"g%d" % i: 1.6 for i in range(5)})  # has = 9
    assert low.has == pytest.approx(5.0)
    assert high.has == pytest.approx(9.0)
    insert_or_merge(c, [low, high], 0)
    assert c.member_total() == 12
    gone = evict(c)
    assert gone == [hopset_id(low)]
    assert list(c.entries) == [hopset_id(high)]
    assert c.member_total() == 6
    audit(c)
    assert os.path.exists(os.path.join(c.store.hopset_dir, gone[0] + ".json"))


def test_evict_then_lookup_restores_equal(tmp_path):
    c = fresh_cache(tmp_path, capacity=0)
    h = make_hopset("t0", {"f1": 0.1 + 0.2, "f2": 1.5},
                    attrs={"f1": {"kind": "File", "path": "/tmp/x"}},
                    ops={"f2": "write"})
    original = hopset_to_doc(h)
    insert_or_merge(c, [h], 0)
    assert evict(c) == [hopset_id(h)]
    assert c.entries == {}
    got, where = lookup(c, "f1")
    assert where == "restored"
    assert same_content(got, hopset_from_doc(original))
    assert got.age == 0
    # back in the cache, gone from the store
    assert lookup(c, "f2") == (got, "resident")
    assert c.store.find_node("f1") is None
    assert not os.path.exists(os.path.join(c.store.hopset_dir, hopset_id(h) + ".json"))
    audit(c)


def test_lookup_absent(tmp_path):
    c = fresh_cache(tmp_path)
    assert lookup(c, "nobody") == (None, "absent")


def test_lookup_corrupted_record(tmp_path):
    c = fresh_cache(tmp_path, capacity=0)
    h = make_hopset("t0", {"f1": 0.5})
    insert_or_merge(c, [h], 0)
    hid = evict(c)[0]
    path = os.path.join(c.store.hopset_dir, hid + ".json")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("{not json")
    with pytest.raises(IOError, match=hid):
        lookup(c, "f1")


def test_eviction_follows_energy_order(tmp_path):
    rng = random.Random(31)
    c = fresh_cache(tmp_path, capacity=0)
    hs = []
    for i in range(12):
        h = make_hopset("t%02d" % i, {"n%02d" % i: rng.uniform(0.1, 5.0)})
        h.age = rng.randrange(0, 4)
        hs.append(h)
    for h in hs:
        c.entries[hopset_id(h)] = h
        for n in h.members:
            c.node_index[n] = hopset_id(h)
    expected = [hopset_id(h) for h in
                sorted(hs, key=lambda h: (energy(h, c.epsilon), hopset_id(h)))]
    assert evict(c) == expected
    assert c.entries == {}


def test_store_index_persists(tmp_path):
    root = str(tmp_path / "store")
    store = EvictionStore(root)
    h = make_hopset("t0", {"f1": 0.5})
    hid = store.store(h)
    again = EvictionStore(root)
    assert again.find_node("f1") == hid
    assert same_content(again.load(hid), h)


def test_node_index_audit_under_random_ops(tmp_path):
    rng = random.Random(7)
    c = fresh_cache(tmp_path, capacity=8)
    all_nodes = []
    for w in range(25):
        batch = []
        for _ in range(rng.randrange(0, 3)):
            term = "t%03d" % rng.randrange(40)
            leaves = {"n%03d" % rng.randrange(60): rng.uniform(0.1, 2.0)
                      for _ in range(rng.randrange(1, 4))}
            h = make_hopset(term, leaves)
            batch.append(h)
            all_nodes.extend(h.members)
        # window-level disjointness: merge any overlapping incoming first
        from provstp.stp import merge_hopsets
        batch = merge_hopsets(batch, c.theta)
        for h in batch:
            for n in list(h.members):
                got, _ = lookup(c, n)
        insert_or_merge(c, batch, w)
        evict(c)
        audit(c)
        assert c.member_total() <= c.capacity
        resident = set(c.node_index)
        stored = set(c.store.node_index)
        assert not (resident & stored)
        for n in rng.sample(all_nodes, min(3, len(all_nodes))):
            got, where = lookup(c, n)
            if where == "absent":
                assert got is None
            else:
                assert n in got.members
        evict(c)
        audit(c)
