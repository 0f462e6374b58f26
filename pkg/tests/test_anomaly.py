from __future__ import annotations

import math

import numpy as np
import pytest

from provstp.anomaly import (
    VaeConfig,
    VaeModel,
    _init_params,
    anomaly_score,
    build_stability_table,
    calibrate_threshold,
    dbscan,
    reconstruction_error,
    reconstruction_errors,
    train_vae,
    vae_loss_and_grads,
)


def oracle_dbscan(X, eps, min_pts):
    """Quadratic union-find DBSCAN, written independently of the kernels."""
    n = len(X)
    pts = [list(map(float, row)) for row in X]
    eps2 = eps * eps

    def d2(i, j):
        return sum((a - b) ** 2 for a, b in zip(pts[i], pts[j]))

    nbrs = [[j for j in range(n) if d2(i, j) <= eps2] for i in range(n)]
    core = [len(nbrs[i]) >= min_pts for i in range(n)]
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i in range(n):
        if core[i]:
            for j in nbrs[i]:
                if core[j]:
                    ri, rj = find(i), find(j)
                    if ri != rj:
                        parent[max(ri, rj)] = min(ri, rj)
    labels = [-1] * n
    cluster_of_root = {}
    for i in range(n):
        if core[i]:
            r = find(i)
            if r not in cluster_of_root:
                cluster_of_root[r] = len(cluster_of_root)
            labels[i] = cluster_of_root[r]
    for i in range(n):
        if not core[i]:
            owning = [labels[j] for j in nbrs[i] if core[j]]
            if owning:
                labels[i] = min(owning)
    return labels


def _normalize(labels):
    remap = {}
    out = []
    for v in labels:
        v = int(v)
        if v == -1:
            out.append(-1)
            continue
        if v not in remap:
            remap[v] = len(remap)
        out.append(remap[v])
    return out


def test_vae_gradients_match_finite_differences():
    rs = np.random.RandomState(5)
    params = _init_params(4, 2, 1, rs)
    x = rs.randn(3, 4)
    eps = rs.randn(3, 1)
    _, grads = vae_loss_and_grads(params, x, eps, 1.0)
    h = 1e-5
    for k in params:
        fd = np.zeros_like(params[k])
        it = np.nditer(params[k], flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = params[k][idx]
            params[k][idx] = orig + h
            lp, _ = vae_loss_and_grads(params, x, eps, 1.0)
            params[k][idx] = orig - h
            lm, _ = vae_loss_and_grads(params, x, eps, 1.0)
            params[k][idx] = orig
            fd[idx] = (lp - lm) / (2 * h)
        rel = np.abs(grads[k] - fd) / np.maximum(1e-4, np.abs(grads[k]) + np.abs(fd))
        assert rel.max() < 1e-4, k


def test_train_vae_deterministic(tmp_path):
    rs = np.random.RandomState(0)
    data = rs.randn(40, 8)
    cfg = VaeConfig(hidden=6, latent=2, epochs=5, seed=21)
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    train_vae(data, cfg).save(str(a))
    train_vae(data, cfg).save(str(b))
    assert a.read_bytes() == b.read_bytes()


def test_train_vae_reduces_error_on_repeated_vector():
    rs = np.random.RandomState(3)
    v = rs.randn(16)
    data = np.tile(v, (200, 1))
    before = train_vae(data, VaeConfig(hidden=8, latent=3, epochs=0, seed=4))
    after = train_vae(data, VaeConfig(hidden=8, latent=3, epochs=50, seed=4))
    assert reconstruction_error(after, v) < reconstruction_error(before, v)


def test_train_vae_loss_strictly_decreases_early():
    rs = np.random.RandomState(1)
    data = np.vstack([rs.randn(100, 16) * 0.5 + 2.0, rs.randn(100, 16) * 0.5 - 2.0])
    m = train_vae(data, VaeConfig(hidden=8, latent=3, epochs=10, seed=3))
    for i in range(9):
        assert m.epoch_losses[i + 1] < m.epoch_losses[i]


def test_train_vae_needs_two_vectors():
    with pytest.raises(ValueError):
        train_vae(np.ones((1, 4)), VaeConfig(epochs=1))


def test_reconstruction_error_formula():
    cfg = VaeConfig(hidden=2, latent=1)
    zeros = {k: np.zeros_like(v) for k, v in _init_params(2, 2, 1, np.random.RandomState(0)).items()}
    m = VaeModel(2, cfg, zeros)  # all-zero params reconstruct to the zero vector
    assert reconstruction_error(m, np.array([1.0, 0.0])) == pytest.approx(0.5)
    assert reconstruction_error(m, np.zeros(2)) == pytest.approx(0.0)


def test_held_out_benign_reconstructs_better_than_random():
    rs = np.random.RandomState(2)
    train = np.vstack([rs.randn(150, 16) * 0.4 + 1.5, rs.randn(150, 16) * 0.4 - 1.5])
    m = train_vae(train, VaeConfig(hidden=16, latent=4, epochs=40, seed=9))
    held = np.vstack([rs.randn(25, 16) * 0.4 + 1.5, rs.randn(25, 16) * 0.4 - 1.5])
    rnd = rs.randn(50, 16)
    rnd = rnd / np.linalg.norm(rnd, axis=1, keepdims=True) * np.linalg.norm(held, axis=1, keepdims=True)
    assert reconstruction_errors(m, held).mean() < reconstruction_errors(m, rnd).mean()


def test_dbscan_two_blobs():
    rs = np.random.RandomState(7)
    a = rs.randn(12, 3) * 0.05
    b = rs.randn(12, 3) * 0.05 + 100.0
    labels = dbscan(np.vstack([a, b]), eps=1.0, min_pts=3)
    assert set(labels.tolist()) == {0, 1}
    assert len(set(labels[:12].tolist())) == 1 and len(set(labels[12:].tolist())) == 1


def test_dbscan_all_noise():
    pts = np.array([[0.0], [10.0], [20.0], [30.0]])
    labels = dbscan(pts, eps=1.0, min_pts=2)
    assert all(v == -1 for v in labels)


@pytest.mark.parametrize("seed", range(12))
def test_dbscan_matches_bruteforce_oracle(seed):
    rs = np.random.RandomState(seed)
    n = rs.randint(20, 80)
    centers = rs.randn(rs.randint(1, 5), 3) * 4.0
    pts = np.vstack([c + rs.randn(n // len(centers) + 1, 3) * rs.uniform(0.2, 1.0)
                     for c in centers])[:n]
    eps = rs.uniform(0.4, 1.5)
    min_pts = rs.randint(2, 6)
    ours = _normalize(dbscan(pts, eps, min_pts))
    ref = _normalize(oracle_dbscan(pts, eps, min_pts))
    assert ours == ref


def test_stability_identical_vectors():
    vecs = [np.zeros(4)] * 10
    table = build_stability_table({"nginx": vecs})
    assert table.get("nginx") == 1


def test_stability_scattered_vectors():
    vecs = [np.full(4, 100.0 * i) for i in range(5)]
    table = build_stability_table({"chaotic": vecs}, eps=0.5, min_pts=3)
    assert table.get("chaotic") == 5


def test_stability_unseen_name_defaults_to_one():
    table = build_stability_table({})
    assert table.get("whoami") == 1


def test_stability_round_trip(tmp_path):
    table = build_stability_table({"a": [np.zeros(2)] * 5, "b": [np.array([i * 50.0, 0]) for i in range(4)]})
    p = str(tmp_path / "stab.json")
    table.save(p)
    loaded = type(table).load(p)
    assert loaded.sv == table.sv and loaded.eps == table.eps


def test_anomaly_score_examples():
    assert anomaly_score(1.0, 1) == pytest.approx(0.0, abs=1e-9)
    assert anomaly_score(math.e, 1) == pytest.approx(1.0, abs=1e-9)
    assert anomaly_score(0.5, 5) == pytest.approx(math.log(0.1), abs=1e-9)


def test_anomaly_score_monotone():
    assert anomaly_score(2.0, 1) > anomaly_score(1.0, 1)
    assert anomaly_score(1.0, 2) < anomaly_score(1.0, 1)
    assert math.isfinite(anomaly_score(0.0, 1))


def test_calibrate_threshold_nearest_rank():
    assert calibrate_threshold(list(range(1, 11))).tau == 9
    assert calibrate_threshold([5.0] * 7).tau == 5.0
    assert calibrate_threshold(list(range(1, 21))).tau == 18
    assert calibrate_threshold([3.0, 1.0]).tau == 3.0  # rank ceil(1.8) = 2


def test_calibrate_threshold_empty_errors():
    with pytest.raises(ValueError):
        calibrate_threshold([])
