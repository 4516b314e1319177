import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdjp.colorspace import LabImage
from cdjp.errors import DegenerateSplit, UnknownId, UnknownLayer
from cdjp.evalkit import (FeatureIndex, contact_sheet, extract_features, knn, linear_probe, load_model, probe_layers,
                          tower_layers, write_probe_report)
from cdjp.puzzlegen import GenConfig
from cdjp.tinynet import NetConfig, TinyNet, Trainer, TrainConfig, net_config_for


def _brute(vectors, metric, q, k):
    v = np.asarray(vectors, np.float64)
    if metric == "cosine":
        v = v / np.linalg.norm(v, axis=1, keepdims=True)
        d = np.array([1.0 - float(np.dot(v[q], v[j])) for j in range(len(v))])
    else:
        d = np.array([np.sqrt(np.sum((v[q] - v[j]) ** 2)) for j in range(len(v))])
    return d


@pytest.mark.parametrize("metric", ["cosine", "l2"])
def test_knn_matches_brute_force(metric):
    rng = np.random.default_rng(0)
    vec = rng.normal(size=(200, 12))
    ids = [f"img{i:03d}" for i in range(200)]
    idx = FeatureIndex(ids, vec, metric)
    for q in range(0, 200, 7):
        got = knn(idx, ids[q], 10)
        d = _brute(idx.vectors, metric, q, 10)
        want = sorted(range(200), key=lambda j: (round(d[j], 6), ids[j]))[:10]
        assert [g[0] for g in got] == [ids[j] for j in want]
        assert got[0] == (ids[q], 0.0)
        ds = [g[1] for g in got]
        assert ds == sorted(ds)
        np.testing.assert_allclose(ds, d[want], atol=1e-6)


def test_knn_tie_break_by_id():
    vec = np.array([[1.0, 0], [0, 1.0], [0, 1.0], [0, 1.0]])
    idx = FeatureIndex(["q", "c", "a", "b"], vec, "l2")
    assert [i for i, _ in knn(idx, "q", 3, include_self=False)] == ["a", "b", "c"]


def test_knn_errors():
    idx = FeatureIndex(["a", "b"], np.eye(2))
    with pytest.raises(UnknownId):
        knn(idx, "z", 1)
    with pytest.raises(ValueError):
        knn(idx, "a", 5)


@given(st.floats(0.01, 100))
@settings(max_examples=20, deadline=None)
def test_cosine_scale_invariant(c):
    rng = np.random.default_rng(1)
    vec = rng.normal(size=(30, 5))
    a = FeatureIndex([str(i) for i in range(30)], vec)
    b = FeatureIndex([str(i) for i in range(30)], vec * c)
    assert [i for i, _ in knn(a, "3", 8)] == [i for i, _ in knn(b, "3", 8)]
    np.testing.assert_allclose(np.linalg.norm(a.vectors, axis=1), 1.0, atol=1e-6)


def test_index_save_load(tmp_path):
    rng = np.random.default_rng(2)
    idx = FeatureIndex([f"x{i}" for i in range(20)], rng.normal(size=(20, 7)), "l2")
    idx.save(tmp_path / "f.idx")
    back = FeatureIndex.load(tmp_path / "f.idx")
    assert back.ids == idx.ids and back.metric == "l2" and back.vectors.tobytes() == idx.vectors.tobytes()
    assert knn(back, "x4", 5) == knn(idx, "x4", 5)


def test_index_rejects_non_finite():
    with pytest.raises(ValueError):
        FeatureIndex(["a"], np.array([[np.nan, 1.0]]))


@pytest.fixture(scope="module")
def ckpt(tmp_path_factory, fitted, pset9):
    cfg = net_config_for("cdjp3", pset9, fitted, GenConfig.desk(), widths=(4, 6, 8, 8, 8))
    path = tmp_path_factory.mktemp("ev") / "m.ckpt"
    Trainer(TinyNet(cfg, seed=2), fitted, pset9, TrainConfig()).save(path)
    return path


def test_extract_features(ckpt, corpus):
    imgs = corpus[0][:5]
    idx = extract_features(ckpt, imgs + [imgs[0]], "conv3", ids=list("abcdef"))
    assert idx.dims == 8
    assert idx.vectors[0].tobytes() == idx.vectors[5].tobytes()
    assert knn(idx, "a", 2)[1] == ("f", 0.0)
    # L-only network: recoloring leaves features unchanged
    recol = [LabImage(im.l, -im.ab) for im in imgs]
    a = extract_features(ckpt, imgs, "conv5", metric="l2")
    b = extract_features(ckpt, recol, "conv5", metric="l2")
    assert a.vectors.tobytes() == b.vectors.tobytes()
    assert a.dims == 8 and tower_layers(load_model(ckpt)) == ["conv1", "conv2", "conv3", "conv4", "conv5"]
    with pytest.raises(UnknownLayer):
        extract_features(ckpt, imgs, "fc7")


def test_probe_separable():
    rng = np.random.default_rng(3)
    n = 400
    y = rng.integers(0, 2, size=n)
    X = rng.normal(size=(n, 6))
    X[:, 0] += np.where(y == 1, 4.0, -4.0)
    r = linear_probe(X, y, np.arange(300), np.arange(300, 400), epochs=30)
    assert r.accuracy >= 0.95 and r.n_classes == 2


def test_probe_shuffled_labels_at_chance():
    rng = np.random.default_rng(4)
    n = 2000
    X = rng.normal(size=(n, 8))
    y = rng.permutation(np.arange(n) % 4)
    r = linear_probe(X, y, np.arange(1000), np.arange(1000, 2000), epochs=10)
    assert abs(r.accuracy - 0.25) <= 0.1


def test_probe_deterministic():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(100, 3))
    y = (X[:, 0] > 0).astype(int)
    a = linear_probe(X, y, np.arange(60), np.arange(60, 100), seed=3)
    b = linear_probe(X, y, np.arange(60), np.arange(60, 100), seed=3)
    assert a == b and 0 <= a.accuracy <= 1


def test_probe_degenerate_splits():
    X = np.zeros((10, 2))
    y = np.array([0, 1] * 5)
    with pytest.raises(DegenerateSplit):
        linear_probe(X, y, np.arange(5), np.arange(4, 10))
    with pytest.raises(DegenerateSplit):
        linear_probe(X, y, [], np.arange(10))
    with pytest.raises(DegenerateSplit):
        linear_probe(X, np.zeros(10, int), np.arange(5), np.arange(5, 10))


def test_probe_layers_and_report(ckpt, corpus, tmp_path):
    imgs, labels = corpus
    res = probe_layers(ckpt, imgs, labels, np.arange(16), np.arange(16, 24), epochs=3)
    assert [r.layer for r in res] == ["conv1", "conv2", "conv3", "conv4", "conv5"]
    obj = write_probe_report(tmp_path / "p.json", res)
    assert json.loads((tmp_path / "p.json").read_text()) == obj


def test_contact_sheet():
    rng = np.random.default_rng(6)
    idx = FeatureIndex([f"i{j}" for j in range(6)], rng.normal(size=(6, 3)))
    text = contact_sheet(idx, ["i0", "i1"], 2, fmt="text")
    assert text.count("\n") == 2 and text.startswith("i0: ")
    thumbs = {f"i{j}": np.zeros((4, 4, 3), np.uint8) for j in range(6)}
    page = contact_sheet(idx, ["i0"], 3, thumbs)
    assert page.count("<img") == 4 and "<table" in page


def test_random_net_loads_from_object(fitted, pset9, corpus):
    net = TinyNet(NetConfig.micro(K=30, Q=fitted.Q), seed=0)
    assert load_model(net) is net
    assert extract_features(net, corpus[0][:3], "conv2").dims == 4
