import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from placededup.metric import (
    TrainConfig,
    attention_weights,
    contrastive,
    denoise_loss,
    distance,
    hard_select,
    init_centers,
    init_model,
    load_checkpoint,
    pair_loss,
    save_checkpoint,
    soft_assign,
    target_dist,
    train,
    triplet_loss,
)
from placededup.places import LabeledPair

floats = st.floats(-10, 10, allow_nan=False)
vec = arrays(np.float64, 4, elements=floats)


# ---------------------------------------------------------------- distances


def test_distance_examples():
    assert distance([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert distance([1.0, 0.0], [0.0, 1.0]) == 2.0
    assert distance([1.0, 0.0], [0.0, 1.0], "cosine") == pytest.approx(1.0)
    assert distance([0.0, 0.0], [3.0, 1.0], "cosine") == 1.0
    M = np.array([[2.0, 0.0], [0.0, 1.0]])
    assert distance([1.0, 1.0], [1.0, 3.0], "bilinear", M) == -5.0


def test_distance_dimension_mismatch():
    with pytest.raises(ValueError):
        distance([1.0, 2.0], [1.0, 2.0, 3.0])


@pytest.mark.invariant
@given(vec, vec)
def test_euclidean_is_symmetric_and_nonnegative(a, b):
    assert distance(a, b) == distance(b, a) >= 0


# ------------------------------------------------------------------- losses


def test_pair_loss_examples():
    assert pair_loss([0.0], [0.0], 1) == 0.0
    assert pair_loss([0.0], [2.0], 1) == 4.0
    assert pair_loss([0.0], [0.5], 0, alpha=1.0) == 0.75
    assert pair_loss([0.0], [2.0], 0, alpha=1.0) == 0.0
    with pytest.raises(ValueError):
        pair_loss([0.0], [1.0], 0, alpha=0.0)


def test_triplet_loss_example():
    assert triplet_loss([0.0], [1.0], [2.0], alpha=1.0) == 0.0
    assert triplet_loss([0.0], [2.0], [1.0], alpha=1.0) == 4.0


@pytest.mark.invariant
@given(st.floats(0, 10), st.integers(0, 1), st.floats(0.1, 5))
def test_pair_loss_zero_set(d, y, alpha):
    loss = float(contrastive(d, y, alpha))
    assert loss >= 0
    assert (loss == 0) == ((y == 1 and d == 0) or (y == 0 and d >= alpha))


@pytest.mark.invariant
@given(vec, vec, vec, st.floats(0.1, 5))
def test_triplet_loss_zero_set(a, p, n, alpha):
    dap, dan = distance(a, p), distance(a, n)
    loss = triplet_loss(a, p, n, alpha)
    assert loss >= 0
    assert (loss == 0) == (dap - dan + alpha <= 0)


def test_hard_select_examples():
    # scores {+2, -1}, tau = 0.5
    assert hard_select([2.0, 1.0], [1, 0], 1.0).tolist() == [True, False]
    # beta = 0: only pairs with positive score
    assert hard_select([0.5, 0.0, 3.0, 1.0], [1, 1, 0, 1], 0.0).tolist() == [True, False, False, True]
    # nothing beats the mean: fall back to the argmax pair
    assert hard_select([1.0, 1.0], [0, 0], 1.0).tolist() == [True, False]


@pytest.mark.invariant
@given(arrays(np.float64, st.integers(2, 20), elements=st.floats(0, 10)), st.data(), st.floats(0, 3))
def test_hard_select_monotone_in_score(d, data, beta):
    y = np.array(data.draw(st.lists(st.integers(0, 1), min_size=len(d), max_size=len(d))))
    mask = hard_select(d, y, beta)
    score = np.where(y == 1, d, -d)
    assert mask.any()
    for l in np.flatnonzero(mask):
        assert mask[score > score[l]].all()


# ---------------------------------------------------------------- attention


def test_attention_examples():
    k = np.zeros((1, 2))
    w, P = attention_weights(k, k, np.zeros((1, 4)), [0])
    assert w[0] == 1.0
    w, _ = attention_weights(k, k, np.zeros((2, 4)), [1])
    assert w[0] == 0.5
    ka = np.array([[math.log(3), 0.0]])
    Q = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0]])
    _, P = attention_weights(ka, np.zeros((1, 2)), Q, [0])
    assert P[0] == pytest.approx([0.75, 0.25])


@given(arrays(np.float64, (3, 2), elements=floats), arrays(np.float64, (3, 2), elements=floats),
       arrays(np.float64, (4, 4), elements=floats), st.floats(-50, 50), st.floats(0.01, 20))
@pytest.mark.invariant
def test_attention_properties(ka, kb, Q, shift, lam):
    src = np.array([0, 3, 1])
    _, P = attention_weights(ka, kb, Q, src)
    assert np.allclose(P.sum(axis=1), 1.0, atol=1e-12)
    scores = np.concatenate([ka, kb], axis=1) @ Q.T
    # a constant added to every source score leaves the softmax alone
    shifted = scores + shift
    P2 = np.exp(shifted - shifted.max(axis=1, keepdims=True))
    P2 /= P2.sum(axis=1, keepdims=True)
    assert np.allclose(P, P2, atol=1e-12)
    _, P3 = attention_weights(ka, kb, lam * Q, src)
    ties = np.isclose(np.sort(scores, axis=1)[:, -1], np.sort(scores, axis=1)[:, -2])
    assert np.array_equal(P3.argmax(axis=1)[~ties], P.argmax(axis=1)[~ties])


def test_unregistered_source():
    model = init_model(3, ["a", "b"], TrainConfig(hidden=(4,)))
    with pytest.raises(ValueError, match="unregistered"):
        model.attention(np.zeros(3), np.ones(3), "c")
    assert model.attention(np.zeros(3), np.ones(3), "b") == pytest.approx(0.5)


# ---------------------------------------------------------------- denoising


def test_soft_assign_examples():
    assert soft_assign([[0.0, 0.0]], [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]])[0] == pytest.approx([1 / 3] * 3)
    assert soft_assign([[0.0]], [[0.0], [1.0]])[0] == pytest.approx([2 / 3, 1 / 3])
    assert soft_assign([[5.0, 1.0]], [[0.0, 0.0]])[0] == pytest.approx([1.0])


def test_target_dist_examples():
    assert target_dist(np.full((4, 2), 0.5)) == pytest.approx(np.full((4, 2), 0.5))
    assert target_dist([[2 / 3, 1 / 3]])[0] == pytest.approx([2 / 3, 1 / 3])
    assert np.array_equal(target_dist([[1.0], [1.0]]), [[1.0], [1.0]])


def test_denoise_loss_examples():
    D = np.array([[0.3, 0.7]])
    assert denoise_loss(D, D, 1.0) == 0.0
    assert denoise_loss(D, [[1.0, 0.0]], 0.0) == 0.0
    assert denoise_loss([[0.5, 0.5]], [[1.0, 0.0]], 1.0) == pytest.approx(0.6931, abs=1e-4)
    assert math.isfinite(denoise_loss([[0.0, 1.0]], [[1.0, 0.0]], 1.0))


@pytest.mark.invariant
@given(arrays(np.float64, (5, 3), elements=floats), arrays(np.float64, (4, 3), elements=floats))
def test_assignments_row_stochastic(U, C):
    D = soft_assign(U, C)
    T = target_dist(D)
    assert np.allclose(D.sum(axis=1), 1, atol=1e-9) and np.allclose(T.sum(axis=1), 1, atol=1e-9)
    assert denoise_loss(D, T, 1.0) >= 0


def test_init_centers_examples(rng):
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [5.0, 5.0]])
    assert sorted(map(tuple, init_centers(pts, 3, seed=1))) == sorted(map(tuple, pts))
    assert init_centers(pts, 1)[0] == pytest.approx(pts.mean(axis=0))
    blob_a = rng.normal(size=(30, 2)) * 0.1
    blob_b = rng.normal(size=(30, 2)) * 0.1 + 10
    centers = init_centers(np.vstack([blob_a, blob_b]), 2, seed=3)
    boxes = [(blob_a.min(0), blob_a.max(0)), (blob_b.min(0), blob_b.max(0))]
    for lo, hi in boxes:
        assert any(np.all(c >= lo) and np.all(c <= hi) for c in centers)
    with pytest.raises(ValueError):
        init_centers(pts, 4)
    assert np.array_equal(init_centers(blob_a, 4, seed=9), init_centers(blob_a, 4, seed=9))


# ----------------------------------------------------------------- training


def _toy():
    # two entities, two pages each, features near each entity's anchor
    X = np.array([[1.0, 0.0, 0.1], [0.9, 0.1, 0.0], [0.0, 1.0, -0.1], [0.1, 0.9, 0.0]])
    ids = ["a1", "a2", "b1", "b2"]
    labels = [LabeledPair("a1", "a2", 1, "s"), LabeledPair("b1", "b2", 1, "s"),
              LabeledPair("a1", "b1", 0, "s"), LabeledPair("a2", "b2", 0, "s")]
    return ids, X, labels


@pytest.mark.parametrize("extra", [dict(), dict(hard=True, beta=3.0), dict(attention=True),
                                   dict(loss="triplet"), dict(distance="cosine", alpha=0.5)])
def test_toy_entities_separate(extra):
    ids, X, labels = _toy()
    res = train(ids, X, labels, TrainConfig(epochs=200, batch_size=4, hidden=(8,), seed=0, **extra))
    U = res.model.embed(X)
    d = lambda i, j: distance(U[i], U[j], res.model.distance)
    assert max(d(0, 1), d(2, 3)) < min(d(0, 2), d(0, 3), d(1, 2), d(1, 3))


def test_training_is_deterministic():
    ids, X, labels = _toy()
    cfg = TrainConfig(epochs=5, batch_size=2, hidden=(8,), seed=3, hard=True, attention=True, denoise=True,
                      warmup_epochs=1, n_clusters=2)
    a, b = train(ids, X, labels, cfg), train(ids, X, labels, cfg)
    for k in a.model.params:
        assert a.model.params[k].tobytes() == b.model.params[k].tobytes()
    assert a.denoising.centers.tobytes() == b.denoising.centers.tobytes()


def test_training_errors():
    ids, X, labels = _toy()
    with pytest.raises(ValueError):
        train(ids, X, [], TrainConfig())
    with pytest.raises(ValueError):
        train(ids[:3], X[:3], labels, TrainConfig())
    with pytest.raises(ValueError):
        TrainConfig(loss="triplet", hard=True)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=1)


def test_forward_dimension_check():
    model = init_model(3, ["s"], TrainConfig(hidden=(4,)))
    with pytest.raises(ValueError):
        model.forward(np.zeros(5))
    k, v = model.forward(np.zeros(3))
    assert k.shape == (16,) and v.shape == (32,)


@pytest.mark.parametrize("extra", [dict(), dict(distance="bilinear"), dict(denoise=True, n_clusters=2, warmup_epochs=0)])
def test_checkpoint_round_trip_is_bit_exact(tmp_path, extra):
    ids, X, labels = _toy()
    res = train(ids, X, labels, TrainConfig(epochs=2, batch_size=2, hidden=(8, 4), seed=1, **extra))
    path = tmp_path / "m.ckpt"
    save_checkpoint(res.model, path, res.denoising, meta={"note": "x"})
    model, state, header = load_checkpoint(path)
    assert header["meta"] == {"note": "x"} and header["sources"] == ["s"]
    assert model.params.keys() == res.model.params.keys()
    for k, v in res.model.params.items():
        assert model.params[k].tobytes() == v.tobytes()
    assert model.embed(X).tobytes() == res.model.embed(X).tobytes()
    if res.denoising is not None:
        assert state.centers.tobytes() == res.denoising.centers.tobytes()
    save_checkpoint(model, tmp_path / "again.ckpt", state, meta={"note": "x"})
    assert (tmp_path / "again.ckpt").read_bytes() == path.read_bytes()


def test_not_a_checkpoint(tmp_path):
    (tmp_path / "x").write_bytes(b"hello")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "x")
