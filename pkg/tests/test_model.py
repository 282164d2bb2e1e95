import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.base import clone

from hexembed.exceptions import ConfigError, ShapeError, TrainingError
from hexembed.model import (
    EncoderConfig,
    EncoderParams,
    Hex2Vec,
    TrainConfig,
    embed_all,
    encode,
    gradient,
    init_params,
    load_weights,
    loss_and_gradient,
    neighbor_probability,
    read_embeddings,
    read_loss_history,
    save_weights,
    score,
    train,
    triple_loss,
    write_embeddings,
    write_loss_history,
)
from hexembed.sampling import SamplerConfig
from hexembed.synthetic import Archetype, generate_planted_city, smoothed
from oracles import forward_oracle


def _flat(grads):
    return [a for pair in grads for a in pair]


def test_init_zero_biases_and_determinism():
    cfg = EncoderConfig(30, (20,), 10, init_seed=3)
    a, b = init_params(cfg), init_params(cfg)
    assert a == b
    assert all(not bias.any() for _, bias in a.layers)
    assert init_params(EncoderConfig(30, (20,), 10, init_seed=4)) != a


def test_relu_init_variance():
    cfg = EncoderConfig(200, (100,), 100, init_seed=0)
    w = init_params(cfg).layers[0][0]
    assert w.size >= 10_000
    assert w.var() == pytest.approx(2 / 200, rel=0.2)


def test_identity_network():
    cfg = EncoderConfig(4, (), 4)
    p = EncoderParams([(np.eye(4), np.zeros(4))])
    x = np.array([3.0, 0.0, 1.0, 7.0])
    np.testing.assert_array_equal(encode(p, x, cfg), x)


@pytest.mark.parametrize("act", ["relu", "tanh"])
def test_zero_input_zero_output(act):
    cfg = EncoderConfig(5, (4, 3), 2, act)
    assert not encode(init_params(cfg), np.zeros(5), cfg).any()


@pytest.mark.parametrize("act,transform", [("relu", "raw"), ("tanh", "raw"), ("relu", "log1p")])
def test_forward_matches_loop_oracle(act, transform):
    cfg = EncoderConfig(5, (4,), 3, act, transform, init_seed=9)
    p = init_params(cfg)
    rng = np.random.default_rng(0)
    p = EncoderParams([(w, rng.standard_normal(b.shape)) for w, b in p.layers])
    x = rng.poisson(3, 5).astype(float)
    want = forward_oracle(p.layers, x, act, transform)
    np.testing.assert_allclose(encode(p, x, cfg), want, rtol=1e-12, atol=1e-14)


def test_encode_shape_errors():
    cfg = EncoderConfig(5, (), 3)
    with pytest.raises(ShapeError):
        encode(init_params(cfg), np.zeros(4), cfg)


def test_score_examples():
    assert score([1, 2, 3], [0, 0, 0]) == 0
    assert score([1, 0], [1, 0]) == 1
    assert score([1, 2, 3], [4, 5, 6]) == 32


@given(st.floats(-50, 50))
def test_sigmoid_symmetry(s):
    assert neighbor_probability(s) + neighbor_probability(-s) == pytest.approx(1.0, abs=1e-15)


def test_sigmoid_saturation():
    assert neighbor_probability(0.0) == 0.5
    with np.errstate(over="raise", invalid="raise"):
        assert neighbor_probability(1e4) == 1.0
        assert neighbor_probability(-1e4) == 0.0
    s = np.linspace(-30, 30, 101)
    assert np.all(np.diff(neighbor_probability(s)) >= 0)


def test_triple_loss_examples():
    assert triple_loss(0, 0) == pytest.approx(2 * math.log(2), abs=1e-12)
    assert triple_loss(500, -500) < 1e-200
    assert triple_loss(-500, -500) == pytest.approx(500, rel=1e-12)


@given(st.floats(-1e4, 1e4), st.floats(-1e4, 1e4))
def test_triple_loss_positive(sp, sn):
    v = triple_loss(sp, sn)
    assert math.isfinite(v) and v >= 0


def test_gradient_vanishes_at_separation():
    cfg = EncoderConfig(2, (), 2)
    p = EncoderParams([(np.eye(2) * 100, np.zeros(2))])
    xt = np.array([[1.0, 0.0]])
    xc = np.array([[1.0, 0.0]])
    xn = np.array([[-1.0, 0.0]])
    g = gradient(p, cfg, xt, xc, xn)
    assert math.sqrt(sum(float((a**2).sum()) for a in _flat(g))) < 1e-6


def test_duplicated_batch_same_mean_gradient():
    cfg = EncoderConfig(6, (5,), 3, "tanh", init_seed=1)
    p = init_params(cfg)
    rng = np.random.default_rng(0)
    xt, xc, xn = (rng.standard_normal((4, 6)) for _ in range(3))
    l1, g1 = loss_and_gradient(p, cfg, xt, xc, xn)
    l2, g2 = loss_and_gradient(p, cfg, *(np.vstack([a, a]) for a in (xt, xc, xn)))
    assert l1 == pytest.approx(l2, rel=1e-14)
    for a, b in zip(_flat(g1), _flat(g2)):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)


def _two_blob_city(seed=0):
    arch = (Archetype("a", {"building_yes": 5, "shop_bakery": 2}),
            Archetype("b", {"landuse_forest": 5, "natural_wood": 3}))
    return generate_planted_city(arch, [("s:3,4", 0), ("s:12,4", 1)], (10, 16), seed)


def test_training_improves_loss_and_is_deterministic():
    city = _two_blob_city()
    cfg = EncoderConfig(city.matrix.shape[1], (32,), 8, init_seed=0)
    tcfg = TrainConfig(epochs=12, batch_size=64, learning_rate=3e-3)
    p1, h1 = train(city.matrix, city.grid, cfg, tcfg, SamplerConfig(rng_seed=1))
    p2, h2 = train(city.matrix, city.grid, cfg, tcfg, SamplerConfig(rng_seed=1))
    losses = [h.mean_loss for h in h1]
    assert smoothed(losses, 3)[-1] < losses[0]
    assert losses == [h.mean_loss for h in h2] and p1 == p2
    assert p1.is_finite()


def test_zero_learning_rate_is_a_null_update():
    city = _two_blob_city()
    cfg = EncoderConfig(city.matrix.shape[1], (8,), 4, init_seed=0)
    p, _ = train(city.matrix, city.grid, cfg, TrainConfig(epochs=2, learning_rate=0.0), SamplerConfig())
    assert p == init_params(cfg)


def test_training_without_pairs_fails():
    city = _two_blob_city()
    lonely = city.matrix.take([0, 5])
    cfg = EncoderConfig(lonely.shape[1], (), 2)
    with pytest.raises(TrainingError):
        train(lonely, city.grid, cfg, TrainConfig(epochs=1), SamplerConfig())


def test_shared_encoder_and_embed_all_consistency():
    city = _two_blob_city()
    m = city.matrix
    cfg = EncoderConfig(m.shape[1], (6,), 3, init_seed=2)
    p = init_params(cfg)
    emb = embed_all(p, cfg, m)
    loop = np.array([encode(p, row, cfg) for row in m.dense()])
    np.testing.assert_allclose(emb.vectors, loop, rtol=1e-12, atol=1e-15)
    one = embed_all(p, cfg, m.take([7]))
    np.testing.assert_allclose(one.vectors[0], encode(p, m.dense()[7], cfg), rtol=1e-12)
    perm = np.random.default_rng(0).permutation(m.shape[0])
    np.testing.assert_allclose(embed_all(p, cfg, m.take(perm)).vectors, emb.vectors[perm], rtol=1e-12)


def test_serialization_round_trips(tmp_path):
    city = _two_blob_city()
    m = city.matrix
    cfg = EncoderConfig(m.shape[1], (6,), 3, "tanh", "log1p", init_seed=2)
    p = init_params(cfg)
    save_weights(tmp_path / "w.json", p, cfg, {"init_seed": 2})
    p2, cfg2, seeds = load_weights(tmp_path / "w.json")
    assert p2 == p and cfg2 == cfg and seeds == {"init_seed": 2}
    emb = embed_all(p, cfg, m)
    write_embeddings(tmp_path / "e.csv", emb)
    back = read_embeddings(tmp_path / "e.csv")
    np.testing.assert_array_equal(back.vectors, emb.vectors)
    _, hist = train(m, city.grid, cfg, TrainConfig(epochs=2), SamplerConfig())
    write_loss_history(tmp_path / "h.csv", hist)
    assert read_loss_history(tmp_path / "h.csv") == hist


def test_config_validation():
    with pytest.raises(ConfigError):
        EncoderConfig(3, (), 2, activation="gelu")
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=-1)
    with pytest.raises(ConfigError):
        TrainConfig(optimizer="rmsprop")


def test_estimator_api():
    city = _two_blob_city()
    est = Hex2Vec(grid=city.grid, embedding_dim=4, hidden_dims=(8,), epochs=2, random_state=0)
    assert clone(est).get_params()["embedding_dim"] == 4
    z = est.fit_transform(city.matrix)
    assert z.shape == (city.matrix.shape[0], 4)
    emb = est.embed(city.matrix)
    np.testing.assert_array_equal(emb.vectors, z)
    p = est.predict_proba_neighbors(city.matrix.dense()[:3], city.matrix.dense()[1:4])
    assert p.shape == (3,) and np.all((p > 0) & (p < 1))
