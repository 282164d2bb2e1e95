"""Region encoder trained with a skip-gram negative-sampling objective.

A fully connected network maps a region's tag-count vector to an embedding.
The same network encodes target, context and negative regions. For a triple
``(t, c, n)`` the loss is ``l(v_t . v_c) + l(-(v_t . v_n))`` with
``l(x) = log(1 + exp(-x))``; a batch loss is the mean over its triples.
Gradients are derived by hand and backpropagated through the shared network.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import sparse
from scipy.special import expit
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigError, DataError, RegionLookupError, ShapeError, TrainingError
from ._io import fmt_float, write_json
from .sampling import PairIndex, SamplerConfig, epoch_stream

log = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "tanh")
TRANSFORMS = ("raw", "log1p")
OPTIMIZERS = ("sgd", "adam")


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int
    hidden_dims: tuple = (256,)
    embedding_dim: int = 50
    activation: str = "relu"
    input_transform: str = "raw"
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1 or self.embedding_dim < 1 or any(h < 1 for h in self.hidden_dims):
            raise ConfigError("layer sizes must be positive")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}")
        if self.input_transform not in TRANSFORMS:
            raise ConfigError(f"input_transform must be one of {TRANSFORMS}")

    @property
    def dims(self) -> tuple:
        return (self.input_dim, *self.hidden_dims, self.embedding_dim)

    def to_dict(self):
        d = asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 25
    batch_size: int = 256
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    rng_seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        # zero is allowed: it is the documented way to get a null update
        if not (self.learning_rate >= 0 and math.isfinite(self.learning_rate)):
            raise ConfigError("learning_rate must be a finite non-negative number")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}")


class EncoderParams:
    """Per-layer ``(W, b)`` with ``W`` of shape ``(out_dim, in_dim)``."""

    def __init__(self, layers):
        self.layers = [(np.array(w, dtype=np.float64), np.array(b, dtype=np.float64)) for w, b in layers]
        for (w, b), (w2, _) in zip(self.layers, self.layers[1:]):
            if w2.shape[1] != w.shape[0]:
                raise ShapeError("layer shapes do not chain")
        for w, b in self.layers:
            if b.shape != (w.shape[0],):
                raise ShapeError("bias length must equal layer output size")

    @property
    def dims(self):
        return (self.layers[0][0].shape[1], *(w.shape[0] for w, _ in self.layers))

    def copy(self):
        return EncoderParams([(w.copy(), b.copy()) for w, b in self.layers])

    def arrays(self):
        for w, b in self.layers:
            yield w
            yield b

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())

    def __eq__(self, other):
        if not isinstance(other, EncoderParams) or len(other.layers) != len(self.layers):
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))


def init_params(cfg: EncoderConfig) -> EncoderParams:
    """Gaussian weights scaled by fan-in (He for relu, LeCun for tanh), zero biases."""
    rng = np.random.default_rng(cfg.init_seed)
    gain = 2.0 if cfg.activation == "relu" else 1.0
    layers = []
    for fan_in, fan_out in zip(cfg.dims[:-1], cfg.dims[1:]):
        w = rng.standard_normal((fan_out, fan_in)) * math.sqrt(gain / fan_in)
        layers.append((w, np.zeros(fan_out)))
    return EncoderParams(layers)


def _transform(x, kind):
    x = np.asarray(x, dtype=np.float64)
    return np.log1p(x) if kind == "log1p" else x


def _act(z, kind):
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def _act_grad(z, a, kind):
    if kind == "relu":
        return (z > 0).astype(np.float64)
    return 1.0 - a * a


def _forward(params, x, cfg):
    """Returns the output and the cache of (pre-activation, activation) per layer."""
    h = _transform(x, cfg.input_transform)
    cache = [(None, h)]
    last = len(params.layers) - 1
    for i, (w, b) in enumerate(params.layers):
        z = h @ w.T + b
        h = z if i == last else _act(z, cfg.activation)
        cache.append((z, h))
    return h, cache


def _backward(params, cache, d_out, cfg):
    grads = [None] * len(params.layers)
    d_z = d_out
    for i in range(len(params.layers) - 1, -1, -1):
        w, _ = params.layers[i]
        h_prev = cache[i][1]
        grads[i] = (d_z.T @ h_prev, d_z.sum(axis=0))
        if i:
            z_prev, a_prev = cache[i]
            d_z = (d_z @ w) * _act_grad(z_prev, a_prev, cfg.activation)
    return grads


def encode(params: EncoderParams, features, cfg: EncoderConfig) -> np.ndarray:
    """Embed one count vector (1-D) or a batch of them (2-D, one per row)."""
    if sparse.issparse(features):
        features = features.toarray()
    x = np.asarray(features, dtype=np.float64)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != params.dims[0]:
        raise ShapeError(f"expected feature vectors of length {params.dims[0]}, got shape {x.shape}")
    out, _ = _forward(params, x2, cfg)
    return out[0] if single else out


def score(v_c, v_t) -> float:
    v_c = np.asarray(v_c, dtype=np.float64)
    v_t = np.asarray(v_t, dtype=np.float64)
    if v_c.shape != v_t.shape:
        raise ShapeError(f"score needs equal shapes, got {v_c.shape} and {v_t.shape}")
    return float(v_c @ v_t)


def neighbor_probability(s):
    """Logistic sigmoid of a score; saturates without overflow."""
    out = expit(np.asarray(s, dtype=np.float64))
    return float(out) if np.ndim(out) == 0 else out


def logistic_loss(x):
    """``log(1 + exp(-x))`` as ``max(-x, 0) + log1p(exp(-|x|))``."""
    x = np.asarray(x, dtype=np.float64)
    out = np.maximum(-x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return float(out) if out.ndim == 0 else out


def triple_loss(s_pos, s_neg):
    return logistic_loss(s_pos) + logistic_loss(-np.asarray(s_neg, dtype=np.float64))


def batch_loss(params, cfg, x_target, x_context, x_negative) -> float:
    v_t = encode(params, x_target, cfg)
    v_c = encode(params, x_context, cfg)
    v_n = encode(params, x_negative, cfg)
    return float(np.mean(triple_loss((v_t * v_c).sum(1), (v_t * v_n).sum(1))))


def loss_and_gradient(params, cfg, x_target, x_context, x_negative):
    """Mean triple loss over the batch and its gradient for every layer.

    The three roles go through the network as one stacked batch, so the
    gradient contributions of all three paths are summed into the same
    parameters.
    """
    x_target, x_context, x_negative = (
        a.toarray() if sparse.issparse(a) else np.asarray(a, dtype=np.float64)
        for a in (x_target, x_context, x_negative)
    )
    b = x_target.shape[0]
    if b == 0:
        raise ShapeError("empty batch")
    v, cache = _forward(params, np.vstack([x_target, x_context, x_negative]), cfg)
    v_t, v_c, v_n = v[:b], v[b : 2 * b], v[2 * b :]
    s_pos = (v_t * v_c).sum(axis=1)
    s_neg = (v_t * v_n).sum(axis=1)
    loss = float(np.mean(triple_loss(s_pos, s_neg)))

    # d/ds l(s) = -sigmoid(-s); d/ds l(-s) = sigmoid(s)
    g_pos = (-expit(-s_pos) / b)[:, None]
    g_neg = (expit(s_neg) / b)[:, None]
    d_v = np.vstack([g_pos * v_c + g_neg * v_n, g_pos * v_t, g_neg * v_t])
    return loss, _backward(params, cache, d_v, cfg)


def gradient(params, cfg, x_target, x_context, x_negative):
    return loss_and_gradient(params, cfg, x_target, x_context, x_negative)[1]


class _Optimizer:
    def __init__(self, params, tcfg: TrainConfig):
        self.cfg = tcfg
        self.step_count = 0
        if tcfg.optimizer == "adam":
            self.m = [np.zeros_like(a) for a in params.arrays()]
            self.v = [np.zeros_like(a) for a in params.arrays()]

    def step(self, params, grads):
        cfg = self.cfg
        flat = [g for pair in grads for g in pair]
        arrays = list(params.arrays())
        if cfg.optimizer == "sgd":
            for p, g in zip(arrays, flat):
                p -= cfg.learning_rate * g
            return
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - cfg.beta1**t
        c2 = 1.0 - cfg.beta2**t
        for p, g, m, v in zip(arrays, flat, self.m, self.v):
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            p -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.eps)


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    pairs: int
    skips: int


def train(matrix, grid, enc_cfg: EncoderConfig, train_cfg: TrainConfig,
          sampler_cfg: SamplerConfig, params: EncoderParams | None = None, callback=None):
    """Minimize the mean triple loss; returns ``(params, history)``.

    Deterministic for fixed seeds: ``init_seed`` fixes the initial weights,
    ``sampler_cfg.rng_seed`` the pair order and negatives.
    """
    if matrix.shape[1] != enc_cfg.input_dim:
        raise ShapeError(f"matrix has {matrix.shape[1]} features, encoder expects {enc_cfg.input_dim}")
    index = PairIndex.from_matrix(matrix, grid, sampler_cfg)
    if index.n_pairs == 0:
        raise TrainingError("no positive (neighbouring) pairs in the dataset; nothing to train on")

    params = init_params(enc_cfg) if params is None else params.copy()
    counts = sparse.csr_matrix(matrix.counts, dtype=np.float64)
    rng = np.random.default_rng(sampler_cfg.rng_seed)
    opt = _Optimizer(params, train_cfg)
    history = []

    for epoch in range(1, train_cfg.epochs + 1):
        stream = epoch_stream(matrix, grid, sampler_cfg, rng, index)
        if len(stream) == 0:
            raise TrainingError(f"epoch {epoch}: every positive pair was skipped")
        total = 0.0
        for t, c, n in stream.batches(train_cfg.batch_size):
            loss, grads = loss_and_gradient(
                params, enc_cfg, counts[t].toarray(), counts[c].toarray(), counts[n].toarray()
            )
            if not math.isfinite(loss):
                raise TrainingError(f"epoch {epoch}: loss became {loss}; training diverged")
            total += loss * len(t)
            opt.step(params, grads)
        if not params.is_finite():
            raise TrainingError(f"epoch {epoch}: non-finite parameters after update")
        rec = EpochRecord(epoch, total / len(stream), stream.pairs, stream.skips)
        history.append(rec)
        log.info("epoch %d mean loss %.6f (%d pairs, %d skipped)", epoch, rec.mean_loss, rec.pairs, rec.skips)
        if callback is not None:
            callback(rec, params)
    return params, history


@dataclass
class EmbeddingMatrix:
    regions: list
    cities: list
    vectors: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.regions = list(self.regions)
        self.cities = list(self.cities)
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.regions):
            raise ShapeError("one embedding row per region required")
        if len(self.cities) != len(self.regions):
            raise ShapeError("one city per region required")

    @property
    def dim(self):
        return self.vectors.shape[1]

    def row_index(self):
        return {r: i for i, r in enumerate(self.regions)}

    def vector(self, region):
        try:
            return self.vectors[self.regions.index(region)]
        except ValueError:
            raise RegionLookupError(region) from None

    def take(self, rows):
        rows = list(rows)
        return EmbeddingMatrix(
            [self.regions[i] for i in rows], [self.cities[i] for i in rows], self.vectors[rows], dict(self.metadata)
        )

    def select_cities(self, cities):
        wanted = set(cities)
        return self.take([i for i, c in enumerate(self.cities) if c in wanted])


def embed_all(params: EncoderParams, cfg: EncoderConfig, matrix, run_id: str | None = None) -> EmbeddingMatrix:
    if matrix.shape[1] != params.dims[0]:
        raise ShapeError(f"matrix has {matrix.shape[1]} features, encoder expects {params.dims[0]}")
    vectors = encode(params, matrix.counts, cfg) if matrix.shape[0] else np.zeros((0, params.dims[-1]))
    meta = {"encoder_digest": cfg.digest()}
    if run_id is not None:
        meta["run_id"] = run_id
    return EmbeddingMatrix(matrix.regions, matrix.cities, vectors, meta)


# -- serialization ---------------------------------------------------------

def save_weights(path, params: EncoderParams, cfg: EncoderConfig, seed_info: dict | None = None):
    doc = {
        "config": {
            "dims": list(cfg.dims),
            "activation": cfg.activation,
            "transform": cfg.input_transform,
            "init_seed": cfg.init_seed,
        },
        "layers": [{"w": w.tolist(), "b": b.tolist()} for w, b in params.layers],
        "seed_info": seed_info or {"init_seed": cfg.init_seed},
    }
    write_json(path, doc)


def load_weights(path):
    """Returns ``(params, cfg, seed_info)``."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    try:
        c = doc["config"]
        dims = list(c["dims"])
        cfg = EncoderConfig(
            input_dim=dims[0],
            hidden_dims=tuple(dims[1:-1]),
            embedding_dim=dims[-1],
            activation=c["activation"],
            input_transform=c["transform"],
            init_seed=c.get("init_seed", 0),
        )
        params = EncoderParams([(layer["w"], layer["b"]) for layer in doc["layers"]])
    except (KeyError, TypeError, IndexError) as exc:
        raise DataError(f"{path}: malformed weights file ({exc})") from exc
    if params.dims != cfg.dims:
        raise ShapeError(f"{path}: layer shapes {params.dims} disagree with config dims {cfg.dims}")
    return params, cfg, doc.get("seed_info", {})


def write_embeddings(path, emb: EmbeddingMatrix):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region_id", "city", *(f"e{i}" for i in range(emb.dim))])
        for region, city, row in zip(emb.regions, emb.cities, emb.vectors):
            w.writerow([region, city, *(fmt_float(x) for x in row)])


def read_embeddings(path) -> EmbeddingMatrix:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["region_id", "city"]:
            raise DataError(f"{path}: header must start with region_id,city")
        regions, cities, rows = [], [], []
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields")
            regions.append(rec[0])
            cities.append(rec[1])
            rows.append([float(x) for x in rec[2:]])
    vectors = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(header) - 2)
    return EmbeddingMatrix(regions, cities, vectors)


def write_loss_history(path, history):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "mean_loss", "pairs", "skips"])
        for r in history:
            w.writerow([r.epoch, fmt_float(r.mean_loss), r.pairs, r.skips])


def read_loss_history(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return [
            EpochRecord(int(r["epoch"]), float(r["mean_loss"]), int(r["pairs"]), int(r["skips"]))
            for r in csv.DictReader(fh)
        ]


# -- estimator -------------------------------------------------------------

class Hex2Vec(TransformerMixin, BaseEstimator):
    """Neighbour-prediction region encoder with a scikit-learn interface.

    ``fit`` takes a :class:`~hexembed.featurize.FeatureMatrix` (its region
    ids define adjacency through ``grid``); ``transform`` accepts a
    FeatureMatrix or a plain count array and returns embeddings.

    Parameters
    ----------
    grid : GridProvider
        Tessellation the region ids belong to.
    embedding_dim, hidden_dims, activation, input_transform
        Encoder architecture.
    epochs, batch_size, learning_rate, optimizer
        Training schedule; ``optimizer`` is ``"adam"`` or ``"sgd"``.
    negatives_per_pair, exclusion_radius, same_city
        Negative sampling.
    random_state : int
        Seeds initialization (``random_state``) and sampling (``random_state + 1``).
    """

    def __init__(self, grid=None, embedding_dim=50, hidden_dims=(256,), activation="relu",
                 input_transform="raw", epochs=25, batch_size=256, learning_rate=1e-3,
                 optimizer="adam", negatives_per_pair=1, exclusion_radius=2, same_city=True,
                 random_state=0):
        self.grid = grid
        self.embedding_dim = embedding_dim
        self.hidden_dims = hidden_dims
        self.activation = activation
        self.input_transform = input_transform
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.negatives_per_pair = negatives_per_pair
        self.exclusion_radius = exclusion_radius
        self.same_city = same_city
        self.random_state = random_state

    def _configs(self, input_dim):
        seed = 0 if self.random_state is None else int(self.random_state)
        enc = EncoderConfig(input_dim, tuple(self.hidden_dims), self.embedding_dim,
                            self.activation, self.input_transform, init_seed=seed)
        tr = TrainConfig(self.epochs, self.batch_size, self.learning_rate, self.optimizer, rng_seed=seed)
        sm = SamplerConfig(self.negatives_per_pair, self.exclusion_radius, seed + 1, self.same_city)
        return enc, tr, sm

    def fit(self, X, y=None):
        if self.grid is None:
            raise ConfigError("Hex2Vec needs a grid provider to find neighbouring regions")
        if not hasattr(X, "regions"):
            raise DataError("Hex2Vec.fit expects a FeatureMatrix (region ids are needed)")
        enc, tr, sm = self._configs(X.shape[1])
        self.params_, self.history_ = train(X, self.grid, enc, tr, sm)
        self.encoder_config_ = enc
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        counts = X.counts if hasattr(X, "counts") else X
        return encode(self.params_, counts, self.encoder_config_)

    def embed(self, X) -> EmbeddingMatrix:
        check_is_fitted(self, "params_")
        return embed_all(self.params_, self.encoder_config_, X)

    def predict_proba_neighbors(self, x_a, x_b):
        """Neighbourhood probability for aligned rows of two count matrices."""
        va, vb = self.transform(x_a), self.transform(x_b)
        return neighbor_probability((np.atleast_2d(va) * np.atleast_2d(vb)).sum(axis=1))
