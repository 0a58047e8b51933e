"""Transformer classifier over complete weighted graphs.

The model consumes a V x V connectivity matrix whose row i is node i's
connection profile.  A stack of multi-head self-attention layers maps
the profile features to a final V x V node embedding; a readout
collapses that to a fixed-length vector; a small tanh MLP produces two
class logits.

The clustering readout assigns each node a softmax distribution over K
learned or frozen cluster centers and pools node embeddings under that
soft assignment.  Centers can be orthonormal (Gram-Schmidt of a Xavier
draw, frozen), random unit rows (frozen), or learnable.

All gradients are computed analytically by reverse mode over the cached
forward intermediates; finite differences verify them in the tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import linalg
from .linalg import softmax_lastaxis
from .rng import Rng


class Readout(Enum):
    OCREAD = "ocread"
    MEAN = "mean"
    MAX = "max"
    SUM = "sum"
    CONCAT = "concat"


class CentersMode(Enum):
    ORTHONORMAL = "orthonormal"
    RANDOM_UNIT = "random_unit"
    LEARNABLE = "learnable"


class FeatureMode(Enum):
    PROFILE = "profile"
    PROFILE_IDENTITY = "profile_identity"
    PROFILE_EIGEN = "profile_eigen"


@dataclass
class ModelConfig:
    nodes: int
    layers: int = 2
    heads: int = 4
    clusters: int = 4
    head_dim: int | None = None  # defaults to ceil(nodes / heads)
    mlp_hidden: tuple[int, ...] = (256, 32)
    readout: Readout = Readout.OCREAD
    centers_mode: CentersMode = CentersMode.ORTHONORMAL
    feature_mode: FeatureMode = FeatureMode.PROFILE
    k_eigen: int = 0

    def __post_init__(self):
        self.mlp_hidden = tuple(int(h) for h in self.mlp_hidden)
        if self.head_dim is None and self.heads >= 1:
            self.head_dim = math.ceil(self.nodes / self.heads)

    def validate(self):
        if self.nodes < 1:
            raise ValueError("nodes must be >= 1")
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.heads < 1:
            raise ValueError("heads must be >= 1")
        if self.head_dim < 1:
            raise ValueError("head_dim must be >= 1")
        if self.clusters < 1:
            raise ValueError("clusters must be >= 1")
        if self.readout is Readout.OCREAD and self.clusters > self.nodes:
            raise ValueError(
                f"clusters must not exceed nodes for the clustering readout "
                f"({self.clusters} > {self.nodes})"
            )
        if any(h < 1 for h in self.mlp_hidden):
            raise ValueError("mlp_hidden widths must be positive")
        if self.feature_mode is FeatureMode.PROFILE_EIGEN:
            if not 1 <= self.k_eigen <= self.nodes:
                raise ValueError(
                    f"k_eigen must be in 1..nodes for eigenvector features, got {self.k_eigen}"
                )

    @property
    def input_width(self) -> int:
        if self.feature_mode is FeatureMode.PROFILE:
            return self.nodes
        if self.feature_mode is FeatureMode.PROFILE_IDENTITY:
            return 2 * self.nodes
        return self.nodes + self.k_eigen

    @property
    def flat_dim(self) -> int:
        """Length of the readout vector fed to the MLP."""
        if self.readout is Readout.OCREAD:
            return self.clusters * self.nodes
        if self.readout is Readout.CONCAT:
            return self.nodes * self.nodes
        return self.nodes


@dataclass
class AttentionLayerParams:
    """One attention layer; per-head projections stacked on axis 0.

    w_query/w_key/w_value have shape (heads, head_dim, in_width) so
    w_query[m] is head m's projection; w_output has shape
    (heads * head_dim, nodes).
    """

    w_query: np.ndarray
    w_key: np.ndarray
    w_value: np.ndarray
    w_output: np.ndarray


@dataclass
class ModelParams:
    layers: list[AttentionLayerParams]
    centers: np.ndarray  # (clusters, nodes)
    mlp_weights: list[np.ndarray]
    mlp_biases: list[np.ndarray]

    def named_tensors(self):
        """(name, array) pairs in fixed declaration order."""
        for i, layer in enumerate(self.layers):
            yield f"layers.{i}.w_query", layer.w_query
            yield f"layers.{i}.w_key", layer.w_key
            yield f"layers.{i}.w_value", layer.w_value
            yield f"layers.{i}.w_output", layer.w_output
        yield "centers", self.centers
        for i, (w, b) in enumerate(zip(self.mlp_weights, self.mlp_biases)):
            yield f"mlp.{i}.weight", w
            yield f"mlp.{i}.bias", b

    def copy(self) -> "ModelParams":
        return ModelParams(
            layers=[
                AttentionLayerParams(
                    l.w_query.copy(), l.w_key.copy(), l.w_value.copy(), l.w_output.copy()
                )
                for l in self.layers
            ],
            centers=self.centers.copy(),
            mlp_weights=[w.copy() for w in self.mlp_weights],
            mlp_biases=[b.copy() for b in self.mlp_biases],
        )

    def zeros_like(self) -> "ModelParams":
        out = self.copy()
        for _, t in out.named_tensors():
            t[...] = 0.0
        return out


@dataclass
class ForwardTrace:
    """Cached intermediates of one forward pass (single sample)."""

    z_layers: list[np.ndarray]  # z_layers[0] is the feature matrix, last is V x V
    attention: list[np.ndarray]  # per layer, (heads, V, V), rows sum to 1
    assignment: np.ndarray | None  # (V, clusters) soft assignment, or None
    pooled: np.ndarray | None  # (clusters, V) pooled embedding, or None
    readout_vector: np.ndarray
    logits: np.ndarray


def trainable_names(config: ModelConfig) -> set[str]:
    """Names of tensors that receive gradient updates."""
    names = set()
    for i in range(config.layers):
        names.update(
            {f"layers.{i}.w_query", f"layers.{i}.w_key", f"layers.{i}.w_value", f"layers.{i}.w_output"}
        )
    n_mlp = len(config.mlp_hidden) + 1
    for i in range(n_mlp):
        names.update({f"mlp.{i}.weight", f"mlp.{i}.bias"})
    if config.readout is Readout.OCREAD and config.centers_mode is CentersMode.LEARNABLE:
        names.add("centers")
    return names


def init_params(config: ModelConfig, rng: Rng) -> ModelParams:
    """Draw fresh parameters; the rng stream order is part of the contract."""
    config.validate()
    v = config.nodes
    hd = config.head_dim
    layers = []
    for l in range(config.layers):
        in_w = config.input_width if l == 0 else v
        stacks = []
        for _ in range(3):  # query, key, value
            heads = [linalg.xavier_uniform(hd, in_w, rng) for _ in range(config.heads)]
            stacks.append(np.stack(heads))
        w_output = linalg.xavier_uniform(config.heads * hd, v, rng)
        layers.append(AttentionLayerParams(stacks[0], stacks[1], stacks[2], w_output))

    if config.centers_mode is CentersMode.ORTHONORMAL:
        centers = linalg.orthonormal_rows(config.clusters, v, rng)
    else:
        centers = linalg.xavier_uniform(config.clusters, v, rng)
        centers /= np.sqrt((centers * centers).sum(axis=1, keepdims=True))

    widths = [config.flat_dim, *config.mlp_hidden, 2]
    mlp_weights = [
        linalg.xavier_uniform(widths[i], widths[i + 1], rng) for i in range(len(widths) - 1)
    ]
    mlp_biases = [np.zeros(widths[i + 1]) for i in range(len(widths) - 1)]
    return ModelParams(layers, centers, mlp_weights, mlp_biases)


def node_feature(x, mode: FeatureMode, k_eigen: int = 0) -> np.ndarray:
    """Node feature matrix for one graph.

    PROFILE keeps the connection profile rows as they are;
    PROFILE_IDENTITY appends a one-hot node identity block;
    PROFILE_EIGEN appends the top k_eigen eigenvectors (as columns) of
    the symmetric input.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {x.shape}")
    v = x.shape[0]
    if mode is FeatureMode.PROFILE:
        return x
    if mode is FeatureMode.PROFILE_IDENTITY:
        return np.hstack([x, np.eye(v)])
    if not 1 <= k_eigen <= v:
        raise ValueError(f"k_eigen must be in 1..{v}, got {k_eigen}")
    _, vecs = linalg.symmetric_eigendecomposition(x)
    return np.hstack([x, vecs[:, :k_eigen]])


# ---------------------------------------------------------------------------
# Batched forward / backward internals.  Shapes: z (B, V, w); per-head
# tensors (B, M, V, head_dim); attention (B, M, V, V).
# ---------------------------------------------------------------------------


def _mhsa_forward(z: np.ndarray, layer: AttentionLayerParams):
    b, v, w = z.shape
    m, hd, w_in = layer.w_query.shape
    if w_in != w:
        raise ValueError(f"layer expects input width {w_in}, got {w}")
    z2 = z.reshape(b * v, w)

    def project(wstack):
        flat = wstack.reshape(m * hd, w)
        return (z2 @ flat.T).reshape(b, v, m, hd).transpose(0, 2, 1, 3)

    q = project(layer.w_query)
    k = project(layer.w_key)
    vv = project(layer.w_value)
    scores = (q @ k.swapaxes(-1, -2)) / math.sqrt(hd)
    attn = softmax_lastaxis(scores)
    h = attn @ vv
    hcat = h.transpose(0, 2, 1, 3).reshape(b, v, m * hd)
    out = hcat @ layer.w_output
    return out, (z, q, k, vv, attn, hcat)


def _mhsa_backward(dout: np.ndarray, layer: AttentionLayerParams, cache):
    z, q, k, vv, attn, hcat = cache
    b, v, w = z.shape
    m, hd, _ = layer.w_query.shape
    mh = m * hd
    z2 = z.reshape(b * v, w)

    d_wo = hcat.reshape(b * v, mh).T @ dout.reshape(b * v, v)
    dhcat = dout @ layer.w_output.T
    dh = dhcat.reshape(b, v, m, hd).transpose(0, 2, 1, 3)

    dattn = dh @ vv.swapaxes(-1, -2)
    dvv = attn.swapaxes(-1, -2) @ dh
    # softmax backward per attention row
    dscores = (dattn - (dattn * attn).sum(axis=-1, keepdims=True)) * attn
    dscores /= math.sqrt(hd)
    dq = dscores @ k
    dk = dscores.swapaxes(-1, -2) @ q

    dz2 = np.zeros_like(z2)

    def unproject(dproj, wstack):
        flat = dproj.transpose(0, 2, 1, 3).reshape(b * v, mh)
        dw = (flat.T @ z2).reshape(m, hd, w)
        nonlocal dz2
        dz2 += flat @ wstack.reshape(mh, w)
        return dw

    d_wq = unproject(dq, layer.w_query)
    d_wk = unproject(dk, layer.w_key)
    d_wv = unproject(dvv, layer.w_value)
    return dz2.reshape(b, v, w), AttentionLayerParams(d_wq, d_wk, d_wv, d_wo)


class _BatchTrace:
    __slots__ = (
        "z", "caches", "assignment", "pooled", "max_idx", "readout_vec", "mlp_acts", "logits",
    )

    def __init__(self):
        self.z = []
        self.caches = []
        self.assignment = None
        self.pooled = None
        self.max_idx = None
        self.readout_vec = None
        self.mlp_acts = None
        self.logits = None


def _features_batch(x: np.ndarray, config: ModelConfig) -> np.ndarray:
    if config.feature_mode is FeatureMode.PROFILE:
        return x
    return np.stack([node_feature(xi, config.feature_mode, config.k_eigen) for xi in x])


def _forward_batch(x: np.ndarray, params: ModelParams, config: ModelConfig) -> _BatchTrace:
    if not np.isfinite(x).all():
        raise ValueError("input contains non-finite entries")
    b, v, v2 = x.shape
    if v != config.nodes or v2 != config.nodes:
        raise ValueError(f"expected graphs of shape ({config.nodes}, {config.nodes}), got ({v}, {v2})")

    tr = _BatchTrace()
    z = _features_batch(x, config)
    tr.z.append(z)
    for layer in params.layers:
        z, cache = _mhsa_forward(z, layer)
        tr.z.append(z)
        tr.caches.append(cache)

    if config.readout is Readout.OCREAD:
        scores = z @ params.centers.T  # (B, V, K)
        p = softmax_lastaxis(scores)
        pooled = p.swapaxes(1, 2) @ z  # (B, K, V)
        tr.assignment = p
        tr.pooled = pooled
        g = pooled.reshape(b, -1)
    elif config.readout is Readout.MEAN:
        g = z.mean(axis=1)
    elif config.readout is Readout.SUM:
        g = z.sum(axis=1)
    elif config.readout is Readout.MAX:
        tr.max_idx = z.argmax(axis=1)  # first index on ties
        g = z.max(axis=1)
    else:  # CONCAT
        g = z.reshape(b, -1)
    tr.readout_vec = g

    acts = [g]
    a = g
    for w, bias in zip(params.mlp_weights[:-1], params.mlp_biases[:-1]):
        a = np.tanh(a @ w + bias)
        acts.append(a)
    logits = a @ params.mlp_weights[-1] + params.mlp_biases[-1]
    tr.mlp_acts = acts
    tr.logits = logits
    return tr


def _readout_backward(dg: np.ndarray, tr: _BatchTrace, params: ModelParams, config: ModelConfig):
    """Gradient of the readout vector wrt the final embedding (and centers)."""
    z = tr.z[-1]
    b, v, _ = z.shape
    dcenters = None
    if config.readout is Readout.OCREAD:
        p, pooled = tr.assignment, tr.pooled
        dpooled = dg.reshape(b, config.clusters, v)
        dz = p @ dpooled
        dp = z @ dpooled.swapaxes(1, 2)
        ds = (dp - (dp * p).sum(axis=-1, keepdims=True)) * p  # (B, V, K)
        dz = dz + ds @ params.centers
        if config.centers_mode is CentersMode.LEARNABLE:
            dcenters = ds.reshape(b * v, -1).T @ z.reshape(b * v, v)
    elif config.readout is Readout.MEAN:
        dz = np.broadcast_to(dg[:, None, :] / v, z.shape)
    elif config.readout is Readout.SUM:
        dz = np.broadcast_to(dg[:, None, :], z.shape)
    elif config.readout is Readout.MAX:
        dz = np.zeros_like(z)
        cols = np.broadcast_to(np.arange(v), (b, v))
        rows = np.broadcast_to(np.arange(b)[:, None], (b, v))
        dz[rows, tr.max_idx, cols] = dg
    else:  # CONCAT
        dz = dg.reshape(b, v, v)
    return dz, dcenters


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def forward(x, params: ModelParams, config: ModelConfig) -> tuple[np.ndarray, ForwardTrace]:
    """Class logits and the cached trace for one graph."""
    x = np.asarray(x, dtype=np.float64)
    tr = _forward_batch(x[None], params, config)
    trace = ForwardTrace(
        z_layers=[z[0] for z in tr.z],
        attention=[cache[4][0] for cache in tr.caches],
        assignment=None if tr.assignment is None else tr.assignment[0],
        pooled=None if tr.pooled is None else tr.pooled[0],
        readout_vector=tr.readout_vec[0],
        logits=tr.logits[0],
    )
    return trace.logits, trace


def mhsa_layer(z_prev, layer: AttentionLayerParams) -> np.ndarray:
    """One multi-head self-attention layer applied to a single sample."""
    z_prev = np.asarray(z_prev, dtype=np.float64)
    out, _ = _mhsa_forward(z_prev[None], layer)
    return out[0]


def ocread(z, centers) -> tuple[np.ndarray, np.ndarray]:
    """Soft cluster pooling of node embeddings.

    Returns (pooled, assignment): assignment[i, k] is node i's softmax
    weight on center k, pooled = assignment.T @ z.
    """
    z = np.asarray(z, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64)
    p = softmax_lastaxis(z @ centers.T)
    return p.T @ z, p


def baseline_readout(z, kind: Readout) -> np.ndarray:
    """Non-clustering readouts: column-wise mean/sum/max or flatten."""
    z = np.asarray(z, dtype=np.float64)
    if kind is Readout.MEAN:
        return z.mean(axis=0)
    if kind is Readout.SUM:
        return z.sum(axis=0)
    if kind is Readout.MAX:
        return z.max(axis=0)
    if kind is Readout.CONCAT:
        return z.reshape(-1)
    raise ValueError(f"not a baseline readout: {kind}")


def batch_loss(batch, params: ModelParams, config: ModelConfig) -> float:
    """Mean cross-entropy of a batch of (graph, label) pairs."""
    x = np.stack([np.asarray(g, dtype=np.float64) for g, _ in batch])
    y = np.array([label for _, label in batch], dtype=np.intp)
    tr = _forward_batch(x, params, config)
    logp = _log_softmax(tr.logits)
    return float(-logp[np.arange(len(batch)), y].mean())


def loss_and_grad(batch, params: ModelParams, config: ModelConfig):
    """Mean cross-entropy over the batch and analytic parameter gradients.

    Gradients come back as a ModelParams of matching shapes.  Centers
    receive gradient only for the learnable-centers clustering readout;
    otherwise their slot is zero.
    """
    if len(batch) == 0:
        raise ValueError("batch must be non-empty")
    x = np.stack([np.asarray(g, dtype=np.float64) for g, _ in batch])
    y = np.array([label for _, label in batch], dtype=np.intp)
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    b = len(batch)

    tr = _forward_batch(x, params, config)
    logp = _log_softmax(tr.logits)
    loss = float(-logp[np.arange(b), y].mean())

    grads = params.zeros_like()

    dlogits = np.exp(logp)
    dlogits[np.arange(b), y] -= 1.0
    dlogits /= b

    # MLP backward
    da = dlogits
    acts = tr.mlp_acts
    for i in range(len(params.mlp_weights) - 1, -1, -1):
        a_prev = acts[i]
        grads.mlp_weights[i][...] = a_prev.T @ da
        grads.mlp_biases[i][...] = da.sum(axis=0)
        if i > 0:
            da = (da @ params.mlp_weights[i].T) * (1.0 - acts[i] * acts[i])
        else:
            da = da @ params.mlp_weights[i].T

    dz, dcenters = _readout_backward(da, tr, params, config)
    if dcenters is not None:
        grads.centers[...] = dcenters

    for i in range(len(params.layers) - 1, -1, -1):
        dz, layer_grads = _mhsa_backward(dz, params.layers[i], tr.caches[i])
        grads.layers[i].w_query[...] = layer_grads.w_query
        grads.layers[i].w_key[...] = layer_grads.w_key
        grads.layers[i].w_value[...] = layer_grads.w_value
        grads.layers[i].w_output[...] = layer_grads.w_output

    return loss, grads


def predict_proba(graphs, params: ModelParams, config: ModelConfig, chunk: int = 256) -> np.ndarray:
    """P(class 1) for each graph, evaluated in fixed-size chunks."""
    out = np.empty(len(graphs))
    for start in range(0, len(graphs), chunk):
        x = np.stack([np.asarray(g, dtype=np.float64) for g in graphs[start : start + chunk]])
        tr = _forward_batch(x, params, config)
        z = tr.logits[:, 1] - tr.logits[:, 0]
        out[start : start + len(x)] = np.where(
            z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z)))
        )
    return out
