"""Training loop, Adam optimizer, checkpoints, and train reports.

Weight decay is applied classically: l2 term added to the gradient
before the Adam moments (not decoupled).  The choice is recorded in
every TrainReport.  Model selection picks the epoch with the highest
validation AUROC (first epoch on ties) and the returned parameters are
a snapshot from that epoch.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import metrics as metrics_mod
from .model import (
    CentersMode,
    FeatureMode,
    ModelConfig,
    ModelParams,
    AttentionLayerParams,
    Readout,
    init_params,
    loss_and_grad,
    predict_proba,
    trainable_names,
)
from .rng import Rng

CHECKPOINT_MAGIC = b"BNTM"
CHECKPOINT_VERSION = 1
WEIGHT_DECAY_MODE = "l2_in_gradient"

_INIT_STREAM = 0
_EPOCH_STREAM_BASE = 1


class CheckpointFormatError(Exception):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-4
    batch_size: int = 64
    epochs: int = 200
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def validate(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ValueError("betas must lie in [0, 1)")
        if self.eps <= 0:
            raise ValueError("eps must be positive")


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(param_map: dict, grad_map: dict, state: AdamState, config: TrainConfig) -> None:
    """One Adam update, in place, over the tensors named in param_map.

    Tensors absent from param_map (frozen ones) are untouched; their
    entries never enter the moment estimates either.
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - config.beta1**t
    bc2 = 1.0 - config.beta2**t
    for name, p in param_map.items():
        g = grad_map[name]
        if config.weight_decay:
            g = g + config.weight_decay * p
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        v *= config.beta2
        v += (1.0 - config.beta2) * (g * g)
        p -= config.lr * (m / bc1) / (np.sqrt(v / bc2) + config.eps)


@dataclass
class TrainReport:
    seed: int
    selected_epoch: int
    train_loss: list[float]
    val_auroc: list[float]
    test: metrics_mod.EvalResult
    model_config: ModelConfig
    train_config: TrainConfig
    weight_decay_mode: str = WEIGHT_DECAY_MODE

    def to_text(self) -> str:
        mc, tc = self.model_config, self.train_config

        def fmt(x):
            return "undefined" if x is None else repr(float(x))

        lines = [
            "kind = train_report",
            f"seed = {self.seed}",
            f"selected_epoch = {self.selected_epoch}",
            f"weight_decay_mode = {self.weight_decay_mode}",
            f"config.nodes = {mc.nodes}",
            f"config.layers = {mc.layers}",
            f"config.heads = {mc.heads}",
            f"config.clusters = {mc.clusters}",
            f"config.head_dim = {mc.head_dim}",
            "config.mlp_hidden = " + " ".join(str(h) for h in mc.mlp_hidden),
            f"config.readout = {mc.readout.value}",
            f"config.centers_mode = {mc.centers_mode.value}",
            f"config.feature_mode = {mc.feature_mode.value}",
            f"config.k_eigen = {mc.k_eigen}",
            f"train.lr = {tc.lr!r}",
            f"train.weight_decay = {tc.weight_decay!r}",
            f"train.batch_size = {tc.batch_size}",
            f"train.epochs = {tc.epochs}",
            "train_loss = " + " ".join(repr(x) for x in self.train_loss),
            "val_auroc = " + " ".join(repr(x) for x in self.val_auroc),
            f"test.auroc = {fmt(self.test.auroc)}",
            f"test.accuracy = {fmt(self.test.accuracy)}",
            f"test.sensitivity = {fmt(self.test.sensitivity)}",
            f"test.specificity = {fmt(self.test.specificity)}",
            f"test.n_pos = {self.test.n_pos}",
            f"test.n_neg = {self.test.n_neg}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TrainReport":
        kv: dict[str, str] = {}
        for line in text.splitlines():
            if "=" in line:
                key, _, value = line.partition("=")
                kv[key.strip()] = value.strip()
        if kv.get("kind") != "train_report":
            raise ValueError("not a train report document")

        def opt(value):
            return None if value == "undefined" else float(value)

        mc = ModelConfig(
            nodes=int(kv["config.nodes"]),
            layers=int(kv["config.layers"]),
            heads=int(kv["config.heads"]),
            clusters=int(kv["config.clusters"]),
            head_dim=int(kv["config.head_dim"]),
            mlp_hidden=tuple(int(x) for x in kv["config.mlp_hidden"].split()),
            readout=Readout(kv["config.readout"]),
            centers_mode=CentersMode(kv["config.centers_mode"]),
            feature_mode=FeatureMode(kv["config.feature_mode"]),
            k_eigen=int(kv["config.k_eigen"]),
        )
        tc = TrainConfig(
            lr=float(kv["train.lr"]),
            weight_decay=float(kv["train.weight_decay"]),
            batch_size=int(kv["train.batch_size"]),
            epochs=int(kv["train.epochs"]),
            seed=int(kv["seed"]),
        )
        test = metrics_mod.EvalResult(
            auroc=opt(kv["test.auroc"]),
            accuracy=opt(kv["test.accuracy"]),
            sensitivity=opt(kv["test.sensitivity"]),
            specificity=opt(kv["test.specificity"]),
            n_pos=int(kv["test.n_pos"]),
            n_neg=int(kv["test.n_neg"]),
        )
        return cls(
            seed=int(kv["seed"]),
            selected_epoch=int(kv["selected_epoch"]),
            train_loss=[float(x) for x in kv.get("train_loss", "").split()],
            val_auroc=[float(x) for x in kv.get("val_auroc", "").split()],
            test=test,
            model_config=mc,
            train_config=tc,
            weight_decay_mode=kv.get("weight_decay_mode", WEIGHT_DECAY_MODE),
        )


def evaluate(params: ModelParams, config: ModelConfig, graphs) -> tuple[metrics_mod.EvalResult, np.ndarray]:
    """Score graphs and compute the evaluation metrics.

    AUROC is None when only one class is present (threshold metrics are
    still reported where defined).
    """
    labels = np.array([g.label for g in graphs], dtype=np.intp)
    scores = predict_proba([g.matrix for g in graphs], params, config)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    auroc_val = metrics_mod.auroc(scores, labels) if n_pos and n_neg else None
    accuracy, sensitivity, specificity = metrics_mod.threshold_metrics(scores, labels)
    return (
        metrics_mod.EvalResult(auroc_val, accuracy, sensitivity, specificity, n_pos, n_neg),
        scores,
    )


def train(
    graphs,
    plan,
    model_config: ModelConfig,
    train_config: TrainConfig,
) -> tuple[ModelParams, TrainReport]:
    """Train on the plan's train ids, select on val AUROC, report on test."""
    model_config.validate()
    train_config.validate()
    by_id = {g.subject_id: g for g in graphs}
    missing = [i for ids in (plan.train, plan.val, plan.test) for i in ids if i not in by_id]
    if missing:
        raise ValueError(f"split references unknown subject ids, e.g. {missing[0]}")
    train_graphs = [by_id[i] for i in plan.train]
    val_graphs = [by_id[i] for i in plan.val]
    test_graphs = [by_id[i] for i in plan.test]
    if not train_graphs:
        raise ValueError("training split is empty")
    val_labels = {g.label for g in val_graphs}
    if val_labels != {0, 1}:
        raise ValueError("validation split must contain both classes for model selection")

    rng = Rng(train_config.seed)
    params = init_params(model_config, rng.derive(_INIT_STREAM))
    trainable = trainable_names(model_config)
    param_map = {n: t for n, t in params.named_tensors() if n in trainable}
    state = AdamState()

    samples = [(g.matrix, g.label) for g in train_graphs]
    n = len(samples)
    bs = train_config.batch_size

    best_auroc = -np.inf
    best_epoch = 0
    best_params = None
    train_losses: list[float] = []
    val_aurocs: list[float] = []

    for epoch in range(1, train_config.epochs + 1):
        perm = rng.derive(_EPOCH_STREAM_BASE + epoch).shuffle(n)
        epoch_loss = 0.0
        for start in range(0, n, bs):
            batch = [samples[i] for i in perm[start : start + bs]]
            loss, grads = loss_and_grad(batch, params, model_config)
            grad_map = dict(grads.named_tensors())
            adam_step(param_map, {k: grad_map[k] for k in param_map}, state, train_config)
            epoch_loss += loss * len(batch)
        train_losses.append(epoch_loss / n)

        val_result, _ = evaluate(params, model_config, val_graphs)
        val_aurocs.append(val_result.auroc)
        if val_result.auroc > best_auroc:
            best_auroc = val_result.auroc
            best_epoch = epoch
            best_params = params.copy()

    test_result, _ = evaluate(best_params, model_config, test_graphs)
    report = TrainReport(
        seed=train_config.seed,
        selected_epoch=best_epoch,
        train_loss=train_losses,
        val_auroc=val_aurocs,
        test=test_result,
        model_config=model_config,
        train_config=train_config,
    )
    return best_params, report


# ---------------------------------------------------------------------------
# Checkpoints: magic, version, config fields, then every tensor as
# little-endian float64 in declaration order.
# ---------------------------------------------------------------------------

_READOUT_CODES = [Readout.OCREAD, Readout.MEAN, Readout.MAX, Readout.SUM, Readout.CONCAT]
_CENTERS_CODES = [CentersMode.ORTHONORMAL, CentersMode.RANDOM_UNIT, CentersMode.LEARNABLE]
_FEATURE_CODES = [FeatureMode.PROFILE, FeatureMode.PROFILE_IDENTITY, FeatureMode.PROFILE_EIGEN]


def _zero_params(config: ModelConfig) -> ModelParams:
    v, hd, m = config.nodes, config.head_dim, config.heads
    layers = []
    for l in range(config.layers):
        w = config.input_width if l == 0 else v
        layers.append(
            AttentionLayerParams(
                np.zeros((m, hd, w)), np.zeros((m, hd, w)), np.zeros((m, hd, w)),
                np.zeros((m * hd, v)),
            )
        )
    widths = [config.flat_dim, *config.mlp_hidden, 2]
    return ModelParams(
        layers=layers,
        centers=np.zeros((config.clusters, v)),
        mlp_weights=[np.zeros((widths[i], widths[i + 1])) for i in range(len(widths) - 1)],
        mlp_biases=[np.zeros(widths[i + 1]) for i in range(len(widths) - 1)],
    )


def save_checkpoint(path, params: ModelParams, config: ModelConfig) -> None:
    head = struct.pack(
        "<4sIIIIII",
        CHECKPOINT_MAGIC,
        CHECKPOINT_VERSION,
        config.nodes,
        config.layers,
        config.heads,
        config.clusters,
        config.head_dim,
    )
    head += struct.pack("<I", len(config.mlp_hidden))
    head += struct.pack(f"<{len(config.mlp_hidden)}I", *config.mlp_hidden)
    head += struct.pack(
        "<BBBI",
        _READOUT_CODES.index(config.readout),
        _CENTERS_CODES.index(config.centers_mode),
        _FEATURE_CODES.index(config.feature_mode),
        config.k_eigen,
    )
    with open(path, "wb") as f:
        f.write(head)
        for _, tensor in params.named_tensors():
            f.write(np.ascontiguousarray(tensor, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[ModelParams, ModelConfig]:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"not a checkpoint file: magic {raw[:4]!r}")
    try:
        version, nodes, layers, heads, clusters, head_dim = struct.unpack_from("<IIIIII", raw, 4)
        off = 4 + 24
        if version != CHECKPOINT_VERSION:
            raise CheckpointFormatError(f"unsupported checkpoint version {version}")
        (n_hidden,) = struct.unpack_from("<I", raw, off)
        off += 4
        hidden = struct.unpack_from(f"<{n_hidden}I", raw, off)
        off += 4 * n_hidden
        r_code, c_code, f_code, k_eigen = struct.unpack_from("<BBBI", raw, off)
        off += 7
        config = ModelConfig(
            nodes=nodes,
            layers=layers,
            heads=heads,
            clusters=clusters,
            head_dim=head_dim,
            mlp_hidden=tuple(hidden),
            readout=_READOUT_CODES[r_code],
            centers_mode=_CENTERS_CODES[c_code],
            feature_mode=_FEATURE_CODES[f_code],
            k_eigen=k_eigen,
        )
    except (struct.error, IndexError) as exc:
        raise CheckpointFormatError(f"corrupt checkpoint header: {exc}") from exc

    params = _zero_params(config)
    total = sum(t.size for _, t in params.named_tensors())
    if len(raw) - off != 8 * total:
        raise CheckpointFormatError(
            f"checkpoint body is {len(raw) - off} bytes, expected {8 * total}"
        )
    for _, tensor in params.named_tensors():
        flat = np.frombuffer(raw, dtype="<f8", count=tensor.size, offset=off)
        tensor[...] = flat.reshape(tensor.shape)
        off += 8 * tensor.size
    return params, config
