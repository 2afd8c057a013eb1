"""Model assembly, Adam optimization, training with early stopping, and the
versioned JSON checkpoint format."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import EncodedDataset
from .engine import Tape, Tensor, concat_last_axis, embedding_lookup, sigmoid_bce
from .layers import DenseLayer, PredictionHead, SSRLayer, SSRLayerConfig
from .metrics import evaluate_auc, evaluate_gauc, evaluate_logloss
from .views import ViewSelection

CHECKPOINT_FORMAT_VERSION = 1

BACKBONE_KINDS = ("ssr_static", "ssr_dynamic", "dense_mlp", "ssr_topk_ste",
                  "ssr_dropout", "ssr_unfiltered")

_KIND_TO_VARIANT = {
    "ssr_static": "static",
    "ssr_dynamic": "dynamic",
    "ssr_topk_ste": "topk_ste",
    "ssr_dropout": "dropout",
    "ssr_unfiltered": "unfiltered",
}


class ConfigError(Exception):
    pass


@dataclass
class ModelConfig:
    backbone: str = "ssr_static"
    depth: int = 2
    b: int = 4
    d_v: int = 16
    d_v_star: int | None = None
    iterations: int = 5
    alpha_init: float = 0.1
    activation: str = "gelu"
    ln_affine: bool = True
    learn_gamma: bool = True
    embed_dim: int = 16
    dense_hidden: int = 64  # dense_mlp hidden width knob
    heads: tuple = ("ctr",)
    seed: int = 0

    def __post_init__(self):
        if self.backbone not in BACKBONE_KINDS:
            raise ConfigError(f"unknown backbone kind {self.backbone!r}")
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")
        if isinstance(self.heads, list):
            self.heads = tuple(self.heads)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 1024
    max_epochs: int = 20
    patience: int = 3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        for name in ("learning_rate", "batch_size", "max_epochs", "beta1",
                     "beta2", "eps"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")


@dataclass
class MetricsReport:
    auc: float
    logloss: float
    gauc: float | None = None
    history: list = field(default_factory=list)
    best_epoch: int = -1


class Model:
    def __init__(self, config: ModelConfig, vocab_sizes: list):
        self.config = config
        self.vocab_sizes = list(vocab_sizes)
        self.tape = Tape()
        rng = np.random.Generator(np.random.PCG64(config.seed))

        self.embeddings: list[Tensor] = []
        for j, v in enumerate(vocab_sizes):
            limit = np.sqrt(6.0 / (v + config.embed_dim))
            self.embeddings.append(self.tape.parameter(
                f"embed.f{j}",
                rng.uniform(-limit, limit, size=(v, config.embed_dim))))
        self.input_width = len(vocab_sizes) * config.embed_dim

        self.layers: list = []
        d_in = self.input_width
        for li in range(config.depth):
            is_final = li == config.depth - 1
            if config.backbone == "dense_mlp":
                d_out = config.d_v if is_final else config.dense_hidden
                layer = DenseLayer(d_in, d_out, self.tape, f"layer{li}",
                                   seed=config.seed * 7919 + li + 1,
                                   activation=config.activation)
            else:
                lcfg = SSRLayerConfig(
                    variant=_KIND_TO_VARIANT[config.backbone],
                    b=config.b, d_v=config.d_v, d_v_star=config.d_v_star,
                    iterations=config.iterations,
                    alpha_init=config.alpha_init,
                    activation=config.activation, is_final=is_final,
                    ln_affine=config.ln_affine,
                    learn_gamma=config.learn_gamma)
                # layer-indexed seed: each depth resamples its own selection
                layer = SSRLayer(lcfg, d_in, self.tape, f"layer{li}",
                                 seed=config.seed * 7919 + li + 1)
            self.layers.append(layer)
            d_in = layer.out_width

        if d_in != config.d_v:
            raise ConfigError(
                f"final layer emits width {d_in}, heads expect {config.d_v}")
        self.heads = [PredictionHead(config.d_v, self.tape, task,
                                     seed=config.seed * 104729 + i)
                      for i, task in enumerate(config.heads)]

    # ------------------------------------------------------------------
    def embed(self, ids: np.ndarray) -> Tensor:
        if ids.shape[1] != len(self.embeddings):
            raise ConfigError(
                f"expected {len(self.embeddings)} fields, got {ids.shape[1]}")
        parts = [embedding_lookup(t, ids[:, j])
                 for j, t in enumerate(self.embeddings)]
        return concat_last_axis(parts)

    def backbone_forward(self, ids: np.ndarray, training: bool = False,
                         mask_rng=None, stats: list | None = None) -> Tensor:
        x = self.embed(ids)
        for layer in self.layers:
            x = layer.forward(x, training=training, mask_rng=mask_rng,
                              stats=stats)
        return x

    def logits(self, ids: np.ndarray, training: bool = False,
               mask_rng=None) -> list[Tensor]:
        zbar = self.backbone_forward(ids, training, mask_rng)
        return [h.logits(zbar) for h in self.heads]

    def predict_proba(self, ids: np.ndarray, batch_size: int = 4096) -> np.ndarray:
        """Deterministic inference probabilities for head 0, shape (n,)."""
        out = []
        for s in range(0, ids.shape[0], batch_size):
            zbar = self.backbone_forward(ids[s:s + batch_size])
            out.append(self.heads[0].predict(zbar).data.reshape(-1))
        return np.concatenate(out) if out else np.zeros(0)

    def ics_activation_stats(self, ids: np.ndarray) -> list:
        """(layer, view, sparsity, mean_abs) of ICS outputs on a probe batch."""
        stats: list = []
        self.backbone_forward(ids, stats=stats)
        return stats


def build_model(config: ModelConfig, vocab_sizes: list) -> Model:
    return Model(config, vocab_sizes)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

def adam_init(tape: Tape) -> dict:
    return {"t": 0,
            "m": {k: np.zeros_like(p.data) for k, p in tape.parameters.items()},
            "v": {k: np.zeros_like(p.data) for k, p in tape.parameters.items()}}


def adam_step(tape: Tape, state: dict, cfg: TrainConfig):
    state["t"] += 1
    t = state["t"]
    b1, b2 = cfg.beta1, cfg.beta2
    for k, p in tape.parameters.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state["m"][k] = b1 * state["m"][k] + (1 - b1) * g
        v = state["v"][k] = b2 * state["v"][k] + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        p.data = p.data - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def train(model: Model, data: EncodedDataset, cfg: TrainConfig,
          step_hook=None, log=None) -> MetricsReport:
    """Minimize mean BCE (summed over heads), early-stop on validation AUC,
    restore the best checkpoint.

    step_hook(step, model) fires after every optimizer step; log(record)
    receives one dict per epoch (includes wall seconds, which is why timing
    never lands in the deterministic metrics output).
    """
    train_ids, train_labels, _ = data.split_arrays("train")
    val_ids, val_labels, _ = data.split_arrays("val")
    if train_ids.shape[0] == 0 or val_ids.shape[0] == 0:
        raise ConfigError("empty train or validation split")
    train_labels = train_labels.reshape(train_ids.shape[0], -1)
    n_tasks = train_labels.shape[1]
    if n_tasks != len(model.heads):
        raise ConfigError(f"{n_tasks} label columns vs {len(model.heads)} heads")

    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    mask_rng = np.random.Generator(np.random.PCG64(cfg.seed + 1))
    state = adam_init(model.tape)

    best_auc = -np.inf
    best_state = model.tape.state()
    best_epoch = -1
    bad_epochs = 0
    history = []
    step = 0

    for epoch in range(cfg.max_epochs):
        t0 = time.perf_counter()
        order = rng.permutation(train_ids.shape[0])
        losses = []
        for s in range(0, order.size, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            model.tape.zero_grad()
            logit_list = model.logits(train_ids[idx], training=True,
                                      mask_rng=mask_rng)
            loss = None
            for h, logits in enumerate(logit_list):
                y = Tensor(train_labels[idx, h].astype(np.float64)
                           .reshape(-1, 1))
                bce = sigmoid_bce(logits, y)
                loss = bce if loss is None else loss + bce
            model.tape.backward(loss)
            adam_step(model.tape, state, cfg)
            losses.append(loss.item())
            step += 1
            if step_hook is not None:
                step_hook(step, model)

        val_scores = model.predict_proba(val_ids)
        val_first = val_labels.reshape(val_ids.shape[0], -1)[:, 0]
        val_auc = evaluate_auc(val_scores, val_first)
        val_logloss = evaluate_logloss(val_scores, val_first)
        record = {"epoch": epoch, "train_loss": float(np.mean(losses)),
                  "val_auc": val_auc, "val_logloss": val_logloss}
        history.append(dict(record))
        if log is not None:
            log({**record, "seconds": time.perf_counter() - t0})

        if val_auc > best_auc:
            best_auc = val_auc
            best_state = model.tape.state()
            best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.patience:
                break

    model.tape.load_state(best_state)

    test_ids, test_labels, test_users = data.split_arrays("test")
    test_first = test_labels.reshape(test_ids.shape[0], -1)[:, 0]
    scores = model.predict_proba(test_ids)
    gauc = None
    try:
        gauc = evaluate_gauc(scores, test_first, test_users)
    except Exception:
        pass
    return MetricsReport(auc=evaluate_auc(scores, test_first),
                         logloss=evaluate_logloss(scores, test_first),
                         gauc=gauc, history=history, best_epoch=best_epoch)


# ---------------------------------------------------------------------------
# Checkpoints: versioned JSON, byte-deterministic for a given model state
# ---------------------------------------------------------------------------

def save_checkpoint(model: Model, path: str):
    selections = {}
    for layer in model.layers:
        if getattr(layer, "selection", None) is not None:
            selections[layer.name] = layer.selection.to_lists()
    doc = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "model_config": asdict(model.config),
        "vocab_sizes": model.vocab_sizes,
        "selections": selections,
        "params": {k: {"shape": list(p.data.shape),
                       "data": p.data.reshape(-1).tolist()}
                   for k, p in model.tape.parameters.items()},
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True, separators=(",", ":"))


def load_checkpoint(path: str) -> Model:
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ConfigError(
            f"unsupported checkpoint format_version {doc.get('format_version')}")
    cfg = doc["model_config"]
    cfg["heads"] = tuple(cfg["heads"])
    model = Model(ModelConfig(**cfg), doc["vocab_sizes"])
    for layer in model.layers:
        sel = doc["selections"].get(layer.name)
        if sel is not None:
            layer.selection = ViewSelection.from_lists(sel, layer.d_in,
                                                       seed=layer.selection.seed)
    for k, p in model.tape.parameters.items():
        entry = doc["params"][k]
        p.data = np.array(entry["data"], dtype=np.float64) \
            .reshape(entry["shape"])
    return model
