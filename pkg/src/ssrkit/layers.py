"""Filter-then-fuse layers.

A layer holds b independent views. Each view filters the input (static index
gather, ICS on a learned projection, or one of the ablation filters), fuses
it through its own small dense matrix V_i + bias, applies the activation and
a per-view layer norm. Intermediate layers concatenate the b normalized
outputs (width b*d_v); the final layer averages them (width d_v), which keeps
the prediction head input independent of b.

The per-view fusion is mathematically one block-diagonal matrix
diag(V_1..V_b) applied to the concatenated filtered inputs; storing the views
separately just avoids materializing the zero off-diagonal blocks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine
from .engine import (
    DimensionError,
    EngineError,
    Tape,
    Tensor,
    add,
    concat_last_axis,
    gelu,
    layer_norm,
    matmul,
    mul,
    relu,
    sigmoid,
)
from .ics import ICSParams, ics_forward, ics_sparsity, ste_topk_forward
from .views import ViewSelection, apply_filter, sample_views

VARIANTS = ("static", "dynamic", "topk_ste", "unfiltered", "dropout")

_ACTIVATIONS = {"gelu": gelu, "relu": relu}


@dataclass
class SSRLayerConfig:
    variant: str = "static"
    b: int = 4
    d_v: int = 16
    d_v_star: int | None = None  # dynamic/topk_ste only; defaults to 2*d_v
    iterations: int = 5
    alpha_init: float = 0.1
    activation: str = "gelu"
    is_final: bool = False
    ln_affine: bool = True
    learn_gamma: bool = True  # rescaling ablation: False pins gamma at 1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise EngineError(f"unknown layer variant {self.variant!r}")
        if self.variant in ("dynamic", "topk_ste"):
            if self.d_v_star is None:
                self.d_v_star = 2 * self.d_v
            if self.d_v_star < self.d_v:
                raise EngineError(
                    f"d_v_star={self.d_v_star} must be >= d_v={self.d_v}")
        if self.activation not in _ACTIVATIONS:
            raise EngineError(f"unknown activation {self.activation!r}")


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class SSRLayer:
    def __init__(self, config: SSRLayerConfig, d_in: int, tape: Tape,
                 name: str, seed: int):
        self.config = config
        self.d_in = d_in
        self.name = name
        rng = np.random.Generator(np.random.PCG64(seed))
        cfg = config

        self.selection: ViewSelection | None = None
        self.proj: list[Tensor] = []
        self.ics: list[ICSParams] = []
        self.fusion: list[Tensor] = []
        self.bias: list[Tensor] = []
        self.ln_scale: list[Tensor] = []
        self.ln_shift: list[Tensor] = []

        fuse_in = self._fusion_input_width()
        if cfg.variant == "static":
            if cfg.d_v > d_in:
                raise EngineError(
                    f"static variant needs d_v <= d_in ({cfg.d_v} > {d_in})")
            self.selection = sample_views(d_in, cfg.d_v, cfg.b, seed)

        for i in range(cfg.b):
            p = f"{name}.view{i}"
            if cfg.variant in ("dynamic", "topk_ste"):
                self.proj.append(tape.parameter(
                    f"{p}.proj", _glorot(rng, d_in, cfg.d_v_star)))
            elif cfg.variant == "unfiltered":
                self.proj.append(tape.parameter(
                    f"{p}.proj", _glorot(rng, d_in, cfg.d_v)))
            if cfg.variant == "dynamic":
                gamma = tape.parameter(f"{p}.ics_gamma", np.ones(cfg.d_v_star)) \
                    if cfg.learn_gamma else Tensor(np.ones(cfg.d_v_star))
                self.ics.append(ICSParams(
                    alphas_raw=tape.parameter(
                        f"{p}.ics_alphas",
                        np.full(cfg.iterations,
                                float(np.log(np.expm1(cfg.alpha_init))))),
                    gamma=gamma,
                    iterations=cfg.iterations,
                ))
            self.fusion.append(tape.parameter(
                f"{p}.fusion", _glorot(rng, fuse_in, cfg.d_v)))
            self.bias.append(tape.parameter(f"{p}.bias", np.zeros(cfg.d_v)))
            if cfg.ln_affine:
                self.ln_scale.append(tape.parameter(f"{p}.ln_scale",
                                                    np.ones(cfg.d_v)))
                self.ln_shift.append(tape.parameter(f"{p}.ln_shift",
                                                    np.zeros(cfg.d_v)))
            else:
                self.ln_scale.append(Tensor(np.ones(cfg.d_v)))
                self.ln_shift.append(Tensor(np.zeros(cfg.d_v)))

    def _fusion_input_width(self) -> int:
        cfg = self.config
        if cfg.variant in ("dynamic", "topk_ste"):
            return cfg.d_v_star
        if cfg.variant == "dropout":
            return self.d_in
        return cfg.d_v  # static and unfiltered fuse from width d_v

    @property
    def out_width(self) -> int:
        return self.config.d_v if self.config.is_final \
            else self.config.b * self.config.d_v

    def filtered(self, x: Tensor, view: int, training: bool = False,
                 mask_rng: np.random.Generator | None = None) -> Tensor:
        cfg = self.config
        if cfg.variant == "static":
            return apply_filter(x, self.selection, view)
        if cfg.variant == "dynamic":
            h, _ = ics_forward(matmul(x, self.proj[view]), self.ics[view])
            return h
        if cfg.variant == "topk_ste":
            return ste_topk_forward(matmul(x, self.proj[view]), cfg.d_v)
        if cfg.variant == "unfiltered":
            return matmul(x, self.proj[view])
        # dropout: keep-rate-matched random masking in training,
        # deterministic identity at evaluation
        if training:
            if mask_rng is None:
                raise EngineError("dropout variant needs mask_rng in training")
            keep = cfg.d_v / self.d_in
            mask = (mask_rng.random(x.data.shape) < keep) / keep
            return mul(x, Tensor(mask))
        return x

    def view_output(self, x: Tensor, view: int, training: bool = False,
                    mask_rng=None) -> Tensor:
        h = self.filtered(x, view, training, mask_rng)
        z = self._act(add(matmul(h, self.fusion[view]), self.bias[view]))
        return layer_norm(z, self.ln_scale[view], self.ln_shift[view])

    def _act(self, t: Tensor) -> Tensor:
        return _ACTIVATIONS[self.config.activation](t)

    def forward(self, x: Tensor, training: bool = False, mask_rng=None,
                stats: list | None = None) -> Tensor:
        if x.data.shape[-1] != self.d_in:
            raise DimensionError(
                f"{self.name}: input width {x.data.shape[-1]} != {self.d_in}")
        outs = []
        for i in range(self.config.b):
            if stats is not None and self.config.variant == "dynamic":
                h = self.filtered(x, i, training, mask_rng)
                stats.append((self.name, i, ics_sparsity(h),
                              float(np.mean(np.abs(h.data)))))
                z = self._act(add(matmul(h, self.fusion[i]), self.bias[i]))
                outs.append(layer_norm(z, self.ln_scale[i], self.ln_shift[i]))
            else:
                outs.append(self.view_output(x, i, training, mask_rng))
        if self.config.is_final:
            acc = outs[0]
            for o in outs[1:]:
                acc = add(acc, o)
            return mul(acc, Tensor(1.0 / self.config.b))
        return concat_last_axis(outs)


class DenseLayer:
    """Plain fully connected layer for the dense-MLP ablation baseline."""

    def __init__(self, d_in: int, d_out: int, tape: Tape, name: str,
                 seed: int, activation: str = "gelu"):
        rng = np.random.Generator(np.random.PCG64(seed))
        self.d_in = d_in
        self.d_out = d_out
        self.name = name
        self.activation = activation
        self.weight = tape.parameter(f"{name}.weight", _glorot(rng, d_in, d_out))
        self.bias = tape.parameter(f"{name}.bias", np.zeros(d_out))

    @property
    def out_width(self) -> int:
        return self.d_out

    def forward(self, x: Tensor, training: bool = False, mask_rng=None,
                stats=None) -> Tensor:
        if x.data.shape[-1] != self.d_in:
            raise DimensionError(
                f"{self.name}: input width {x.data.shape[-1]} != {self.d_in}")
        return _ACTIVATIONS[self.activation](
            add(matmul(x, self.weight), self.bias))


class PredictionHead:
    def __init__(self, d_v: int, tape: Tape, task: str, seed: int):
        rng = np.random.Generator(np.random.PCG64(seed))
        self.task = task
        self.d_v = d_v
        self.weight = tape.parameter(f"head.{task}.weight", _glorot(rng, d_v, 1))
        self.bias = tape.parameter(f"head.{task}.bias", np.zeros(1))

    def logits(self, zbar: Tensor) -> Tensor:
        if zbar.data.shape[-1] != self.d_v:
            raise DimensionError(
                f"head {self.task}: input width {zbar.data.shape[-1]} "
                f"!= {self.d_v}")
        return add(matmul(zbar, self.weight), self.bias)

    def predict(self, zbar: Tensor) -> Tensor:
        return sigmoid(self.logits(zbar))


def block_diagonal_fusion_matrix(layer: SSRLayer) -> np.ndarray:
    """Materialized diag(V_1..V_b); oracle for the per-view implementation."""
    b = layer.config.b
    fin = layer._fusion_input_width()
    d_v = layer.config.d_v
    big = np.zeros((b * fin, b * d_v))
    for i in range(b):
        big[i * fin:(i + 1) * fin, i * d_v:(i + 1) * d_v] = layer.fusion[i].data
    return big
