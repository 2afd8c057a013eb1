"""Iterative Competitive Sparse (ICS) dynamical sparsifier.

Per row: rectify, then T rounds of mean-field inhibition
x <- ReLU(x - alpha_t * mean(x)), then elementwise rescale by gamma.
Suppressed coordinates are exact 0.0, and the row L1 norm never increases
across steps. The whole dynamic is differentiable w.r.t. the input, the
extinction rates, and gamma.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .engine import (
    DimensionError,
    EngineError,
    Tensor,
    _flop_override,
    element,
    mean_last_axis,
    mul,
    relu,
    softplus,
    sub,
)


@dataclass
class ICSParams:
    """Per-view sparsifier parameters.

    alphas_raw holds T unconstrained trainables. In the default "softplus"
    mode the effective extinction rate is softplus(raw) > 0, which keeps the
    L1-decay guarantee intact no matter what the optimizer does. The
    "identity" mode trusts raw values as-is; it exists for closed-form
    diagnostics where an exact alpha (e.g. 0.1) matters.
    """

    alphas_raw: Tensor
    gamma: Tensor
    iterations: int
    positivity: str = "softplus"

    @classmethod
    def create(cls, d: int, iterations: int = 5, alpha_init: float = 0.1,
               positivity: str = "softplus") -> "ICSParams":
        if positivity == "softplus":
            raw = math.log(math.expm1(alpha_init))
        elif positivity == "identity":
            raw = alpha_init
        else:
            raise EngineError(f"unknown positivity mode {positivity!r}")
        return cls(
            alphas_raw=Tensor(np.full(iterations, raw), requires_grad=True),
            gamma=Tensor(np.ones(d), requires_grad=True),
            iterations=iterations,
            positivity=positivity,
        )

    def effective_alphas(self) -> np.ndarray:
        if self.positivity == "softplus":
            return np.logaddexp(0.0, self.alphas_raw.data)
        return self.alphas_raw.data.copy()


@dataclass
class ICSTrace:
    """Per-step diagnostics: state after init plus after each iteration."""

    sparsity: list = field(default_factory=list)
    mean_abs: list = field(default_factory=list)
    mu: list = field(default_factory=list)
    states: list = field(default_factory=list)  # raw x^(t) copies

    def record(self, x: np.ndarray):
        self.sparsity.append(float(np.mean(x == 0.0)))
        self.mean_abs.append(float(np.mean(np.abs(x))))
        self.mu.append(float(np.mean(x.mean(axis=-1))))
        self.states.append(x.copy())

    def rows(self):
        """(step, sparsity, mean_abs, mu) rows for CSV export."""
        return [(t, s, m, u) for t, (s, m, u)
                in enumerate(zip(self.sparsity, self.mean_abs, self.mu))]


# elementary add/compare counter for the complexity probe
_ics_op_counter: list | None = None


def ics_forward(z: Tensor, params: ICSParams,
                record_trace: bool = False) -> tuple[Tensor, ICSTrace | None]:
    d = z.data.shape[-1]
    if d != params.gamma.data.shape[0]:
        raise DimensionError(
            f"ics_forward: input width {d} != gamma length "
            f"{params.gamma.data.shape[0]}")

    # fused FLOP charge: init rectify + T*(mean, subtract, rectify) + rescale
    with _flop_override(z.data.size * (2 + 3 * params.iterations)):
        return _ics_forward_impl(z, params, record_trace)


def _ics_forward_impl(z, params, record_trace):
    x = relu(z)
    if _ics_op_counter is not None:
        _ics_op_counter[0] += x.data.size  # init rectification comparisons

    trace = ICSTrace() if record_trace else None
    if trace is not None:
        trace.record(x.data)

    if params.positivity == "softplus":
        alphas = softplus(params.alphas_raw)
    else:
        alphas = params.alphas_raw

    for t in range(params.iterations):
        mu = mean_last_axis(x)  # inhibition field over all d coordinates
        x = relu(sub(x, mul(element(alphas, t), mu)))
        if _ics_op_counter is not None:
            _ics_op_counter[1] += 3 * x.data.size  # mean + subtract + rectify
        if trace is not None:
            trace.record(x.data)

    y = mul(x, params.gamma)
    if _ics_op_counter is not None:
        _ics_op_counter[0] += y.data.size  # gamma rescale
    return y, trace


def ics_sparsity(y: Tensor | np.ndarray) -> float:
    data = y.data if isinstance(y, Tensor) else np.asarray(y)
    return float(np.mean(data == 0.0))


def ste_topk_forward(z: Tensor, k: int) -> Tensor:
    """Keep the k largest-magnitude entries per row, zero the rest.

    Straight-through backward: gradients pass unchanged to z.
    """
    d = z.data.shape[-1]
    if not 1 <= k <= d:
        raise EngineError(f"ste_topk k={k} out of range [1, {d}]")
    flat = z.data.reshape(-1, d)
    mask = np.zeros_like(flat)
    keep = np.argpartition(-np.abs(flat), k - 1, axis=1)[:, :k]
    np.put_along_axis(mask, keep, 1.0, axis=1)
    mask = mask.reshape(z.data.shape)
    out = Tensor(z.data * mask, parents=(z,))

    def grad_fn(g):
        if z.requires_grad:
            z.grad = g.copy() if z.grad is None else z.grad + g

    out._grad_fn = grad_fn
    return out


def ics_complexity_probe(d: int, iterations: int, trials: int = 1,
                         seed: int = 0) -> dict:
    """Run instrumented ics_forward and report elementary op counts.

    Returns {"init_phase": adds/compares outside the loop,
             "iterative_phase": adds/compares inside the loop,
             "total": sum}.
    """
    global _ics_op_counter
    if d < 1 or iterations < 1 and iterations != 0 or trials < 1:
        raise EngineError("ics_complexity_probe arguments must be >= 1")
    rng = np.random.default_rng(seed)
    z = Tensor(rng.standard_normal((trials, d)))
    params = ICSParams.create(d, iterations=iterations)
    counter = [0, 0]
    _ics_op_counter = counter
    try:
        ics_forward(z, params)
    finally:
        _ics_op_counter = None
    return {"init_phase": counter[0], "iterative_phase": counter[1],
            "total": counter[0] + counter[1]}
