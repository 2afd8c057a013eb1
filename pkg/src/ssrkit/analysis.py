"""Diagnostics and experiment protocols: weight-sparsity reports, ICS
training dynamics traces, view-similarity matrices, axis sweeps, and the
component ablation suite."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import EncodedDataset
from .flops import flop_count, param_count
from .layers import DenseLayer, SSRLayer
from .model import Model, ModelConfig, TrainConfig, build_model, train


class ReportError(Exception):
    pass


# ---------------------------------------------------------------------------
# Weight sparsity (near-zero fraction + mass concentration)
# ---------------------------------------------------------------------------

@dataclass
class SparsityReport:
    near_zero_fraction: float
    mass_concentration: float
    threshold: float
    quantile: float
    matrix: str


def _named_matrices(model: Model) -> dict[str, np.ndarray]:
    out = {}
    for layer in model.layers:
        if isinstance(layer, DenseLayer):
            out[f"{layer.name}.weight"] = layer.weight.data
        else:
            out[f"{layer.name}.fusion"] = np.hstack(
                [v.data for v in layer.fusion])
            if layer.proj:
                out[f"{layer.name}.proj"] = np.hstack(
                    [p.data for p in layer.proj])
    return out


def report_weight_sparsity(model: Model, threshold: float = 1e-3,
                           quantile: float = 0.8,
                           matrix: str | None = None) -> SparsityReport:
    mats = _named_matrices(model)
    if matrix is None:
        # first fusion/dense layer
        matrix = f"{model.layers[0].name}.weight" \
            if isinstance(model.layers[0], DenseLayer) \
            else f"{model.layers[0].name}.fusion"
    if matrix not in mats:
        raise ReportError(f"matrix {matrix!r} not found; available: "
                          f"{sorted(mats)}")
    w = mats[matrix]
    near_zero = float(np.mean(np.abs(w) < threshold))
    power = np.sqrt(np.sum(w * w, axis=0))  # column-wise L2 mass
    order = np.sort(power)[::-1]
    total = order.sum()
    if total == 0:
        concentration = 0.0
    else:
        cum = np.cumsum(order)
        k = int(np.searchsorted(cum, quantile * total) + 1)
        concentration = k / order.size
    return SparsityReport(near_zero_fraction=near_zero,
                          mass_concentration=concentration,
                          threshold=threshold, quantile=quantile,
                          matrix=matrix)


# ---------------------------------------------------------------------------
# ICS training dynamics (probe-batch time series)
# ---------------------------------------------------------------------------

class _StopTraining(Exception):
    pass


def trace_ics_dynamics(model: Model, data: EncodedDataset, cfg: TrainConfig,
                       total_steps: int, sample_every: int = 1,
                       probe_size: int = 512) -> list[tuple]:
    """Train for total_steps and sample (step, layer, view, sparsity,
    mean_abs) on a fixed probe batch every sample_every steps (step 0
    included)."""
    if not any(isinstance(l, SSRLayer) and l.config.variant == "dynamic"
               for l in model.layers):
        raise ReportError("trace_ics_dynamics requires dynamic (ICS) layers")
    train_ids, _, _ = data.split_arrays("train")
    rng = np.random.Generator(np.random.PCG64(cfg.seed + 97))
    probe = train_ids[rng.choice(train_ids.shape[0],
                                 size=min(probe_size, train_ids.shape[0]),
                                 replace=False)]
    rows: list[tuple] = []

    def sample(step):
        for layer, view, sparsity, mean_abs in model.ics_activation_stats(probe):
            rows.append((step, layer, view, sparsity, mean_abs))

    sample(0)

    def hook(step, m):
        if step % sample_every == 0:
            sample(step)
        if step >= total_steps:
            raise _StopTraining

    run_cfg = replace(cfg, max_epochs=10 ** 9, patience=10 ** 9)
    try:
        train(model, data, run_cfg, step_hook=hook)
    except _StopTraining:
        pass
    return rows


# ---------------------------------------------------------------------------
# View similarity
# ---------------------------------------------------------------------------

def report_view_similarity(model: Model, layer_index: int = 0) -> np.ndarray:
    layer = model.layers[layer_index]
    if not isinstance(layer, SSRLayer) or not layer.proj:
        raise ReportError(
            f"layer {layer_index} has no projection matrices "
            f"(variant must be dynamic or topk_ste)")
    flats = [p.data.reshape(-1) for p in layer.proj]
    b = len(flats)
    sim = np.eye(b)
    for i in range(b):
        for j in range(i + 1, b):
            denom = np.linalg.norm(flats[i]) * np.linalg.norm(flats[j])
            c = float(flats[i] @ flats[j] / denom) if denom > 0 else 0.0
            sim[i, j] = sim[j, i] = c
    return sim


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

SWEEP_AXES = ("views", "width", "depth", "iterations", "alpha", "gamma")


@dataclass
class SweepResult:
    axis: str
    grid: list
    rows: list  # dicts: value, params, flops, val_auc, val_logloss, sparsity
    errors: list


def _apply_axis(config: ModelConfig, axis: str, value) -> ModelConfig:
    if axis == "views":
        return replace(config, b=int(value))
    if axis == "width":
        return replace(config, d_v=int(value), d_v_star=None)
    if axis == "depth":
        return replace(config, depth=int(value))
    if axis == "iterations":
        return replace(config, iterations=int(value))
    if axis == "alpha":
        return replace(config, alpha_init=float(value))
    if axis == "gamma":
        return replace(config, learn_gamma=bool(value))
    raise ReportError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")


def model_sparsity(model: Model, data: EncodedDataset,
                   probe_size: int = 1024, seed: int = 13) -> float:
    """Mean ICS activation sparsity on a probe batch for dynamic models,
    structural keep-rate sparsity for static ones, 0 for dense."""
    first = model.layers[0]
    if isinstance(first, SSRLayer) and first.config.variant == "dynamic":
        train_ids, _, _ = data.split_arrays("train")
        rng = np.random.Generator(np.random.PCG64(seed))
        probe = train_ids[rng.choice(train_ids.shape[0],
                                     size=min(probe_size,
                                              train_ids.shape[0]),
                                     replace=False)]
        stats = model.ics_activation_stats(probe)
        return float(np.mean([s for _, _, s, _ in stats]))
    if isinstance(first, SSRLayer) and first.config.variant == "static":
        return 1.0 - first.config.d_v / first.d_in
    return 0.0


def run_sweep(axis: str, grid: list, base_config: ModelConfig,
              data: EncodedDataset, train_cfg: TrainConfig) -> SweepResult:
    if axis not in SWEEP_AXES:
        raise ReportError(f"unknown sweep axis {axis!r}; choose from "
                          f"{SWEEP_AXES}")
    if not grid:
        raise ReportError("sweep grid must be non-empty")
    rows, errors = [], []
    for value in grid:
        try:
            config = _apply_axis(base_config, axis, value)
            model = build_model(config, data.vocab_sizes)
            report = train(model, data, train_cfg)
            last = report.history[report.best_epoch]
            rows.append({
                "value": value,
                "params": param_count(model)["total"],
                "flops": flop_count(model),
                "val_auc": last["val_auc"],
                "val_logloss": last["val_logloss"],
                "sparsity": model_sparsity(model, data),
            })
        except Exception as e:  # record the failure, keep sweeping
            errors.append({"value": value, "error": f"{type(e).__name__}: {e}"})
    return SweepResult(axis=axis, grid=list(grid), rows=rows, errors=errors)


# ---------------------------------------------------------------------------
# Ablation suite
# ---------------------------------------------------------------------------

ABLATION_VARIANTS = ("full_ssr_d", "wo_sparse_filtering", "wo_multi_view",
                     "ssr_static", "topk_ste", "dropout")


def _variant_config(name: str, base: ModelConfig) -> ModelConfig:
    if name == "full_ssr_d":
        return replace(base, backbone="ssr_dynamic")
    if name == "wo_sparse_filtering":
        return replace(base, backbone="ssr_unfiltered")
    if name == "wo_multi_view":
        return replace(base, backbone="ssr_dynamic", b=1)
    if name == "ssr_static":
        return replace(base, backbone="ssr_static")
    if name == "topk_ste":
        return replace(base, backbone="ssr_topk_ste")
    if name == "dropout":
        return replace(base, backbone="ssr_dropout")
    raise ReportError(f"unknown ablation variant {name!r}")


def match_budget(config: ModelConfig, n_fields: int, target_params: int,
                 tolerance: float = 0.10) -> ModelConfig:
    """Scale d_v (monotone knob) so the backbone parameter count lands
    within +-tolerance of target_params."""
    from .flops import config_param_count

    def count(d_v):
        return config_param_count(replace(config, d_v=d_v, d_v_star=None),
                                  n_fields)

    lo, hi = 1, 4096
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if count(mid) < target_params:
            lo = mid
        else:
            hi = mid
    best = min((lo, hi), key=lambda d: abs(count(d) - target_params))
    matched = replace(config, d_v=best, d_v_star=None)
    if abs(count(best) - target_params) > tolerance * target_params:
        raise ReportError(
            f"cannot match budget {target_params} for backbone "
            f"{config.backbone!r}: closest is {count(best)} at d_v={best}")
    return matched


@dataclass
class AblationResult:
    rows: list  # dicts: variant, params, budget_ratio, mean_auc, delta_auc


def run_ablation_suite(base_config: ModelConfig, data: EncodedDataset,
                       train_cfg: TrainConfig, seeds=(0, 1, 2),
                       variants=ABLATION_VARIANTS) -> AblationResult:
    n_fields = len(data.vocab_sizes)
    base = _variant_config("full_ssr_d", base_config)
    from .flops import config_param_count
    target = config_param_count(base, n_fields)

    rows = []
    base_mean = None
    for name in variants:
        config = _variant_config(name, base_config)
        if name != "full_ssr_d":
            config = match_budget(config, n_fields, target)
        aucs, params = [], None
        for seed in seeds:
            cfg_seeded = replace(config, seed=seed)
            model = build_model(cfg_seeded, data.vocab_sizes)
            report = train(model, data, replace(train_cfg, seed=seed))
            aucs.append(report.history[report.best_epoch]["val_auc"])
            params = param_count(model)["total"]
        mean_auc = float(np.mean(aucs))
        if name == "full_ssr_d":
            base_mean = mean_auc
        rows.append({"variant": name, "params": params,
                     "budget_ratio": params / target,
                     "mean_auc": mean_auc, "seed_aucs": aucs})
    for row in rows:
        row["delta_auc"] = row["mean_auc"] - base_mean
    return AblationResult(rows=rows)
