"""Exact parameter and FLOP accounting for assembled models.

Conventions (inference, batch=1): a matmul m x k x n costs 2mkn; the static
index gather costs 0; elementwise ops cost one per element; a mean costs one
per input element; layer norm costs 6 per element as one fused op; the ICS
iterative phase costs 3 per element per iteration plus the init rectify and
the gamma rescale. Parameter counts cover the backbone and heads only,
embedding tables are excluded.

These analytic counts are cross-checked in the tests against the engine's
traced FLOP counter and against enumeration of the parameter registry.
"""

from __future__ import annotations

from .layers import DenseLayer, PredictionHead, SSRLayer


def layer_param_count(layer) -> dict[str, int]:
    if isinstance(layer, DenseLayer):
        return {
            "fusion_weights": layer.d_in * layer.d_out,
            "fusion_biases": layer.d_out,
            "projection": 0,
            "ics": 0,
            "layer_norm": 0,
        }
    cfg = layer.config
    fuse_in = layer._fusion_input_width()
    counts = {
        "fusion_weights": cfg.b * fuse_in * cfg.d_v,
        "fusion_biases": cfg.b * cfg.d_v,
        "projection": 0,
        "ics": 0,
        "layer_norm": 2 * cfg.b * cfg.d_v if cfg.ln_affine else 0,
    }
    if cfg.variant in ("dynamic", "topk_ste"):
        counts["projection"] = cfg.b * layer.d_in * cfg.d_v_star
    elif cfg.variant == "unfiltered":
        counts["projection"] = cfg.b * layer.d_in * cfg.d_v
    if cfg.variant == "dynamic":
        counts["ics"] = cfg.b * (cfg.iterations
                                 + (cfg.d_v_star if cfg.learn_gamma else 0))
    return counts


def dense_equivalent_weight_count(cfg) -> int:
    """Weight count of a dense layer of equal width b*d_v -> b*d_v."""
    width = cfg.b * cfg.d_v
    return width * width


def param_count(model) -> dict:
    """Per-component and total backbone parameter counts (no embeddings)."""
    per_layer = []
    total = 0
    for layer in model.layers:
        counts = layer_param_count(layer)
        counts["total"] = sum(counts.values())
        per_layer.append(counts)
        total += counts["total"]
    head_total = sum(h.d_v + 1 for h in model.heads)
    return {"layers": per_layer, "heads": head_total,
            "total": total + head_total}


def config_param_count(config, n_fields: int) -> int:
    """Backbone + head parameter total for a ModelConfig without building
    the model; mirrors param_count(build_model(config, ...)) exactly."""
    from .layers import SSRLayerConfig
    from .model import _KIND_TO_VARIANT

    d_in = n_fields * config.embed_dim
    total = 0
    for li in range(config.depth):
        is_final = li == config.depth - 1
        if config.backbone == "dense_mlp":
            d_out = config.d_v if is_final else config.dense_hidden
            total += d_in * d_out + d_out
            d_in = d_out
            continue
        lcfg = SSRLayerConfig(
            variant=_KIND_TO_VARIANT[config.backbone], b=config.b,
            d_v=config.d_v, d_v_star=config.d_v_star,
            iterations=config.iterations, alpha_init=config.alpha_init,
            activation=config.activation, is_final=is_final,
            ln_affine=config.ln_affine, learn_gamma=config.learn_gamma)

        class _Stub:
            pass

        stub = _Stub()
        stub.config = lcfg
        stub.d_in = d_in
        if lcfg.variant in ("dynamic", "topk_ste"):
            fuse_in = lcfg.d_v_star
        elif lcfg.variant == "dropout":
            fuse_in = d_in
        else:
            fuse_in = lcfg.d_v
        stub._fusion_input_width = lambda f=fuse_in: f
        total += sum(layer_param_count(stub).values())
        d_in = lcfg.d_v if is_final else lcfg.b * lcfg.d_v
    total += len(config.heads) * (config.d_v + 1)
    return total


def layer_flop_count(layer, batch: int = 1) -> int:
    n = batch
    if isinstance(layer, DenseLayer):
        # matmul + bias + activation
        return 2 * n * layer.d_in * layer.d_out + 2 * n * layer.d_out
    cfg = layer.config
    d_in = layer.d_in
    flops = 0
    for _ in range(cfg.b):
        if cfg.variant == "static":
            pass  # zero-FLOP gather
        elif cfg.variant == "dynamic":
            flops += 2 * n * d_in * cfg.d_v_star  # projection
            flops += n * cfg.d_v_star * (2 + 3 * cfg.iterations)  # ICS
        elif cfg.variant == "topk_ste":
            flops += 2 * n * d_in * cfg.d_v_star
        elif cfg.variant == "unfiltered":
            flops += 2 * n * d_in * cfg.d_v
        elif cfg.variant == "dropout":
            pass  # identity at inference
        fuse_in = layer._fusion_input_width()
        flops += 2 * n * fuse_in * cfg.d_v  # fusion matmul
        flops += n * cfg.d_v               # bias add
        flops += n * cfg.d_v               # activation
        flops += 6 * n * cfg.d_v           # layer norm (fused)
    if cfg.is_final:
        flops += n * cfg.b * cfg.d_v       # (b-1) adds + 1/b scale
    return flops


def head_flop_count(head: PredictionHead, batch: int = 1) -> int:
    return batch * (2 * head.d_v + 2)  # matmul + bias + sigmoid


def flop_count(model, batch: int = 1) -> int:
    total = sum(layer_flop_count(layer, batch) for layer in model.layers)
    total += sum(head_flop_count(h, batch) for h in model.heads)
    return total
