import numpy as np
import pytest

from ssrkit.analysis import (
    ReportError,
    match_budget,
    model_sparsity,
    report_view_similarity,
    report_weight_sparsity,
    run_ablation_suite,
    run_sweep,
    trace_ics_dynamics,
)
from ssrkit.flops import config_param_count
from ssrkit.model import ModelConfig, TrainConfig, build_model


def tiny_config(**kw):
    base = dict(backbone="ssr_static", depth=2, b=2, d_v=8, embed_dim=4,
                seed=7)
    base.update(kw)
    return ModelConfig(**base)


def fast_train_cfg(**kw):
    base = dict(batch_size=512, max_epochs=2, patience=1)
    base.update(kw)
    return TrainConfig(**base)


def test_sparsity_report_fractions():
    model = build_model(tiny_config(), [10] * 5)
    w = np.zeros((8, 16))
    w[:, 0] = 10.0  # all mass in one dominant column
    for i, v in enumerate(np.split(w, 2, axis=1)):
        model.layers[0].fusion[i].data = v.copy()
    rep = report_weight_sparsity(model, threshold=1e-3, quantile=0.8)
    assert rep.matrix == "layer0.fusion"
    assert rep.near_zero_fraction == pytest.approx(1.0 - 8 / 128)
    assert rep.mass_concentration == pytest.approx(1 / 16)


def test_sparsity_report_matches_sort_accumulate_oracle(rng):
    model = build_model(tiny_config(), [10] * 5)
    for v in model.layers[0].fusion:
        v.data = rng.standard_normal(v.data.shape)
    rep = report_weight_sparsity(model, quantile=0.8)
    w = np.hstack([v.data for v in model.layers[0].fusion])
    power = np.sqrt((w ** 2).sum(axis=0))
    order = np.sort(power)[::-1]
    cum = np.cumsum(order)
    k = int(np.argmax(cum >= 0.8 * cum[-1])) + 1
    assert rep.mass_concentration == pytest.approx(k / order.size)
    assert rep.near_zero_fraction == np.mean(np.abs(w) < 1e-3)


def test_sparsity_near_zero_monotone_in_threshold(rng):
    model = build_model(tiny_config(), [10] * 5)
    fracs = [report_weight_sparsity(model, threshold=t).near_zero_fraction
             for t in (1e-4, 1e-3, 1e-2, 1e-1)]
    assert all(a <= b for a, b in zip(fracs, fracs[1:]))


def test_sparsity_unknown_matrix_names_available():
    model = build_model(tiny_config(), [10] * 5)
    with pytest.raises(ReportError, match="layer0.fusion"):
        report_weight_sparsity(model, matrix="nope")


def test_view_similarity_properties():
    model = build_model(tiny_config(backbone="ssr_dynamic", b=3), [10] * 5)
    sim = report_view_similarity(model)
    assert sim.shape == (3, 3)
    assert np.array_equal(np.diag(sim), np.ones(3))
    assert np.array_equal(sim, sim.T)
    assert np.all(np.abs(sim) <= 1.0 + 1e-12)
    # identical projections must read as similarity 1
    model.layers[0].proj[1].data = model.layers[0].proj[0].data.copy()
    assert report_view_similarity(model)[0, 1] == pytest.approx(1.0)


def test_view_similarity_requires_projections():
    model = build_model(tiny_config(backbone="ssr_static"), [10] * 5)
    with pytest.raises(ReportError):
        report_view_similarity(model)


def test_trace_ics_dynamics_row_arithmetic(small_encoded):
    cfg = tiny_config(backbone="ssr_dynamic", embed_dim=4, d_v=6,
                      iterations=3)
    model = build_model(cfg, small_encoded.vocab_sizes)
    rows = trace_ics_dynamics(model, small_encoded,
                              fast_train_cfg(batch_size=1024),
                              total_steps=4, sample_every=2, probe_size=128)
    steps = sorted({r[0] for r in rows})
    assert steps == [0, 2, 4]
    # depth x views entries per sampled step
    per_step = len(rows) // len(steps)
    assert per_step == cfg.depth * cfg.b
    for _, layer, view, sparsity, mean_abs in rows:
        assert 0.0 <= sparsity <= 1.0
        assert mean_abs >= 0.0


def test_trace_requires_dynamic_layers(small_encoded):
    model = build_model(tiny_config(), small_encoded.vocab_sizes)
    with pytest.raises(ReportError):
        trace_ics_dynamics(model, small_encoded, fast_train_cfg(),
                           total_steps=2)


def test_run_sweep_covers_grid_and_records_errors(small_encoded):
    result = run_sweep("views", [1, 2], tiny_config(), small_encoded,
                       fast_train_cfg())
    assert [r["value"] for r in result.rows] == [1, 2]
    assert result.errors == []
    for row in result.rows:
        assert row["params"] > 0 and row["flops"] > 0
        assert 0.0 < row["val_auc"] < 1.0
    # an infeasible point is recorded, not fatal
    bad = run_sweep("width", [8, 10 ** 6], tiny_config(), small_encoded,
                    fast_train_cfg())
    assert [r["value"] for r in bad.rows] == [8]
    assert len(bad.errors) == 1 and bad.errors[0]["value"] == 10 ** 6


def test_run_sweep_rejects_unknown_axis(small_encoded):
    with pytest.raises(ReportError):
        run_sweep("bogus", [1], tiny_config(), small_encoded,
                  fast_train_cfg())
    with pytest.raises(ReportError):
        run_sweep("views", [], tiny_config(), small_encoded,
                  fast_train_cfg())


def test_model_sparsity_by_backbone(small_encoded):
    static = build_model(tiny_config(d_v=6), small_encoded.vocab_sizes)
    expected = 1.0 - 6 / (6 * 4)
    assert model_sparsity(static, small_encoded) == pytest.approx(expected)
    dense = build_model(tiny_config(backbone="dense_mlp", depth=1),
                        small_encoded.vocab_sizes)
    assert model_sparsity(dense, small_encoded) == 0.0
    dyn = build_model(tiny_config(backbone="ssr_dynamic"),
                      small_encoded.vocab_sizes)
    s = model_sparsity(dyn, small_encoded)
    assert 0.0 < s < 1.0


def test_match_budget_within_tolerance():
    base = tiny_config(backbone="ssr_dynamic", d_v=16)
    target = config_param_count(base, n_fields=6)
    for backbone in ("ssr_static", "ssr_unfiltered", "ssr_topk_ste",
                     "ssr_dropout", "dense_mlp"):
        cfg = tiny_config(backbone=backbone)
        matched = match_budget(cfg, n_fields=6, target_params=target)
        got = config_param_count(matched, n_fields=6)
        assert abs(got - target) <= 0.10 * target, backbone


def test_match_budget_infeasible():
    with pytest.raises(ReportError):
        match_budget(tiny_config(), n_fields=6, target_params=10 ** 12)


def test_ablation_suite_structure(small_encoded):
    result = run_ablation_suite(
        tiny_config(backbone="ssr_dynamic", d_v=6, depth=1, b=2),
        small_encoded, fast_train_cfg(max_epochs=1), seeds=(0,),
        variants=("full_ssr_d", "ssr_static"))
    assert [r["variant"] for r in result.rows] == ["full_ssr_d", "ssr_static"]
    full = result.rows[0]
    assert full["delta_auc"] == 0.0
    for row in result.rows:
        assert abs(row["budget_ratio"] - 1.0) <= 0.10
        assert len(row["seed_aucs"]) == 1


def test_report_determinism(small_encoded):
    def run():
        model = build_model(tiny_config(backbone="ssr_dynamic"),
                            small_encoded.vocab_sizes)
        rows = trace_ics_dynamics(model, small_encoded, fast_train_cfg(),
                                  total_steps=3, sample_every=1,
                                  probe_size=64)
        return rows

    assert run() == run()
