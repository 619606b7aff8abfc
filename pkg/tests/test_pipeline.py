import io

import numpy as np
import pytest

from dsc_codec import (
    ConfigError,
    FeatureMap,
    elementwise_max,
    evaluate_point,
    fuse_all,
    mse,
    run_link,
    rd_sweep,
    robustness_sweep,
    write_csv,
)
from dsc_codec.pipeline import (
    CSV_HEADER,
    DEFAULT_EVAL_T,
    SweepRow,
    rd_points_to_rows,
    read_csv,
    summarize_rows,
)
from dsc_codec.pruning import mask_from_scores, score_map
from dsc_codec.simulate import generate_scene, observe, scene_config
from tests.test_wire import independent_parse


def test_fuse_all_identity_and_idempotence(rng):
    f = FeatureMap(rng.normal(size=(3, 6, 6)))
    assert np.array_equal(fuse_all(f, []).values, f.values)
    assert np.array_equal(fuse_all(f, [f, f]).values, f.values)


def test_fuse_all_order_invariance(rng):
    f = FeatureMap(rng.normal(size=(2, 5, 5)))
    rs = [FeatureMap(rng.normal(size=(2, 5, 5))) for _ in range(3)]
    a = fuse_all(f, rs)
    b = fuse_all(f, rs[::-1])
    assert np.array_equal(a.values, b.values)


def test_run_link_zero_tau_matches_manual_recomputation(small_cfg, small_fitted):
    params, cb = small_fitted.params, small_fitted.codebook
    cfg_s = scene_config(small_cfg, 0, stream="eval")
    res = run_link(cfg_s, DEFAULT_EVAL_T, 1, 0, params, cb, tau=0.0)

    # Reproduce the link deterministically and check each reported metric.
    f_local = observe(generate_scene(cfg_s, DEFAULT_EVAL_T), 0, cfg_s)
    f_sender = observe(generate_scene(cfg_s, DEFAULT_EVAL_T), 1, cfg_s)
    mask = mask_from_scores(score_map(f_sender), 0.0)
    pruned = FeatureMap(f_sender.values * mask.bits[np.newaxis])
    from dsc_codec import decode_message, encode_message

    msg = encode_message(pruned, mask, params, cb)
    recon = decode_message(msg, f_local, params, cb)
    assert res.payload_bytes == len(msg.to_bytes())
    assert res.recon_mse == pytest.approx(mse(recon, pruned), abs=0.0)
    oracle = elementwise_max(f_local, f_sender)
    fused = elementwise_max(f_local, recon)
    assert res.fusion_mse == pytest.approx(mse(fused, oracle), abs=0.0)
    assert res.within_budget and not res.failed


def test_run_link_payload_matches_independent_parser(small_cfg, small_fitted):
    params, cb = small_fitted.params, small_fitted.codebook
    cfg_s = scene_config(small_cfg, 1, stream="eval")
    f_sender = observe(generate_scene(cfg_s, DEFAULT_EVAL_T), 1, cfg_s)
    mask = mask_from_scores(score_map(f_sender), 0.2)
    pruned = FeatureMap(f_sender.values * mask.bits[np.newaxis])
    from dsc_codec import encode_message

    msg = encode_message(pruned, mask, params, cb)
    res = run_link(cfg_s, DEFAULT_EVAL_T, 1, 0, params, cb, tau=0.2)
    assert res.payload_bytes == independent_parse(msg.to_bytes())["total"]


def test_run_link_saturated_tau_sends_header_mask_table_only(small_cfg, small_fitted):
    params, cb = small_fitted.params, small_fitted.codebook
    res = run_link(small_cfg, 0, 1, 0, params, cb, tau=1.0)
    mask_bytes = (small_cfg.height * small_cfg.width + 7) // 8
    expected = 25 + 4 + mask_bytes + 4 + 2 * cb.size + 4 + 0 + 4
    assert res.payload_bytes == expected


def test_run_link_budget_drop_falls_back_to_local(small_cfg, small_fitted):
    params, cb = small_fitted.params, small_fitted.codebook
    cfg_s = scene_config(small_cfg, 2, stream="eval")
    res = run_link(cfg_s, DEFAULT_EVAL_T, 1, 0, params, cb, tau=0.0, budget=10)
    assert not res.within_budget
    # The receiver keeps only its local feature: fused == local, so the
    # fusion gap equals the gap between local-only fusion and the oracle.
    f_local = observe(generate_scene(cfg_s, DEFAULT_EVAL_T), 0, cfg_s)
    f_sender = observe(generate_scene(cfg_s, DEFAULT_EVAL_T), 1, cfg_s)
    assert res.fusion_mse == pytest.approx(
        mse(f_local, elementwise_max(f_local, f_sender)), abs=0.0
    )


def test_identity_channel_has_zero_fusion_fidelity_gap(small_cfg):
    # Replace the whole communication path with an identity channel: the
    # receiver gets the sender feature verbatim, so fusing it reproduces the
    # uncompressed-fusion oracle exactly.
    cfg_s = scene_config(small_cfg, 4, stream="eval")
    f_local = observe(generate_scene(cfg_s, DEFAULT_EVAL_T), 0, cfg_s)
    f_sender = observe(generate_scene(cfg_s, DEFAULT_EVAL_T), 1, cfg_s)
    fused = fuse_all(f_local, [f_sender])
    oracle = elementwise_max(f_local, f_sender)
    assert mse(fused, oracle) == 0.0


def test_run_link_validation(small_cfg, small_fitted):
    params, cb = small_fitted.params, small_fitted.codebook
    with pytest.raises(ConfigError):
        run_link(small_cfg, 0, 1, 1, params, cb)
    with pytest.raises(ConfigError):
        run_link(small_cfg, 0, 1, 0, params, cb, delay=-1)


def test_run_link_delay_uses_stale_sender_frame(small_cfg, small_fitted):
    params, cb = small_fitted.params, small_fitted.codebook
    cfg_s = scene_config(small_cfg, 3, stream="eval")
    fresh = run_link(cfg_s, 4, 1, 0, params, cb, tau=0.0, delay=0)
    stale = run_link(cfg_s, 4, 1, 0, params, cb, tau=0.0, delay=4)
    assert stale.fusion_mse != fresh.fusion_mse


def test_evaluate_point_deterministic(small_cfg, small_fitted):
    params, cb = small_fitted.params, small_fitted.codebook
    a = evaluate_point(small_cfg, params, cb, tau=0.1, scenes=2)
    b = evaluate_point(small_cfg, params, cb, tau=0.1, scenes=2)
    assert a == b


def test_rd_sweep_single_point(small_cfg):
    points = rd_sweep(
        small_cfg, taus=[0.5], codebook_sizes=[8], embed_dim=8, scenes_per_point=1, train_scenes=2
    )
    assert len(points) == 1
    assert points[0].tau == 0.5 and points[0].codebook_size == 8
    assert points[0].scenes == 1


def test_rd_sweep_payload_monotone_in_tau(small_cfg):
    points = rd_sweep(
        small_cfg,
        taus=[0.0, 0.5, 0.7, 0.9],
        codebook_sizes=[16],
        embed_dim=8,
        scenes_per_point=2,
        train_scenes=2,
    )
    payloads = [p.payload_bytes for p in points]
    assert all(a >= b for a, b in zip(payloads, payloads[1:]))
    assert payloads[0] > payloads[-1]


def test_rd_sweep_recon_mse_non_increasing_in_codebook_size(small_cfg):
    points = rd_sweep(
        small_cfg,
        taus=[0.0],
        codebook_sizes=[4, 16, 64],
        embed_dim=8,
        scenes_per_point=2,
        train_scenes=2,
    )
    recons = [p.recon_mse for p in points]
    assert all(a >= b - 1e-12 for a, b in zip(recons, recons[1:]))


def test_robustness_sweep_grid_and_unperturbed_row(small_cfg, small_fitted):
    params, cb = small_fitted.params, small_fitted.codebook
    sigmas, delays = [0.0, 2.0], [0, 2]
    rows = robustness_sweep(
        small_cfg, sigmas, delays, params, cb, tau=0.0, scenes=2
    )
    assert len(rows) == 2 * len(sigmas) * len(delays)
    combos = {(r.sigma_pose, r.delay, r.conditional) for r in rows}
    assert len(combos) == len(rows)

    base = next(r for r in rows if r.sigma_pose == 0 and r.delay == 0 and r.conditional == 1)
    stats = evaluate_point(small_cfg, params, cb, tau=0.0, scenes=2)
    assert (base.payload_bytes, base.recon_mse, base.fusion_mse) == (
        stats.payload_bytes,
        stats.recon_mse,
        stats.fusion_mse,
    )


def test_csv_roundtrip_and_sorted_emission(tmp_path, small_cfg):
    rows = [
        SweepRow(0.5, 16, 8, 0.9, 0.0, 0, 100.0, 0.5, 0.25, 1, 7, 2),
        SweepRow(0.0, 16, 8, 0.9, 0.0, 0, 300.0, 0.4, 0.20, 1, 7, 2),
        SweepRow(0.0, 16, 8, 0.9, 0.0, 0, 310.0, 0.45, 0.22, 0, 7, 2),
    ]
    path = tmp_path / "sweep.csv"
    write_csv(rows, path)
    text = path.read_text()
    assert text.splitlines()[0] == CSV_HEADER
    loaded = read_csv(path)
    assert len(loaded) == 3
    # Sorted: tau ascending, conditional=1 before 0 at equal knobs.
    assert [r.tau for r in loaded] == [0.0, 0.0, 0.5]
    assert [r.conditional for r in loaded][:2] == [1, 0]
    buf = io.StringIO()
    write_csv(rows, buf)
    assert buf.getvalue() == text


def test_write_csv_is_byte_deterministic(tmp_path, small_cfg):
    points = rd_sweep(
        small_cfg, taus=[0.0, 0.5], codebook_sizes=[8], embed_dim=8,
        scenes_per_point=1, train_scenes=2,
    )
    rows = rd_points_to_rows(points, small_cfg)
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_csv(rows, p1)
    write_csv(rows, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_summarize_rows():
    rows = [
        SweepRow(0.0, 16, 8, 0.9, 0.0, 0, 300.0, 0.4, 0.2, 1, 7, 2),
        SweepRow(0.5, 16, 8, 0.9, 0.0, 0, 100.0, 0.5, 0.3, 1, 7, 2),
    ]
    summary = summarize_rows(rows)
    lines = summary.strip().splitlines()
    assert lines[0].startswith("K,D,conditional")
    assert lines[1].split(",")[:4] == ["16", "8", "1", "2"]
