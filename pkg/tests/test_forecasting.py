from __future__ import annotations

from datetime import date, timedelta

import numpy as np
import pytest

from finpair.assemble import CategorySummary, PairedDayRecord
from finpair.corpus import TradingCalendar
from finpair.forecasting import (
    ForecastModel,
    LinearBackbone,
    SplitError,
    TrainConfig,
    TrainingError,
    WindowSample,
    encode_text,
    enumerate_grid,
    evaluate_mse,
    forward,
    grad_check,
    load_model,
    make_windows,
    mse_loss_and_grads,
    new_model,
    save_model,
    segment_runs,
    split_by_years,
    train,
    zscore_apply,
    zscore_fit,
    zscore_invert,
)
from finpair.gateway import FILING_KEYS

from conftest import day


def _calendar_for_years(days_per_year: int, years=(2019, 2020, 2021, 2022, 2023)) -> TradingCalendar:
    days = []
    for year in years:
        d = date(year, 1, 2)
        taken = 0
        while taken < days_per_year:
            if d.weekday() < 5:
                days.append(d)
                taken += 1
            d += timedelta(days=1)
    return TradingCalendar(days=tuple(days))


def test_split_by_years_paper_window_boundaries():
    calendar = _calendar_for_years(10)
    train_days, val_days, test_days = split_by_years(calendar)
    assert all(d.year <= 2021 for d in train_days)
    assert all(d.year == 2022 for d in val_days)
    assert all(d.year == 2023 for d in test_days)
    assert max(train_days) < date(2022, 1, 1) <= min(val_days)
    assert max(val_days) < date(2023, 1, 1) <= min(test_days)


def test_split_by_years_proportions():
    calendar = _calendar_for_years(10)
    train_days, val_days, test_days = split_by_years(calendar)
    assert (len(train_days), len(val_days), len(test_days)) == (30, 10, 10)


def test_split_by_years_needs_five_years():
    calendar = _calendar_for_years(10, years=(2019, 2020, 2021, 2022))
    with pytest.raises(SplitError):
        split_by_years(calendar)


def test_zscore_hand_values():
    stats = zscore_fit(np.array([[1.0], [2.0], [3.0]]))
    assert stats.mean[0] == pytest.approx(2.0)
    assert stats.std[0] == pytest.approx(np.sqrt(2.0 / 3.0))
    normalized = zscore_apply(np.array([[1.0], [2.0], [3.0]]), stats)
    assert normalized.ravel() == pytest.approx([-1.2247, 0.0, 1.2247], abs=1e-4)


def test_zscore_constant_channel_is_zero():
    stats = zscore_fit(np.full((4, 2), 7.0))
    normalized = zscore_apply(np.full((4, 2), 7.0), stats)
    assert np.all(normalized == 0.0)


def test_zscore_round_trip():
    rng = np.random.default_rng(3)
    values = rng.uniform(10, 300, size=(50, 4))
    stats = zscore_fit(values)
    assert np.allclose(zscore_invert(zscore_apply(values, stats), stats), values, atol=1e-9)


def _days(n: int, start="2024-01-01"):
    first = day(start)
    return [first + timedelta(days=i) for i in range(n)]


def _zero_text(_d):
    return np.zeros(2)


def test_window_count_length_67():
    values = np.random.default_rng(0).standard_normal((67, 4))
    assert len(make_windows(_days(67), values, _zero_text, lookback=64, horizon=3)) == 1


def test_window_count_length_70():
    values = np.random.default_rng(0).standard_normal((70, 4))
    windows = make_windows(_days(70), values, _zero_text, lookback=64, horizon=3)
    assert len(windows) == 4
    assert windows[0].anchor_day == _days(70)[63]
    assert windows[0].input.shape == (64, 4)
    assert windows[0].target.shape == (3, 4)


def test_window_count_formula_random_lengths():
    rng = np.random.default_rng(4)
    for _ in range(10):
        n = int(rng.integers(5, 40))
        lookback = int(rng.integers(2, 6))
        horizon = int(rng.integers(1, 4))
        windows = make_windows(_days(n), rng.standard_normal((n, 2)), _zero_text, lookback, horizon)
        assert len(windows) == max(0, n - lookback - horizon + 1)


def test_windows_never_straddle_split_boundary():
    # Brute force: enumerate all windows over the full series and keep those
    # entirely inside one split; per-run windowing must agree exactly.
    days = _days(30)
    group_of = {d: ("train" if i < 17 else "val") for i, d in enumerate(days)}
    values = np.arange(60, dtype=float).reshape(30, 2)
    lookback, horizon = 5, 3
    per_run = []
    for group, start, stop in segment_runs(days, group_of):
        for w in make_windows(days[start:stop], values[start:stop], _zero_text, lookback, horizon):
            per_run.append((group, w.anchor_day))
    brute = []
    for start in range(30 - lookback - horizon + 1):
        span = days[start : start + lookback + horizon]
        groups = {group_of[d] for d in span}
        if len(groups) == 1:
            brute.append((groups.pop(), days[start + lookback - 1]))
    assert per_run == brute
    # A window whose target crosses the boundary is excluded.
    assert ("train", days[16]) not in per_run


def _record(macro=(), sector=(), related=(), target=()):
    def mk(items):
        return tuple(CategorySummary(category=f"c{i}", summary=s) for i, s in enumerate(items))

    return PairedDayRecord(
        ticker="AAA",
        trading_day=day("2024-01-02"),
        macro=mk(macro),
        sector=mk(sector),
        related_company=mk(related),
        target_company=mk(target),
        profile={k: "" for k in FILING_KEYS},
    )


def _basis_embedder(mapping):
    def embed_texts(texts):
        return np.stack([mapping[t] for t in texts])

    return embed_texts


def test_encode_text_is_mean_of_slot_embeddings():
    e1 = np.array([1.0, 0.0])
    e2 = np.array([0.0, 1.0])
    record = _record(macro=("m",), target=("t",))
    embedder = _basis_embedder({"m": e1, "t": e2})
    out = encode_text(record, ("macro", "target"), embedder, text_dim=2)
    assert np.allclose(out, (e1 + e2) / 2)


def test_encode_text_empty_mask_slots_zero_vector():
    record = _record()
    out = encode_text(record, ("macro", "sector", "related", "target"), _basis_embedder({}), text_dim=3)
    assert np.array_equal(out, np.zeros(3))


def test_encode_text_mask_semantics_macro_only_record():
    e1 = np.array([0.5, 0.5])
    record = _record(macro=("m",))
    embedder = _basis_embedder({"m": e1})
    full = encode_text(record, ("macro", "sector", "related", "target"), embedder, text_dim=2)
    macro_only = encode_text(record, ("macro",), embedder, text_dim=2)
    assert np.array_equal(full, macro_only)


def test_encode_text_ignores_masked_out_slots():
    e1 = np.array([1.0, 0.0])
    e2 = np.array([0.0, 1.0])
    base = _record(macro=("m",))
    changed = _record(macro=("m",), target=("t",))
    embedder = _basis_embedder({"m": e1, "t": e2})
    assert np.array_equal(
        encode_text(base, ("macro",), embedder, 2), encode_text(changed, ("macro",), embedder, 2)
    )


def _random_model(rng, lookback=6, horizon=2, channels=3, text_dim=4, fusion_ratio=0.3, decompose=True):
    backbone = LinearBackbone(
        lookback=lookback,
        horizon=horizon,
        channels=channels,
        decompose=decompose,
        ma_kernel=5,
        w=rng.standard_normal((channels, horizon, lookback)),
        b=rng.standard_normal((channels, horizon)),
    )
    return ForecastModel(
        backbone=backbone,
        text_dim=text_dim,
        fusion_ratio=fusion_ratio,
        w_text=rng.standard_normal((horizon * channels, text_dim)),
        b_text=rng.standard_normal(horizon * channels),
    )


def _random_sample(rng, model):
    return WindowSample(
        input=rng.standard_normal((model.backbone.lookback, model.backbone.channels)),
        target=rng.standard_normal((model.horizon, model.channels)),
        text_vector=rng.standard_normal(model.text_dim),
        anchor_day=day("2024-01-02"),
    )


def test_forward_r_zero_equals_backbone_exactly():
    rng = np.random.default_rng(7)
    model = _random_model(rng, fusion_ratio=0.0)
    sample = _random_sample(rng, model)
    assert np.array_equal(forward(sample, model), model.backbone.forward(sample.input[None])[0])


def test_forward_zero_text_vector_scales_backbone():
    rng = np.random.default_rng(8)
    model = _random_model(rng, fusion_ratio=0.4)
    model.b_text[...] = 0.0
    sample = _random_sample(rng, model)
    zero_text = WindowSample(sample.input, sample.target, np.zeros(model.text_dim), sample.anchor_day)
    expected = (1 - 0.4) * model.backbone.forward(sample.input[None])[0]
    assert np.allclose(forward(zero_text, model), expected, atol=1e-12)


def test_forward_hand_arithmetic_tiny_instance():
    # L=2, H=1, C=1, d_text=1, all weights one, no decomposition:
    # y = (1 - r) * (x1 + x2 + 1) + r * (t + 1)
    backbone = LinearBackbone(lookback=2, horizon=1, channels=1, decompose=False,
                              w=np.ones((1, 1, 2)), b=np.ones((1, 1)))
    model = ForecastModel(backbone=backbone, text_dim=1, fusion_ratio=0.5,
                          w_text=np.ones((1, 1)), b_text=np.ones(1))
    sample = WindowSample(
        input=np.array([[1.0], [2.0]]),
        target=np.zeros((1, 1)),
        text_vector=np.array([3.0]),
        anchor_day=day("2024-01-02"),
    )
    expected = 0.5 * (1.0 + 2.0 + 1.0) + 0.5 * (3.0 + 1.0)
    assert forward(sample, model)[0, 0] == pytest.approx(expected, abs=1e-12)


def test_forward_shape_mismatch_raises():
    rng = np.random.default_rng(9)
    model = _random_model(rng)
    with pytest.raises(ValueError):
        model.forward(np.zeros((3, model.backbone.lookback + 1, model.channels)), np.zeros((3, model.text_dim)))


def test_grad_check_random_instances():
    rng = np.random.default_rng(10)
    for _ in range(3):
        model = _random_model(rng)
        sample = _random_sample(rng, model)
        assert grad_check(model, sample) < 1e-4


def test_grad_check_zero_model_zero_sample():
    model = new_model(TrainConfig(lookback=4, horizon=2, decompose=False), channels=2, text_dim=3)
    sample = WindowSample(np.zeros((4, 2)), np.zeros((2, 2)), np.zeros(3), day("2024-01-02"))
    _, grads = mse_loss_and_grads(model, sample.input, sample.text_vector, sample.target)
    assert all(np.all(g == 0.0) for g in grads.values())
    assert grad_check(model, sample) == 0.0


def test_backbone_gradient_exactly_zero_at_r_one():
    rng = np.random.default_rng(11)
    model = _random_model(rng, fusion_ratio=1.0)
    sample = _random_sample(rng, model)
    _, grads = mse_loss_and_grads(model, sample.input, sample.text_vector, sample.target)
    assert np.all(grads["backbone.w"] == 0.0)
    assert np.all(grads["backbone.b"] == 0.0)
    assert np.any(grads["text.w"] != 0.0)


def _samples_from_series(rng, n_days, lookback, horizon, text_dim, text_fn):
    values = np.cumsum(rng.standard_normal((n_days, 2)), axis=0) * 0.1
    days = _days(n_days)
    return make_windows(days, values, text_fn, lookback, horizon)


def test_train_same_seed_identical_logs():
    rng = np.random.default_rng(12)
    samples = _samples_from_series(rng, 40, 8, 2, 3, lambda d: np.zeros(3))
    config = TrainConfig(lookback=8, horizon=2, max_epochs=5, batch_size=8)
    _, log1 = train(samples[:20], samples[20:], config, seed=5)
    _, log2 = train(samples[:20], samples[20:], config, seed=5)
    assert log1 == log2


def test_train_single_sample_descends():
    rng = np.random.default_rng(13)
    samples = _samples_from_series(rng, 12, 8, 2, 3, lambda d: np.zeros(3))
    config = TrainConfig(lookback=8, horizon=2, max_epochs=2, batch_size=1)
    model, log = train(samples[:1], samples[:1], config, seed=0)
    assert log[-1][1] <= log[0][1] + 1e-12


def test_train_noise_text_matches_text_free_within_tolerance():
    # Paired runs: pure-noise text must not change validation MSE by > 5%.
    rng = np.random.default_rng(14)
    noise = {i: rng.standard_normal(4) for i in range(80)}
    counter = {"i": 0}

    def noise_text(_d):
        counter["i"] += 1
        return noise[counter["i"] % 80]

    config = TrainConfig(lookback=8, horizon=2, max_epochs=15, batch_size=8, fusion_ratio=0.3)
    series_rng = np.random.default_rng(15)
    values = np.cumsum(series_rng.standard_normal((60, 2)), axis=0) * 0.1
    days = _days(60)
    with_noise = make_windows(days, values, noise_text, 8, 2)
    without = make_windows(days, values, lambda d: np.zeros(4), 8, 2)
    _, log_noise = train(with_noise[:35], with_noise[35:], config, seed=1)
    _, log_plain = train(without[:35], without[35:], config, seed=1)
    best_noise = min(v for _, _, v in log_noise)
    best_plain = min(v for _, _, v in log_plain)
    assert best_noise == pytest.approx(best_plain, rel=0.05)


def test_train_divergence_raises_with_epoch():
    rng = np.random.default_rng(16)
    values = np.cumsum(rng.standard_normal((20, 2)), axis=0)
    values[10, 1] = np.inf  # corrupted bar: loss goes non-finite at epoch 1
    samples = make_windows(_days(20), values, lambda d: np.zeros(3), 8, 2)
    config = TrainConfig(lookback=8, horizon=2, max_epochs=3, batch_size=4)
    with pytest.raises(TrainingError, match="epoch 1"):
        train(samples[:5], samples[5:], config, seed=0)


def test_no_leakage_between_split_windows():
    days = _days(40)
    group_of = {d: ("train" if i < 25 else "val") for i, d in enumerate(days)}
    values = np.random.default_rng(17).standard_normal((40, 2))
    lookback, horizon = 6, 2
    for group, start, stop in segment_runs(days, group_of):
        for w in make_windows(days[start:stop], values[start:stop], _zero_text, lookback, horizon):
            anchor_index = days.index(w.anchor_day)
            span = days[anchor_index - lookback + 1 : anchor_index + horizon + 1]
            assert {group_of[d] for d in span} == {group}


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(18)
    model = _random_model(rng)
    sample = _random_sample(rng, model)
    path = tmp_path / "model.bin"
    save_model(path, model)
    loaded = load_model(path)
    assert np.array_equal(forward(sample, model), forward(sample, loaded))
    assert loaded.fusion_ratio == model.fusion_ratio
    assert loaded.backbone.decompose == model.backbone.decompose


def test_enumerate_grid_sizes():
    grid = enumerate_grid(TrainConfig())
    assert len(grid) == 3 * 3 * 3
    assert {g["fusion_ratio"] for g in grid} == {0.2, 0.3, 0.4}
    assert {g["hidden_size"] for g in grid} == {32, 64, 128}


def test_evaluate_mse_matches_loss():
    rng = np.random.default_rng(19)
    model = _random_model(rng)
    samples = [_random_sample(rng, model) for _ in range(4)]
    X = np.stack([s.input for s in samples])
    T = np.stack([s.text_vector for s in samples])
    Y = np.stack([s.target for s in samples])
    loss, _ = mse_loss_and_grads(model, X, T, Y)
    assert evaluate_mse(model, samples) == pytest.approx(loss, abs=1e-12)
