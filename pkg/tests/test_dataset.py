import numpy as np
import pytest

from mmvae import arm
from mmvae.dataset import (
    MASK_VALUE, PREV_BLOCK, SAMPLE_DIM, SLOTS, T_BLOCK, AugmentedDataset, BatchStream, MaskPattern,
    apply_mask, assign_split, augment, build_dataset, make_samples, split_and_batch, unmask,
)
from mmvae.errors import InputError

CFG = arm.ArmConfig()


@pytest.fixture(scope="module")
def trace():
    return arm.babble(CFG, 6, seed=3)


def test_two_row_trace_gives_one_sample(trace):
    assert make_samples(trace.head(2)).shape == (1, SAMPLE_DIM)


def test_one_row_trace_rejected(trace):
    with pytest.raises(InputError):
        make_samples(trace.head(1))


def test_full_trace_sample_count():
    assert len(make_samples(arm.babble_rows(CFG, 7380, 7))) == 7379


def test_sample_layout(trace):
    samples = make_samples(trace)
    z = trace.normalized
    k = 10
    np.testing.assert_array_equal(samples[k, SLOTS["q_t"]], z[k + 1, arm.Q_COLS])
    np.testing.assert_array_equal(samples[k, SLOTS["q_prev"]], z[k, arm.Q_COLS])
    np.testing.assert_array_equal(samples[k, SLOTS["v_t"]], z[k + 1, arm.V_COLS])
    np.testing.assert_array_equal(samples[k, SLOTS["u_prev"]], z[k, arm.U_COLS])
    assert samples[k, SLOTS["s_t"]] == z[k + 1, arm.S_COL]


def test_consecutive_samples_overlap(trace):
    samples = make_samples(trace)
    np.testing.assert_array_equal(samples[1:, PREV_BLOCK], samples[:-1, T_BLOCK])


def test_mask_footprints(trace):
    x = make_samples(trace)[:5]
    np.testing.assert_array_equal(apply_mask(x, MaskPattern.COMPLETE), x)
    assert np.all((apply_mask(x, MaskPattern.VISION_ONLY) != MASK_VALUE).sum(axis=1) == 8)
    assert np.all((apply_mask(x, MaskPattern.PREV_ONLY) != MASK_VALUE).sum(axis=1) == 14)
    assert np.all((apply_mask(x, MaskPattern.VISION_PLUS_PREV_Q) != MASK_VALUE).sum(axis=1) == 12)


# explicit footprints, written out column by column
EXPECTED_PRESENT = {
    MaskPattern.COMPLETE: list(range(28)),
    MaskPattern.PREV_ONLY: [4, 5, 6, 7, 12, 13, 14, 15, 17, 19, 24, 25, 26, 27],
    MaskPattern.VISION_PLUS_PREV_Q: [4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15],
    MaskPattern.VISION_ONLY: [8, 9, 10, 11, 12, 13, 14, 15],
}


@pytest.mark.parametrize("pattern", list(MaskPattern))
def test_footprints_bit_exact(pattern, trace):
    x = make_samples(trace)
    masked = apply_mask(x, pattern)
    present = np.zeros(SAMPLE_DIM, dtype=bool)
    present[EXPECTED_PRESENT[pattern]] = True
    assert np.array_equal(masked[:, present], x[:, present])
    assert np.all(masked[:, ~present] == MASK_VALUE)
    np.testing.assert_array_equal(pattern.present, present)


def test_augment_counts():
    samples = np.random.default_rng(0).uniform(-1, 1, (10, SAMPLE_DIM))
    ds = augment(samples)
    assert ds.inputs.shape == (40, SAMPLE_DIM) and ds.targets.shape == (40, SAMPLE_DIM)
    assert list(np.bincount(ds.pattern)[1:]) == [10, 10, 10, 10]


def test_vision_only_block_masks_everything_else(trace):
    ds = build_dataset(trace)
    block = ds.inputs[ds.pattern == MaskPattern.VISION_ONLY]
    for slot in ("q_t", "q_prev", "p_t", "p_prev", "s_t", "s_prev", "u_t", "u_prev"):
        assert np.all(block[:, SLOTS[slot]] == MASK_VALUE)


def test_unmask_round_trip(trace):
    ds = build_dataset(trace)
    np.testing.assert_array_equal(unmask(ds.inputs, ds.targets), ds.targets)


def test_parse_aliases():
    assert MaskPattern.parse("vision") is MaskPattern.VISION_ONLY
    assert MaskPattern.parse("prev") is MaskPattern.PREV_ONLY
    assert MaskPattern.parse("imitation") is MaskPattern.VISION_PLUS_PREV_Q
    assert MaskPattern.parse("COMPLETE") is MaskPattern.COMPLETE
    with pytest.raises(ValueError):
        MaskPattern.parse("nope")


def test_split_counts_per_sample_groups():
    ds = assign_split(augment(np.zeros((100, SAMPLE_DIM))), 0.8, seed=0)
    assert len(ds.train_rows) == 320 and len(ds.test_rows) == 80


def test_split_keeps_cycles_and_variants_together(trace):
    ds = assign_split(build_dataset(trace), 0.5, seed=1)
    for g in np.unique(ds.group):
        assert len(np.unique(ds.is_test[ds.group == g])) == 1
    for o in np.unique(ds.origin):
        assert len(np.unique(ds.is_test[ds.origin == o])) == 1
    assert ds.is_test.any() and (~ds.is_test).any()


def test_bad_ratio_rejected():
    with pytest.raises(InputError):
        assign_split(augment(np.zeros((4, SAMPLE_DIM))), 1.0, 0)


def test_batch_stream_deterministic(trace):
    ds = assign_split(build_dataset(trace), 0.8, 0)
    a, b = BatchStream(ds, 16, 3), BatchStream(ds, 16, 3)
    for _ in range(5):
        np.testing.assert_array_equal(next(a)[2], next(b)[2])


def test_no_test_leakage_into_batches():
    samples = np.random.default_rng(0).uniform(-1, 1, (100, SAMPLE_DIM))
    ds, stream = split_and_batch(augment(samples), 0.8, 64, seed=2)
    test = set(ds.test_rows.tolist())
    seen = np.concatenate([next(stream)[2] for _ in range(10_000 // 64 + 1)])
    assert not test.intersection(seen.tolist())


def test_batch_larger_than_train_rejected():
    ds = assign_split(augment(np.zeros((10, SAMPLE_DIM))), 0.8, 0)
    with pytest.raises(InputError):
        BatchStream(ds, 100, 0)


def test_dataset_save_load(tmp_path, trace):
    ds = assign_split(build_dataset(trace), 0.8, 0)
    ds.save(tmp_path / "d.bin", {"data_hash": "abc"})
    back = AugmentedDataset.load(tmp_path / "d.bin")
    for name in ("inputs", "targets", "pattern", "origin", "group", "is_test"):
        np.testing.assert_array_equal(getattr(back, name), getattr(ds, name))
    assert back.normalization.digest() == ds.normalization.digest()
    assert back.meta["data_hash"] == "abc"
