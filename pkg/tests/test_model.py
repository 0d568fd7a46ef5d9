import math
from dataclasses import replace

import numpy as np
import pytest

from mmvae import arm
from mmvae import autodiff as ad
from mmvae.checkpoint import SCHEMA_VERSION, load_checkpoint, save_checkpoint
from mmvae.dataset import MASK_VALUE, SAMPLE_DIM, SLOTS, MaskPattern, apply_mask, assign_split, build_dataset
from mmvae.errors import ContractError, FormatError, ShapeError, TrainingError
from mmvae.model import MMVAE, MODALITIES, TrainConfig, column_weights, kl_to_standard_normal, loss, train

from gradcheck import probe


@pytest.fixture(scope="module")
def small_ds():
    return assign_split(build_dataset(arm.babble(arm.ArmConfig(), 4, seed=1)), 0.75, 0)


def random_x(n, seed=0):
    return np.random.default_rng(seed).uniform(-1, 1, (n, SAMPLE_DIM))


def test_architecture_sizes():
    m = MMVAE(seed=0)
    widths = [[l.n_out for l in enc.layers] for enc in m.encoders]
    assert widths == [[40, 20], [40, 20], [10, 5], [10, 5], [40, 20]]
    assert m.shared_enc.n_out == 100 and m.z_mean.n_out == 28
    assert [l.n_out for l in m.shared_dec.layers] == [100, 70]
    assert [m2.weight for m2 in MODALITIES] == [1 / 8, 1 / 8, 1 / 2, 1 / 2, 1 / 8]


def test_encode_shapes():
    mu, logvar = MMVAE(seed=0).encode(random_x(7))
    assert mu.shape == (7, 28) and logvar.shape == (7, 28)


def test_encode_rejects_wrong_width():
    with pytest.raises(ShapeError):
        MMVAE(seed=0).encode(np.zeros((2, 27)))


def test_mask_value_is_a_real_input():
    m = MMVAE(seed=0)
    a = random_x(1, 1)
    b = a.copy()
    b[0, SLOTS["q_t"]] += 0.3
    # same pattern hides the difference: identical inputs, identical codes
    ma, mb = apply_mask(a, MaskPattern.VISION_ONLY), apply_mask(b, MaskPattern.VISION_ONLY)
    np.testing.assert_array_equal(m.encode(ma)[0], m.encode(mb)[0])
    # -2 is fed through, not skipped
    assert not np.array_equal(m.encode(a)[0], m.encode(ma)[0])


@pytest.mark.parametrize("pattern", list(MaskPattern))
def test_masked_inputs_encode_finite(pattern):
    m = MMVAE(seed=0)
    mu, logvar = m.encode(apply_mask(random_x(4), pattern))
    assert np.all(np.isfinite(mu)) and np.all(np.isfinite(logvar))
    mu, logvar = m.encode(np.full((1, SAMPLE_DIM), MASK_VALUE))
    assert np.all(np.isfinite(mu))


def test_decode_zero_latent_snapshot():
    out = MMVAE(seed=0).decode(np.zeros((1, 28)))
    # zero biases: every pre-activation is 0, so mean 0 and variance softplus(0) + 1e-6
    np.testing.assert_array_equal(out.mean, np.zeros((1, 28)))
    np.testing.assert_allclose(out.variance, np.full((1, 28), math.log(2) + 1e-6), rtol=1e-15)


def test_decode_variance_positive():
    out = MMVAE(seed=3).decode(np.random.default_rng(0).normal(scale=3, size=(1000, 28)))
    assert np.all(out.variance > 0) and np.all(np.isfinite(out.mean))


def test_untrained_reconstruction_contract():
    out = MMVAE(seed=0).reconstruct(apply_mask(random_x(5), MaskPattern.VISION_ONLY))
    assert out.mean.shape == (5, 28) and np.all(out.variance > 0)
    sampled = MMVAE(seed=0).reconstruct(random_x(5), "sampled", np.random.default_rng(0))
    assert np.all(np.isfinite(sampled.mean))


# -- objective ------------------------------------------------------------------

def test_loss_closed_form_at_unit_variance():
    x = random_x(6)
    total = loss(x, x, np.ones_like(x))
    assert float(total) == pytest.approx(5 * 0.5 * math.log(2 * math.pi), rel=1e-12)


def test_beta_zero_ignores_latent():
    x = random_x(3)
    mean, var = x + 0.1, np.full_like(x, 0.5)
    a = loss(x, mean, var, np.zeros((3, 28)), np.zeros((3, 28)), beta=0.0)
    b = loss(x, mean, var, np.full((3, 28), 5.0), np.full((3, 28), -3.0), beta=0.0)
    assert float(a) == float(b)
    assert float(loss(x, mean, var, np.ones((3, 28)), np.zeros((3, 28)), beta=1.0)) > float(a)


def test_touch_weighting_is_one_half():
    x = np.zeros((1, SAMPLE_DIM))
    mean = np.zeros_like(x)
    var = np.ones_like(x)
    mean[0, 16] = 0.4
    base = float(loss(x, mean, var))
    delta = 0.5 * 0.4 ** 2  # NLL change from this entry's squared error at unit variance
    mean[0, 16] = math.sqrt(2) * 0.4  # doubles the squared error
    assert float(loss(x, mean, var)) - base == pytest.approx(delta / 2, rel=1e-12)


def test_loss_rejects_flagged_target():
    x = random_x(2)
    x[0, 3] = MASK_VALUE
    with pytest.raises(ContractError):
        loss(x, x, np.ones_like(x))


def test_kl_closed_form():
    mu = np.array([[1.0, 0.0]])
    logvar = np.array([[0.0, math.log(2.0)]])
    expected = 0.5 * (1.0 + (2.0 - 1.0 - math.log(2.0)))
    assert float(kl_to_standard_normal(mu, logvar)) == pytest.approx(expected)


def test_column_weights_sum_to_modality_count():
    assert column_weights().sum() == pytest.approx(5.0)


def full_loss_probe(seed, beta):
    model = MMVAE(seed=seed)
    rng = np.random.default_rng(seed)
    for p in model.parameters():  # nonzero biases so every path carries gradient
        if p.name.endswith(".b"):
            p.value[:] = rng.normal(scale=0.1, size=p.value.shape)
    x = apply_mask(random_x(5, seed), MaskPattern(1 + seed % 4))
    target = random_x(5, seed + 100)
    noise = rng.standard_normal((5, 28))

    def fn(tape):
        mu, logvar, mean, var = model.forward(tape, tape.constant(x), noise)
        return loss(target, mean, var, mu, logvar, beta)

    tape = ad.Tape()
    grads = tape.backward(fn(tape))
    return probe(lambda: float(fn(ad.Tape()).value), model.parameters(), grads, 20, rng)


@pytest.mark.parametrize("seed,beta", [(0, 0.0), (1, 1.0)])
def test_full_loss_gradient(seed, beta):
    assert max(full_loss_probe(seed, beta)) < 1e-4


def test_variance_weighted_nll_value_and_mean_gradient():
    rng = np.random.default_rng(8)
    target = rng.uniform(-1, 1, (4, SAMPLE_DIM))
    mean0 = rng.uniform(-1, 1, (4, SAMPLE_DIM))
    var0 = rng.uniform(0.05, 2.0, (4, SAMPLE_DIM))
    w = column_weights()
    pm, pv = ad.Parameter(mean0), ad.Parameter(var0)
    tape = ad.Tape()
    total = loss(target, tape.watch(pm), tape.watch(pv), nll_beta=1.0)
    nll = 0.5 * np.log(2 * np.pi * var0) + (target - mean0) ** 2 / (2 * var0)
    assert total.value == pytest.approx(np.sum(var0 * nll * w) / 4, rel=1e-12)
    grads = tape.backward(total)
    # the variance factor is a constant, so the mean sees squared-error gradients
    np.testing.assert_allclose(grads[pm], -(target - mean0) * w / 4, rtol=1e-12)
    plain = loss(target, mean0, var0)
    assert float(plain) == pytest.approx(np.sum(nll * w) / 4, rel=1e-12)


# -- training -------------------------------------------------------------------

def test_zero_steps_keeps_initialization(small_ds):
    model = MMVAE(seed=4)
    before = [p.value.copy() for p in model.parameters()]
    train(small_ds, TrainConfig(steps=0, batch_size=8), model)
    assert all(np.array_equal(a, p.value) for a, p in zip(before, model.parameters()))


def test_same_seed_same_history_and_parameters(small_ds):
    cfg = TrainConfig(steps=100, batch_size=16, lr=1e-3, seed=9)
    a, b = train(small_ds, cfg), train(small_ds, cfg)
    np.testing.assert_array_equal(a.losses, b.losses)
    assert all(np.array_equal(p.value, q.value) for p, q in zip(a.model.parameters(), b.model.parameters()))
    c = train(small_ds, replace(cfg, seed=10))
    assert not np.array_equal(a.losses, c.losses)


def test_short_training_reduces_loss(small_ds):
    result = train(small_ds, TrainConfig(steps=300, batch_size=32, lr=1e-3, seed=0))
    assert result.losses[-20:].mean() < result.losses[:20].mean() - 1.0
    assert set(result.history[0]) >= {"step", "total", "vision", "kl"}


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_raises_training_error(small_ds):
    model = MMVAE(seed=0)
    model.z_mean.bias.value[0] = np.nan
    with pytest.raises(TrainingError) as err:
        train(small_ds, TrainConfig(steps=5, batch_size=8), model)
    assert err.value.step == 1


# -- checkpoints ------------------------------------------------------------------

def test_checkpoint_round_trip_bitwise(tmp_path, small_ds):
    model = train(small_ds, TrainConfig(steps=20, batch_size=16, lr=1e-3)).model
    save_checkpoint(tmp_path / "m.ckpt", model, {"data_hash": "xyz"})
    models, meta = load_checkpoint(tmp_path / "m.ckpt")
    probe_x = apply_mask(random_x(32), MaskPattern.VISION_ONLY)
    a, b = model.reconstruct(probe_x), models["model"].reconstruct(probe_x)
    assert np.array_equal(a.mean, b.mean) and np.array_equal(a.variance, b.variance)
    assert meta["data_hash"] == "xyz" and models["model"].meta["data_hash"] == "xyz"


def test_checkpoint_version_mismatch(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, MMVAE(seed=0))
    blob = bytearray(path.read_bytes())
    blob[4:8] = (SCHEMA_VERSION + 1).to_bytes(4, "little")
    path.write_bytes(bytes(blob))
    with pytest.raises(FormatError, match="version"):
        load_checkpoint(path)


def test_checkpoint_bad_magic_and_truncation(tmp_path):
    (tmp_path / "x.ckpt").write_bytes(b"JUNKJUNKJUNKJUNKJUNK")
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "x.ckpt")
    save_checkpoint(tmp_path / "m.ckpt", MMVAE(seed=0))
    data = (tmp_path / "m.ckpt").read_bytes()
    (tmp_path / "t.ckpt").write_bytes(data[:-80])
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "t.ckpt")
