import time

import numpy as np
import pytest

from autodiff.gradcheck import check_parameter_gradients
from autodiff.tensor import GRADCHECK_DTYPE
from networks.architecture import LayerSpec
from networks.critic import build_critic, critic_input, forward_critic
from networks.model import build_network, param_count
from networks.segmentor import build_segmentor, forward_segment
from pipelines.synthetic import synthetic_samples
from schema.errors import ConfigError, FormatError, LabelError, ShapeError
from training.objectives import pixel_loss_from_logits


RES = 32


@pytest.fixture(scope="module")
def segmentor():
    return build_segmentor(seed=0, resolution=RES)


@pytest.fixture(scope="module")
def critic():
    return build_critic(seed=0, resolution=RES)


def random_image(seed=0, n=None):
    shape = (RES, RES, 1) if n is None else (n, RES, RES, 1)
    return np.random.default_rng(seed).standard_normal(shape).astype(np.float32)


# -----------------------------
# Construction
# -----------------------------

def test_param_count_matches_table(segmentor, critic):
    assert param_count(segmentor) == 286_759
    assert param_count(critic) == 243_212
    assert param_count(build_critic(seed=0, include_image=True, resolution=RES)) == 243_604


def test_single_layer_networks():
    conv = LayerSpec(kind="conv", kernel=3, in_channels=8, out_channels=16, resolution=32)
    head = LayerSpec(kind="conv", kernel=1, in_channels=64, out_channels=4, resolution=32)

    assert param_count(build_network("t", [conv], seed=0)) == 1168
    assert param_count(build_network("t", [head], seed=0)) == 260
    assert param_count(build_network("t", [], seed=0)) == 0


def test_same_seed_same_parameters():
    a = build_segmentor(seed=3, resolution=RES)
    b = build_segmentor(seed=3, resolution=RES)
    c = build_segmentor(seed=4, resolution=RES)

    assert a.digest() == b.digest()
    assert a.digest() != c.digest()


def test_parameter_names_follow_schedule(segmentor):
    names = list(segmentor.parameters())

    assert names[0] == "00.conv.kernel"
    assert "08.resblock.3.conv1.kernel" in names
    assert "02.resblock.bn1.running_mean" in segmentor.buffers()


def test_initialization_scales(segmentor):
    params = segmentor.param_arrays()
    stem = params["00.conv.kernel"]

    assert np.all(params["00.conv.bias"] == 0)
    assert np.all(params["02.resblock.bn1.gain"] == 1)
    # variance 2 / (7 * 7 * 1)
    assert abs(stem.var() - 2.0 / 49) < 0.02


def test_critic_stem_input_extent():
    assert build_critic(seed=0, resolution=RES).parameters()["00.conv.kernel"].shape[2] == 4
    assert build_critic(seed=0, include_image=True, resolution=RES).parameters()["00.conv.kernel"].shape[2] == 5


def test_state_round_trip_and_mismatch(segmentor):
    other = build_segmentor(seed=9, resolution=RES)
    other.load_state(segmentor.state_arrays())
    assert other.digest() == segmentor.digest()

    state = segmentor.state_arrays()
    state.pop("00.conv.bias")
    with pytest.raises(FormatError, match="00.conv.bias"):
        other.load_state(state)


# -----------------------------
# Segmentor forward
# -----------------------------

def test_segment_output_is_distribution(segmentor):
    probs = forward_segment(segmentor, random_image())

    assert probs.shape == (RES, RES, 4)
    np.testing.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-5)
    assert probs.min() >= 0 and probs.max() <= 1


def test_batch_forward_matches_single(segmentor):
    batch = random_image(1, n=2)
    together = forward_segment(segmentor, batch)
    alone = forward_segment(segmentor, batch[1])

    assert together.shape == (2, RES, RES, 4)
    np.testing.assert_allclose(together[1], alone, atol=1e-5)


def test_eval_forward_is_deterministic_and_stateless(segmentor):
    before = segmentor.digest()
    a = forward_segment(segmentor, random_image(2))
    b = forward_segment(segmentor, random_image(2))

    assert a.tobytes() == b.tobytes()
    assert segmentor.digest() == before


def test_wrong_input_shape(segmentor):
    with pytest.raises(ShapeError, match="expects input"):
        forward_segment(segmentor, np.zeros((RES, RES, 2)))
    with pytest.raises(ShapeError):
        forward_segment(segmentor, np.zeros((RES * 2, RES * 2, 1)))


def test_unknown_mode_rejected(segmentor):
    with pytest.raises(ConfigError):
        segmentor.forward(random_image(), mode="inference")


def test_train_mode_updates_running_stats_only_when_asked():
    net = build_segmentor(seed=0, resolution=RES)
    before = net.digest()
    net.forward(random_image(0, n=2), mode="train", update_stats=False)
    assert net.digest() == before

    net.forward(random_image(0, n=2), mode="train", update_stats=True)
    assert net.digest() != before


# -----------------------------
# Critic forward
# -----------------------------

def test_untrained_critic_in_open_interval(critic):
    sample = synthetic_samples(1, RES)[0]
    score = forward_critic(critic, sample.mask)

    assert isinstance(score, float)
    assert 0.0 < score < 1.0
    assert forward_critic(critic, sample.mask) == score


def test_critic_batch_scores(critic):
    masks = np.stack([s.mask for s in synthetic_samples(3, RES)])
    scores = forward_critic(critic, masks)

    assert scores.shape == (3,)
    assert np.all((scores > 0) & (scores < 1))


def test_soft_predictions_are_admissible(critic, segmentor):
    probs = forward_segment(segmentor, random_image(5))
    assert 0.0 < forward_critic(critic, probs) < 1.0


def test_image_to_mask_only_critic_rejected(critic):
    mask = synthetic_samples(1, RES)[0].mask
    with pytest.raises(ShapeError, match="mask-only"):
        forward_critic(critic, mask, image=random_image())


def test_image_channel_critic():
    D = build_critic(seed=0, include_image=True, resolution=RES)
    sample = synthetic_samples(1, RES)[0]

    assert 0.0 < forward_critic(D, sample.mask, image=sample.image) < 1.0


def test_overfull_mask_rejected(critic):
    with pytest.raises(LabelError):
        forward_critic(critic, np.full((RES, RES, 4), 0.5))


def test_heart_channel_zeroed_for_unannotated():
    mask = synthetic_samples(2, RES)[0].mask
    batch = np.stack([mask, mask])

    x = critic_input(batch, heart_annotated=[True, False])

    assert x[0, ..., 2].any()
    assert not x[1, ..., 2].any()
    np.testing.assert_array_equal(x[1, ..., [0, 1, 3]], batch[1, ..., [0, 1, 3]])


# -----------------------------
# End-to-end gradients
# -----------------------------

def test_end_to_end_segmentor_gradients_64bit():
    S = build_segmentor(seed=1, resolution=64).astype(GRADCHECK_DTYPE)
    samples = synthetic_samples(2, 64, seed=1)
    x = np.stack([s.image for s in samples]).astype(GRADCHECK_DTYPE)
    y = np.stack([s.mask for s in samples])
    heart = np.array([True, True])

    def loss():
        z = S.logits(x, mode="train", update_stats=False)
        return float(np.sum(pixel_loss_from_logits(z, y, heart)[0]))

    S.zero_grad()
    z = S.logits(x, mode="train", record=True, update_stats=False)
    S.backward(pixel_loss_from_logits(z, y, heart)[1])
    S.clear()

    errors = check_parameter_gradients(loss, S.param_arrays(), S.grads(), probes=20,
                                       rng=np.random.default_rng(0), step=1e-6)
    assert max(errors.values()) < 1e-3, errors


def test_end_to_end_critic_gradients_64bit():
    D = build_critic(seed=2, resolution=32).astype(GRADCHECK_DTYPE)
    real = np.stack([s.mask for s in synthetic_samples(2, 32)]).astype(GRADCHECK_DTYPE)
    fake = np.random.default_rng(3).dirichlet(np.ones(4), size=(2, 32, 32))
    x = np.concatenate([real, fake])
    t = np.array([1.0, 1.0, 0.0, 0.0])

    def loss():
        z = D.logits(x, mode="train", update_stats=False)
        return float(np.sum(np.logaddexp(0, z) - t * z))

    D.zero_grad()
    z = D.logits(x, mode="train", record=True, update_stats=False)
    D.backward(1.0 / (1.0 + np.exp(-z)) - t)
    D.clear()

    errors = check_parameter_gradients(loss, D.param_arrays(), D.grads(), probes=20,
                                       rng=np.random.default_rng(1), step=1e-6)
    assert max(errors.values()) < 1e-3, errors


# -----------------------------
# Latency
# -----------------------------

@pytest.mark.slow
def test_full_resolution_forward_latency():
    S = build_segmentor(seed=0)
    image = np.random.default_rng(0).standard_normal((400, 400, 1)).astype(np.float32)
    forward_segment(S, np.zeros((400, 400, 1), dtype=np.float32))

    t0 = time.perf_counter()
    probs = forward_segment(S, image)
    elapsed = time.perf_counter() - t0

    assert probs.shape == (400, 400, 4)
    assert elapsed <= 5.0
