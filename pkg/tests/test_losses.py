import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from devgan.losses import (
    LOSS_SCOPES,
    LossWeights,
    adversarial_discriminator_loss,
    adversarial_generator_loss,
    audit_scopes,
    cyclic_loss,
    deviation_loss,
    deviation_terms,
    scoped_backward,
)
from devgan.networks import ArchSpec, build_network, translate
from devgan.tensor import ShapeError, Tape, Tensor


def T(a):
    return Tensor(np.asarray(a, dtype=float))


def test_cyclic_examples():
    assert cyclic_loss(T([1.0, 2.0]), T([1.0, 2.0])).item() == 0.0
    assert cyclic_loss(T([1.0, 2.0]), T([0.0, 0.0])).item() == 1.5
    assert cyclic_loss(T([1.0, 2.0]), T([0.0, 0.0]), "l2").item() == 2.5


def test_deviation_is_zero_when_translator_is_identity(rng):
    e, x = T(rng.normal(size=(1, 4, 3, 3))), T(rng.normal(size=(1, 3, 6, 6)))
    assert deviation_loss(e, e, x, x, LossWeights()).item() == 0.0


def test_deviation_weights_each_term():
    w = LossWeights(lambda_dev_a=2.0, lambda_dev_b=3.0)
    e, te = T([0.0, 0.0]), T([1.0, -1.0])  # term a = 1
    x, tx = T([0.0, 0.0, 0.0]), T([0.5, 0.5, 0.5])  # term b = 0.5
    assert deviation_loss(e, te, x, tx, w).item() == 2.0 * 1.0 + 3.0 * 0.5


def test_term_b_toggle_leaves_term_a_alone(rng):
    e, te = T(rng.normal(size=8)), T(rng.normal(size=8))
    x, tx = T(rng.normal(size=6)), T(rng.normal(size=6))
    on, off = LossWeights(), LossWeights(use_dev_term_b=False)
    a_on, b_on = deviation_terms(e, te, x, tx, on)
    a_off, b_off = deviation_terms(e, te, x, tx, off)
    assert a_on.item() == a_off.item()
    assert b_off.item() == 0.0 and b_on.item() > 0
    assert deviation_loss(e, te, x, tx, off).item() == on.lambda_dev_a * a_on.item()


def test_deviation_image_shape_mismatch():
    with pytest.raises(ShapeError):
        deviation_loss(T([0.0]), T([0.0]), T([0.0, 1.0]), T([0.0]), LossWeights())


def test_least_squares_adversarial_closed_forms():
    w = LossWeights()
    assert adversarial_generator_loss(T([1.0, 1.0]), w).item() == 0.0
    assert adversarial_generator_loss(T([0.0, 3.0]), w).item() == (1 + 4) / 2
    # 0.5 * (mean (r-1)^2 + mean f^2)
    assert adversarial_discriminator_loss(T([1.0, 0.0]), T([0.0, 2.0]), w).item() == 0.5 * (0.5 + 2.0)


def test_cross_entropy_adversarial_at_zero_logits():
    w = LossWeights(adv_mode="cross_entropy")
    assert adversarial_generator_loss(T([0.0]), w).item() == pytest.approx(np.log(2))
    assert adversarial_discriminator_loss(T([0.0]), T([0.0]), w).item() == pytest.approx(np.log(2))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**16), mode=st.sampled_from(["least_squares", "cross_entropy"]),
       distance=st.sampled_from(["l1", "l2"]))
def test_losses_are_nonnegative(seed, mode, distance):
    r = np.random.default_rng(seed)
    w = LossWeights(adv_mode=mode, distance=distance)
    a, b = T(r.normal(size=5)), T(r.normal(size=5))
    assert cyclic_loss(a, b, distance).item() >= 0
    assert deviation_loss(a, b, a, b, w).item() >= 0
    assert adversarial_generator_loss(a, w).item() >= 0
    assert adversarial_discriminator_loss(a, b, w).item() >= 0


def test_proposed_scopes_are_disjoint():
    nets = [set(LOSS_SCOPES[name]) for name in ("cyclic", "deviation", "adversarial_discriminator")]
    assert not (nets[0] & nets[1] or nets[0] & nets[2] or nets[1] & nets[2])
    assert LOSS_SCOPES["adversarial_generator"] == ("translator",)


def test_audit_flags_leaked_gradient():
    ok = {"cyclic": {"encoder.w": 0, "decoder.w": 0}}
    audit_scopes(ok)
    with pytest.raises(AssertionError, match="translator"):
        audit_scopes({"cyclic": {"encoder.w": 0, "decoder.w": 0, "translator.w": 0}})


@pytest.mark.parametrize("kwargs", [{"lambda_cyc": -1.0}, {"adv_mode": "hinge"}, {"distance": "l3"}])
def test_weight_validation(kwargs):
    with pytest.raises(ValueError):
        LossWeights(**kwargs)


ONES, ZEROS, HALF = np.ones((1, 1, 2, 2)), np.zeros((1, 1, 2, 2)), np.full((1, 1, 2, 2), 0.5)


@pytest.mark.parametrize("fake,expect", [(ONES, 0.0), (ZEROS, 1.0), (HALF, 0.25)])
def test_generator_penalty_examples(fake, expect):
    assert adversarial_generator_loss(T(fake), LossWeights()).item() == expect


@pytest.mark.parametrize("real,fake,expect", [(ONES, ZEROS, 0.0), (ZEROS, ONES, 1.0), (HALF, HALF, 0.25)])
def test_discriminator_penalty_examples(real, fake, expect):
    assert adversarial_discriminator_loss(T(real), T(fake), LossWeights()).item() == expect


def test_term_a_alone_example():
    w = LossWeights(use_dev_term_b=False)
    x = T(np.zeros((1, 3, 2, 2)))
    assert deviation_loss(T(np.zeros(8)), T(np.full(8, 0.5)), x, x, w).item() == w.lambda_dev_a * 0.5


def test_term_b_off_ignores_image_arguments(rng):
    arch = ArchSpec(image_size=8, base_channels=2, encoder_downsamples=1, translator_resblocks=1)
    models = {"translator": build_network("translator", arch, 0)}
    enc = T(rng.normal(size=(1, 4, 4, 4)))
    w = LossWeights(use_dev_term_b=False)

    def run(x, tx):
        with Tape():
            loss = deviation_loss(enc, translate(models["translator"], enc), T(x), T(tx), w)
            return loss.item(), scoped_backward("deviation", loss, models)

    v1, g1 = run(rng.normal(size=(1, 3, 8, 8)), rng.normal(size=(1, 3, 8, 8)))
    v2, g2 = run(rng.normal(size=(1, 3, 8, 8)), rng.normal(size=(1, 3, 8, 8)))
    assert v1 == v2
    assert all(np.array_equal(g1[k], g2[k]) for k in g1)
