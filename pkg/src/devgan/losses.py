"""Cyclic, deviation and adversarial losses, each bound to the networks it trains.

Gradient routing is part of each loss's contract: ``LOSS_SCOPES`` names the
networks whose parameters may receive that loss's gradient, and
:func:`scoped_backward` is the only way the training code differentiates a
loss.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import ops
from .networks import NetworkParams
from .tensor import ShapeError, Tensor, backward

LOSS_SCOPES: dict[str, tuple[str, ...]] = {
    "cyclic": ("encoder", "decoder"),
    "deviation": ("translator",),
    "adversarial_generator": ("translator",),
    "adversarial_discriminator": ("discriminator",),
    # CycleGAN-lite: both generators share one objective, as do both discriminators
    "baseline_generator": ("encoder", "translator", "decoder", "baseline_translator_b2a"),
    "baseline_discriminator": ("baseline_discriminator_a", "baseline_discriminator_b"),
}


@dataclass
class LossWeights:
    lambda_cyc: float = 10.0
    lambda_dev_a: float = 10.0
    lambda_dev_b: float = 10.0
    use_dev_term_b: bool = True
    adv_mode: str = "least_squares"
    distance: str = "l1"
    # kept at 1 in normal use; 0 lets tests switch the adversarial game off
    lambda_adv: float = 1.0

    def __post_init__(self) -> None:
        for name in ("lambda_cyc", "lambda_dev_a", "lambda_dev_b", "lambda_adv"):
            if getattr(self, name) < 0:
                raise ValueError(f"LossWeights.{name} must be >= 0")
        if self.adv_mode not in ("least_squares", "cross_entropy"):
            raise ValueError(f"unknown adv_mode {self.adv_mode!r}")
        if self.distance not in ("l1", "l2"):
            raise ValueError(f"unknown distance {self.distance!r}")


def difference(a: Tensor, b: Tensor, distance: str = "l1") -> Tensor:
    if distance == "l1":
        return ops.l1_loss(a, b)
    return ops.mse_loss(a, b)


def cyclic_loss(input_image: Tensor, cyclic_image: Tensor, distance: str = "l1") -> Tensor:
    """Reconstruction error of the shared autoencoder (unweighted)."""
    return difference(input_image, cyclic_image, distance)


def deviation_terms(enc_b: Tensor, translated_enc_b: Tensor, input_b: Tensor,
                    translated_cyclic_b: Tensor, w: LossWeights) -> tuple[Tensor, Tensor]:
    """Unweighted (term a, term b); term b is a zero constant when disabled."""
    term_a = difference(enc_b, translated_enc_b, w.distance)
    if not w.use_dev_term_b:
        return term_a, Tensor(np.array(0.0))
    return term_a, difference(input_b, translated_cyclic_b, w.distance)


def deviation_loss(enc_b: Tensor, translated_enc_b: Tensor, input_b: Tensor,
                   translated_cyclic_b: Tensor, w: LossWeights) -> Tensor:
    """How far the translator moves genuine domain-B data, in encoding and image space."""
    if input_b.shape != translated_cyclic_b.shape:
        raise ShapeError(f"deviation_loss: image shapes {input_b.shape} vs {translated_cyclic_b.shape}")
    term_a, term_b = deviation_terms(enc_b, translated_enc_b, input_b, translated_cyclic_b, w)
    weights = [(w.lambda_dev_a, term_a)]
    if w.use_dev_term_b:
        weights.append((w.lambda_dev_b, term_b))
    return ops.weighted_sum(weights)


def _target_like(scores: Tensor, value: float) -> Tensor:
    return Tensor(np.full(scores.shape, value))


def _adv(scores: Tensor, target: float, mode: str) -> Tensor:
    if mode == "least_squares":
        return ops.mse_loss(scores, _target_like(scores, target))
    return ops.bce_with_logits(scores, _target_like(scores, target))


def adversarial_generator_loss(fake_scores: Tensor, w: LossWeights) -> Tensor:
    """Penalty for fakes the discriminator still recognises."""
    return _adv(fake_scores, 1.0, w.adv_mode)


def adversarial_discriminator_loss(real_scores: Tensor, fake_scores: Tensor, w: LossWeights) -> Tensor:
    """Halved sum of the real->1 and fake->0 penalties.

    The caller is responsible for computing ``fake_scores`` from a detached
    fake so generator-side parameters never see this loss.
    """
    real = _adv(real_scores, 1.0, w.adv_mode)
    fake = _adv(fake_scores, 0.0, w.adv_mode)
    return ops.scale(ops.add(real, fake), 0.5)


def scope_params(loss_name: str, models: Mapping[str, NetworkParams]):
    return [p for net in LOSS_SCOPES[loss_name] for p in models[net]]


def scoped_backward(loss_name: str, root: Tensor,
                    models: Mapping[str, NetworkParams]) -> dict[str, np.ndarray]:
    """Gradient of ``root`` restricted to the networks ``loss_name`` is assigned to."""
    return backward(root, scope_params(loss_name, models))


def audit_scopes(grad_maps: Mapping[str, Mapping[str, np.ndarray]]) -> None:
    """Check that each loss's gradient map covers exactly its assigned networks."""
    for loss_name, grads in grad_maps.items():
        touched = {key.split(".", 1)[0] for key in grads}
        expected = set(LOSS_SCOPES[loss_name])
        if touched != expected:
            raise AssertionError(
                f"scope audit: {loss_name} gradient reached {sorted(touched)}, "
                f"expected {sorted(expected)}"
            )
