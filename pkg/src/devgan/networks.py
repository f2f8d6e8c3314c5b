"""Encoder, decoder, translator and discriminators, plus the CycleGAN-lite extras.

Every network is described once as a list of :class:`Layer` records.  The
same plan drives parameter initialisation, the forward functions and the
FLOP counter, so the cost model cannot drift away from what actually runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from . import ops
from .tensor import ParamTensor, ShapeError, Tensor

PROPOSED_NETWORKS = ("encoder", "decoder", "translator", "discriminator")
BASELINE_NETWORKS = (
    "encoder", "decoder", "translator",
    "baseline_translator_b2a", "baseline_discriminator_a", "baseline_discriminator_b",
)
ALL_NETWORKS = PROPOSED_NETWORKS + BASELINE_NETWORKS[3:]
GENERATOR_PARTS = ("encoder", "translator", "decoder")
LEAKY_SLOPE = 0.2


@dataclass
class ArchSpec:
    image_size: int = 64
    base_channels: int = 32
    encoder_downsamples: int = 2
    translator_resblocks: int = 4
    disc_layers: int = 3

    def __post_init__(self) -> None:
        for name in ("image_size", "base_channels", "encoder_downsamples", "disc_layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"ArchSpec.{name} must be >= 1, got {getattr(self, name)}")
        # zero resblocks is allowed: the translator then degenerates to identity
        if self.translator_resblocks < 0:
            raise ValueError("ArchSpec.translator_resblocks must be >= 0")
        if self.image_size % (2**self.encoder_downsamples):
            raise ValueError(
                f"image_size {self.image_size} not divisible by 2^{self.encoder_downsamples}"
            )

    @property
    def encoding_channels(self) -> int:
        return self.base_channels * 2**self.encoder_downsamples

    @property
    def encoding_size(self) -> int:
        return self.image_size // 2**self.encoder_downsamples


@dataclass(frozen=True)
class Layer:
    name: str
    kind: str  # "conv" | "convT" | "norm"
    cin: int
    cout: int
    k: int = 1
    stride: int = 1
    pad: int = 0
    out_pad: int = 0
    in_size: int = 0

    @property
    def out_size(self) -> int:
        if self.kind == "conv":
            return (self.in_size + 2 * self.pad - self.k) // self.stride + 1
        if self.kind == "convT":
            return (self.in_size - 1) * self.stride - 2 * self.pad + self.k + self.out_pad
        return self.in_size

    @property
    def macs(self) -> int:
        if self.kind == "conv":
            return self.out_size**2 * self.cout * self.cin * self.k**2
        if self.kind == "convT":
            return self.in_size**2 * self.cin * self.cout * self.k**2
        return 0


def encoder_plan(arch: ArchSpec) -> list[Layer]:
    b, s = arch.base_channels, arch.image_size
    plan = [Layer("conv0", "conv", 3, b, 7, 1, 3, in_size=s), Layer("norm0", "norm", b, b, in_size=s)]
    c = b
    for i in range(arch.encoder_downsamples):
        conv = Layer(f"down{i}", "conv", c, 2 * c, 3, 2, 1, in_size=s)
        s, c = conv.out_size, 2 * c
        plan += [conv, Layer(f"down{i}_norm", "norm", c, c, in_size=s)]
    return plan


def decoder_plan(arch: ArchSpec) -> list[Layer]:
    c, s = arch.encoding_channels, arch.encoding_size
    plan = []
    for i in range(arch.encoder_downsamples):
        up = Layer(f"up{i}", "convT", c, c // 2, 3, 2, 1, 1, in_size=s)
        s, c = up.out_size, c // 2
        plan += [up, Layer(f"up{i}_norm", "norm", c, c, in_size=s)]
    plan.append(Layer("out", "conv", c, 3, 7, 1, 3, in_size=s))
    return plan


def translator_plan(arch: ArchSpec) -> list[Layer]:
    c, s = arch.encoding_channels, arch.encoding_size
    plan = []
    for i in range(arch.translator_resblocks):
        plan += [
            Layer(f"res{i}.conv1", "conv", c, c, 3, 1, 1, in_size=s),
            Layer(f"res{i}.norm1", "norm", c, c, in_size=s),
            Layer(f"res{i}.conv2", "conv", c, c, 3, 1, 1, in_size=s),
            Layer(f"res{i}.norm2", "norm", c, c, in_size=s),
        ]
    return plan


def discriminator_plan(arch: ArchSpec, cin: int, size: int) -> list[Layer]:
    """Patch discriminator; channel schedule is the same for image and encoding inputs."""
    plan = []
    c = cin
    for i in range(arch.disc_layers):
        cout = arch.base_channels * 2 ** (i + 1)
        conv = Layer(f"layer{i}", "conv", c, cout, 4, 2, 1, in_size=size)
        if conv.out_size < 1:
            raise ValueError(f"disc_layers={arch.disc_layers} shrinks a {size}px input to nothing")
        plan.append(conv)
        size, c = conv.out_size, cout
        if i > 0:
            plan.append(Layer(f"layer{i}_norm", "norm", c, c, in_size=size))
    plan.append(Layer("head", "conv", c, 1, 3, 1, 1, in_size=size))
    return plan


def network_plan(name: str, arch: ArchSpec) -> list[Layer]:
    if name == "encoder":
        return encoder_plan(arch)
    if name == "decoder":
        return decoder_plan(arch)
    if name == "translator":
        return translator_plan(arch)
    if name == "discriminator":
        return discriminator_plan(arch, arch.encoding_channels, arch.encoding_size)
    if name in ("baseline_discriminator_a", "baseline_discriminator_b"):
        return discriminator_plan(arch, 3, arch.image_size)
    if name == "baseline_translator_b2a":
        return [
            Layer(f"{part}.{layer.name}", layer.kind, layer.cin, layer.cout, layer.k,
                  layer.stride, layer.pad, layer.out_pad, layer.in_size)
            for part in GENERATOR_PARTS
            for layer in network_plan(part, arch)
        ]
    raise ValueError(f"unknown network {name!r}")


@dataclass
class NetworkParams:
    name: str
    params: list[ParamTensor]
    arch: ArchSpec
    _index: dict[str, ParamTensor] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._index = {p.name: p for p in self.params}

    def __getitem__(self, local: str) -> ParamTensor:
        return self._index[f"{self.name}.{local}"]

    def __iter__(self) -> Iterator[ParamTensor]:
        return iter(self.params)

    def scope(self, prefix: str = "") -> Callable[[str], ParamTensor]:
        return lambda local: self[prefix + local]

    def num_params(self) -> int:
        return sum(p.size for p in self.params)


def _layer_params(net: str, layer: Layer, rng: np.random.Generator) -> list[ParamTensor]:
    base = f"{net}.{layer.name}"
    if layer.kind == "norm":
        return [ParamTensor(f"{base}.gamma", np.ones(layer.cout)),
                ParamTensor(f"{base}.beta", np.zeros(layer.cout))]
    if layer.kind == "conv":
        shape = (layer.cout, layer.cin, layer.k, layer.k)
    else:
        shape = (layer.cin, layer.cout, layer.k, layer.k)
    return [ParamTensor(f"{base}.weight", rng.normal(0.0, 0.02, size=shape)),
            ParamTensor(f"{base}.bias", np.zeros(layer.cout))]


def build_network(name: str, arch: ArchSpec, seed: int) -> NetworkParams:
    # each network draws from its own stream so the proposed and baseline
    # models start from identical encoder/translator/decoder weights
    rng = np.random.default_rng([seed & (2**64 - 1), ALL_NETWORKS.index(name)])
    params: list[ParamTensor] = []
    for layer in network_plan(name, arch):
        params += _layer_params(name, layer, rng)
    return NetworkParams(name, params, arch)


def init_params(arch: ArchSpec, seed: int, model: str = "proposed") -> dict[str, NetworkParams]:
    """Fresh parameters for every network of ``model`` ('proposed' or 'baseline')."""
    names = model_networks(model)
    return {name: build_network(name, arch, seed) for name in names}


def model_networks(model: str) -> tuple[str, ...]:
    if model == "proposed":
        return PROPOSED_NETWORKS
    if model == "baseline":
        return BASELINE_NETWORKS
    raise ValueError(f"unknown model {model!r} (expected 'proposed' or 'baseline')")


# ----------------------------------------------------------------- forward


def _conv(p, layer: Layer, x: Tensor) -> Tensor:
    w, b = p(f"{layer.name}.weight"), p(f"{layer.name}.bias")
    if layer.kind == "convT":
        return ops.conv_transpose2d(x, w, b, layer.stride, layer.pad, layer.out_pad)
    return ops.conv2d(x, w, b, layer.stride, layer.pad)


def _norm(p, name: str, x: Tensor) -> Tensor:
    return ops.instance_norm(x, p(f"{name}.gamma"), p(f"{name}.beta"))


def _expect(op: str, x: Tensor, shape: tuple[int, ...]) -> None:
    if x.data.ndim != 4 or x.shape[1:] != shape:
        raise ShapeError(f"{op}: expected N x {' x '.join(map(str, shape))} input, got {x.shape}")


def _encode(p, arch: ArchSpec, image: Tensor) -> Tensor:
    _expect("encode", image, (3, arch.image_size, arch.image_size))
    x = image
    plan = encoder_plan(arch)
    for conv, norm in zip(plan[::2], plan[1::2]):
        x = ops.relu(_norm(p, norm.name, _conv(p, conv, x)))
    return x


def _decode(p, arch: ArchSpec, encoding: Tensor) -> Tensor:
    _expect("decode", encoding, (arch.encoding_channels, arch.encoding_size, arch.encoding_size))
    x = encoding
    plan = decoder_plan(arch)
    for up, norm in zip(plan[:-1:2], plan[1:-1:2]):
        x = ops.relu(_norm(p, norm.name, _conv(p, up, x)))
    return ops.tanh(_conv(p, plan[-1], x))


def _translate(p, arch: ArchSpec, encoding: Tensor) -> Tensor:
    _expect("translate", encoding, (arch.encoding_channels, arch.encoding_size, arch.encoding_size))
    x = encoding
    plan = translator_plan(arch)
    for i in range(0, len(plan), 4):
        conv1, norm1, conv2, norm2 = plan[i : i + 4]
        h = ops.relu(_norm(p, norm1.name, _conv(p, conv1, x)))
        h = _norm(p, norm2.name, _conv(p, conv2, h))
        x = ops.add(x, h)
    return x


def encode(enc: NetworkParams, image: Tensor) -> Tensor:
    """Down-sample an image from either domain to its encoding."""
    return _encode(enc.scope(), enc.arch, image)


def decode(dec: NetworkParams, encoding: Tensor) -> Tensor:
    """Up-sample an encoding back to an image in (-1, 1)."""
    return _decode(dec.scope(), dec.arch, encoding)


def translate(tr: NetworkParams, encoding: Tensor) -> Tensor:
    """Residual map from encodings to encodings; shape is preserved exactly."""
    return _translate(tr.scope(), tr.arch, encoding)


def discriminate(disc: NetworkParams, x: Tensor) -> Tensor:
    """Patch map of raw real/fake scores.

    The proposed discriminator takes encodings; the baseline ones take images.
    """
    arch = disc.arch
    if disc.name == "discriminator":
        _expect("discriminate", x, (arch.encoding_channels, arch.encoding_size, arch.encoding_size))
    else:
        _expect("discriminate", x, (3, arch.image_size, arch.image_size))
    p = disc.scope()
    plan = network_plan(disc.name, arch)
    blocks: list[list[Layer]] = []
    for layer in plan[:-1]:
        if layer.kind == "norm":
            blocks[-1].append(layer)
        else:
            blocks.append([layer])
    for block in blocks:
        h = _conv(p, block[0], x)
        if len(block) > 1:
            h = _norm(p, block[1].name, h)
        x = ops.leaky_relu(h, LEAKY_SLOPE)
    return _conv(p, plan[-1], x)


def generate(models: dict[str, NetworkParams], direction: str, image: Tensor) -> Tensor:
    """Full image-to-image path: A->B uses the shared stack, B->A the baseline copy."""
    if direction == "a2b":
        enc, tr, dec = models["encoder"], models["translator"], models["decoder"]
        return decode(dec, translate(tr, encode(enc, image)))
    if direction == "b2a":
        g = models["baseline_translator_b2a"]
        x = _encode(g.scope("encoder."), g.arch, image)
        x = _translate(g.scope("translator."), g.arch, x)
        return _decode(g.scope("decoder."), g.arch, x)
    raise ValueError(f"unknown direction {direction!r}")


# ----------------------------------------------------------------- cost model


def forward_macs(name: str, arch: ArchSpec) -> int:
    return sum(layer.macs for layer in network_plan(name, arch))


def count_flops(arch: ArchSpec, model: str, phase: str) -> int:
    """FLOPs for one sample: 2 per conv MAC, every forward pass of the phase.

    For ``train_step`` each forward pass is charged 3x (forward + backward
    estimated as twice the forward).  Normalisation and activations are not
    counted.
    """
    model_networks(model)
    enc, dec, tr = (forward_macs(n, arch) for n in ("encoder", "decoder", "translator"))
    if phase == "inference":
        return 2 * (enc + tr + dec)
    if phase != "train_step":
        raise ValueError(f"unknown phase {phase!r}")
    if model == "proposed":
        # E(a), E(b); T(E(a)), T(E(b)); Dec(E(a)), Dec(E(b)), Dec(T(E(b)));
        # D(E(b)), D(T(E(a))) for the D step and D(T(E(a))) again for the G step
        disc = forward_macs("discriminator", arch)
        macs = 2 * enc + 2 * tr + 3 * dec + 3 * disc
    else:
        # G_ab(a), G_ba(b), G_ba(G_ab(a)), G_ab(G_ba(b));
        # D_b and D_a on real + fake for the D step, on fake again for the G step
        disc = forward_macs("baseline_discriminator_a", arch)
        macs = 4 * (enc + tr + dec) + 6 * disc
    return 2 * 3 * macs


def count_params(models: dict[str, NetworkParams], generator_side: bool = False) -> int:
    total = 0
    for name, net in models.items():
        if generator_side and "discriminator" in name:
            continue
        total += net.num_params()
    return total
