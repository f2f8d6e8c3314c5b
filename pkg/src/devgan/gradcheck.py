"""Central finite-difference checks for every kernel and loss.

Each check builds a scalar by projecting the op's output onto a fixed random
tensor, then compares the tape gradient against ``(f(x+e) - f(x-e)) / 2e``
for every input element.  Relative error per element is
``|analytic - numeric| / max(|analytic|, |numeric|, 1e-3 * scale, 1e-8)``
where ``scale`` is the largest numeric gradient over all inputs of the check,
so entries far below the gradient's scale (a conv bias feeding a norm, say)
do not dominate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np

from . import losses, ops
from .tensor import ParamTensor, Tape, Tensor, backward

EPS = 1e-5
TOLERANCE = 1e-4
KINK_MARGIN = 1e-3
# roundoff in (f(x+e) - f(x-e)) / 2e is ~1e-11 * |f| at EPS = 1e-5
NOISE_FLOOR = 1e-8


@dataclass
class CheckResult:
    op: str
    case: str
    max_rel_err: float
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_err <= self.tolerance)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, scale: Optional[float] = None) -> float:
    if scale is None:
        scale = float(np.abs(numeric).max()) if numeric.size else 0.0
    if scale == 0.0 and not np.abs(analytic).any():
        return 0.0
    floor = max(1e-3 * scale, NOISE_FLOOR)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((np.abs(analytic - numeric) / denom).max())


def numeric_gradient(f: Callable[[], float], p: ParamTensor, eps: float = EPS) -> np.ndarray:
    grad = np.zeros_like(p.data)
    flat, out = p.data.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        out[i] = (fp - fm) / (2 * eps)
    return grad


def check_function(op: str, case: str, build: Callable[[], Tensor], params: Iterable[ParamTensor],
                   seed: int = 0, eps: float = EPS, tolerance: float = TOLERANCE) -> CheckResult:
    """Compare tape gradients of ``build()`` with finite differences over ``params``."""
    params = list(params)
    proj = Tensor(np.random.default_rng(seed).normal(size=build().shape))

    def scalar() -> Tensor:
        return ops.total(ops.mul(build(), proj))

    with Tape():
        analytic = backward(scalar(), params)
    numeric = {p.name: numeric_gradient(lambda: scalar().item(), p, eps) for p in params}
    scale = max((float(np.abs(n).max()) for n in numeric.values() if n.size), default=0.0)
    worst = 0.0
    for p in params:
        worst = max(worst, relative_error(analytic[p.name], numeric[p.name], scale))
    return CheckResult(op, case, worst, tolerance)


# ----------------------------------------------------------------- registry


def _param(rng, name, shape, away_from_zero: bool = False) -> ParamTensor:
    x = rng.normal(size=shape)
    if away_from_zero:
        x = np.sign(x) * (np.abs(x) + 10 * KINK_MARGIN)
    return ParamTensor(name, x)


def _conv_cases(rng):
    # (input shape, weight shape, stride, pad)
    for xs, ws, s, p in [((2, 3, 5, 5), (4, 3, 3, 3), 1, 0), ((1, 2, 6, 6), (3, 2, 4, 4), 2, 1),
                         ((2, 3, 7, 7), (2, 3, 3, 3), 2, 1), ((1, 4, 6, 6), (2, 4, 7, 7), 1, 3)]:
        x, w, b = _param(rng, "x", xs), _param(rng, "w", ws), _param(rng, "b", (ws[0],))
        yield (f"x{xs} w{ws} s{s} p{p}", lambda x=x, w=w, b=b, s=s, p=p: ops.conv2d(x, w, b, s, p), [x, w, b])


def _conv_t_cases(rng):
    for xs, ws, s, p, op in [((2, 3, 4, 4), (3, 2, 3, 3), 1, 0, 0), ((1, 4, 3, 3), (4, 2, 3, 3), 2, 1, 1),
                             ((2, 2, 3, 3), (2, 3, 4, 4), 2, 1, 0)]:
        x, w, b = _param(rng, "x", xs), _param(rng, "w", ws), _param(rng, "b", (ws[1],))
        yield (f"x{xs} w{ws} s{s} p{p} op{op}",
               lambda x=x, w=w, b=b, s=s, p=p, op=op: ops.conv_transpose2d(x, w, b, s, p, op), [x, w, b])


def _norm_cases(rng):
    for shape in [(2, 3, 4, 4), (1, 2, 5, 3), (3, 1, 2, 2)]:
        x = _param(rng, "x", shape)
        g, b = _param(rng, "gamma", (shape[1],)), _param(rng, "beta", (shape[1],))
        yield f"x{shape}", lambda x=x, g=g, b=b: ops.instance_norm(x, g, b), [x, g, b]


def _unary_cases(rng, fn, kinked: bool):
    for shape in [(7,), (2, 3, 4), (1, 2, 3, 3)]:
        x = _param(rng, "x", shape, away_from_zero=kinked)
        yield f"x{shape}", lambda x=x: fn(x), [x]


def _pair_cases(rng, fn, kinked: bool, second_param: bool = True):
    for shape in [(5,), (2, 3, 4), (1, 2, 3, 3)]:
        a = _param(rng, "a", shape)
        b = ParamTensor("b", a.data + rng.choice([-1, 1], size=shape) * rng.uniform(0.05, 1, size=shape)) \
            if kinked else _param(rng, "b", shape)
        params = [a, b] if second_param else [a]
        yield f"{shape}", lambda a=a, b=b: fn(a, b), params


def _deviation_cases(rng):
    for use_b in (True, False):
        w = losses.LossWeights(lambda_dev_a=2.0, lambda_dev_b=3.0, use_dev_term_b=use_b)
        e = _param(rng, "enc_b", (1, 4, 3, 3))
        te = ParamTensor("translated_enc_b", e.data + rng.uniform(0.05, 1, size=e.shape) * rng.choice([-1, 1], size=e.shape))
        x = _param(rng, "input_b", (1, 3, 6, 6))
        tx = ParamTensor("translated_cyclic_b", x.data + rng.uniform(0.05, 1, size=x.shape) * rng.choice([-1, 1], size=x.shape))
        yield (f"term_b={use_b}", lambda e=e, te=te, x=x, tx=tx, w=w: losses.deviation_loss(e, te, x, tx, w),
               [e, te, x, tx])


def _adv_cases(rng, generator: bool):
    for mode in ("least_squares", "cross_entropy"):
        w = losses.LossWeights(adv_mode=mode)
        for shape in [(1, 1, 2, 2), (2, 1, 3, 3)]:
            real, fake = _param(rng, "real", shape), _param(rng, "fake", shape)
            if generator:
                yield f"{mode} {shape}", lambda f=fake, w=w: losses.adversarial_generator_loss(f, w), [fake]
            else:
                yield (f"{mode} {shape}",
                       lambda r=real, f=fake, w=w: losses.adversarial_discriminator_loss(r, f, w), [real, fake])


def registry(seed: int = 0) -> dict[str, Callable[[], Iterable]]:
    rng = np.random.default_rng(seed)
    return {
        "conv2d": lambda: _conv_cases(rng),
        "conv_transpose2d": lambda: _conv_t_cases(rng),
        "instance_norm": lambda: _norm_cases(rng),
        "relu": lambda: _unary_cases(rng, ops.relu, kinked=True),
        "leaky_relu": lambda: _unary_cases(rng, lambda x: ops.leaky_relu(x, 0.2), kinked=True),
        "tanh": lambda: _unary_cases(rng, ops.tanh, kinked=False),
        "add": lambda: _pair_cases(rng, ops.add, kinked=False),
        "mul": lambda: _pair_cases(rng, ops.mul, kinked=False),
        "l1_loss": lambda: _pair_cases(rng, ops.l1_loss, kinked=True),
        "mse_loss": lambda: _pair_cases(rng, ops.mse_loss, kinked=False),
        "bce_with_logits": lambda: _pair_cases(
            rng, lambda a, b: ops.bce_with_logits(a, Tensor(1 / (1 + np.exp(-b.data)))), kinked=False,
            second_param=False),
        "cyclic_loss": lambda: _pair_cases(rng, losses.cyclic_loss, kinked=True),
        "deviation_loss": lambda: _deviation_cases(rng),
        "adversarial_generator_loss": lambda: _adv_cases(rng, generator=True),
        "adversarial_discriminator_loss": lambda: _adv_cases(rng, generator=False),
    }


def run_checks(op: Optional[str] = None, seed: int = 0) -> list[CheckResult]:
    checks = registry(seed)
    if op is not None and op not in checks:
        raise KeyError(f"unknown op {op!r}; choose from {', '.join(checks)}")
    results = []
    for name in [op] if op else checks:
        for i, (case, build, params) in enumerate(checks[name]()):
            results.append(check_function(name, case, build, params, seed=seed + i))
    return results
