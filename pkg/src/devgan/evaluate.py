"""Mask-based evaluation of A->B translation on the synthetic disk data."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import DiskInfo, SynthSpec, list_images, load_image, read_manifest
from .networks import NetworkParams, decode, encode, translate
from .tensor import Tensor


def full_path(models: dict[str, NetworkParams], pixels: np.ndarray, batch_size: int = 10) -> np.ndarray:
    """decode(translate(encode(x))) for an (N, 3, S, S) array, without recording a tape."""
    out = []
    for start in range(0, len(pixels), batch_size):
        x = Tensor(pixels[start : start + batch_size])
        enc = encode(models["encoder"], x)
        out.append(decode(models["decoder"], translate(models["translator"], enc)).data)
    return np.concatenate(out)


def to_rgb255(pixels: np.ndarray) -> np.ndarray:
    return (pixels + 1.0) * 127.5


@dataclass
class TranslationReport:
    closer_to_b: list[bool] = field(default_factory=list)
    background_l1: list[float] = field(default_factory=list)
    passthrough_l1: list[float] = field(default_factory=list)

    @property
    def frac_closer_to_b(self) -> float:
        return float(np.mean(self.closer_to_b)) if self.closer_to_b else float("nan")

    @property
    def mean_background_l1(self) -> float:
        return float(np.mean(self.background_l1)) if self.background_l1 else float("nan")

    @property
    def mean_passthrough_l1(self) -> float:
        return float(np.mean(self.passthrough_l1)) if self.passthrough_l1 else float("nan")


def disk_color_shift(inp: np.ndarray, out: np.ndarray, info: DiskInfo,
                     center_a, center_b) -> tuple[bool, float]:
    """(output disk mean nearer the B colour than the A colour, background mean |out - in|)."""
    mask = info.mask(inp.shape[-1])
    mean_rgb = to_rgb255(out)[:, mask].mean(axis=1)
    closer = np.linalg.norm(mean_rgb - np.asarray(center_b)) < np.linalg.norm(mean_rgb - np.asarray(center_a))
    background = np.abs(out - inp)[:, ~mask].mean()
    return bool(closer), float(background)


def evaluate_translation(models: dict[str, NetworkParams], root, limit: int = 30,
                         spec: SynthSpec | None = None) -> TranslationReport:
    """Score held-out testA (colour shift, background) and testB (pass-through) images."""
    spec = spec or SynthSpec()
    root = Path(root)
    manifest = read_manifest(root / "manifest.csv")
    report = TranslationReport()

    paths_a = list_images(root / "testA")[:limit]
    pix_a = np.stack([load_image(p).pixels for p in paths_a])
    for path, inp, out in zip(paths_a, pix_a, full_path(models, pix_a)):
        info = manifest[f"testA/{path.name}"]
        closer, background = disk_color_shift(inp, out, info, spec.disk_color_a, spec.disk_color_b)
        report.closer_to_b.append(closer)
        report.background_l1.append(background)

    paths_b = list_images(root / "testB")[:limit]
    pix_b = np.stack([load_image(p).pixels for p in paths_b])
    for inp, out in zip(pix_b, full_path(models, pix_b)):
        report.passthrough_l1.append(float(np.abs(out - inp).mean()))
    return report
