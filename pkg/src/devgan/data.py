"""PPM image I/O, the synthetic disk-on-gradient dataset and unpaired batching.

Directory layout follows the public CycleGAN datasets::

    root/trainA/*.ppm  root/trainB/*.ppm  root/testA/*.ppm  root/testB/*.ppm
    root/manifest.csv

Pixels are stored as 8-bit RGB and held in memory as float64 in [-1, 1].
"""

from __future__ import annotations

import csv
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

MANIFEST_FIELDS = ("filename", "domain", "cx", "cy", "radius", "r", "g", "b", "seed")
SPLITS = ("train", "test")


class PPMError(ValueError):
    pass


class PPMHeaderError(PPMError):
    pass


class PPMTruncatedError(PPMError):
    pass


class PPMMaxvalError(PPMError):
    pass


class EmptyDomainError(ValueError):
    pass


@dataclass
class ImageRecord:
    pixels: np.ndarray  # 3 x S x S, float64 in [-1, 1]
    domain: Optional[str] = None
    source_path: Optional[str] = None
    synth_seed: Optional[int] = None


# ------------------------------------------------------------------ PPM I/O

_HEADER_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def read_ppm(data: bytes) -> np.ndarray:
    """Parse a binary P6 file into an (H, W, 3) uint8 array."""
    pos = 0
    fields = []
    for _ in range(4):
        m = _HEADER_TOKEN.match(data, pos)
        if m is None:
            raise PPMHeaderError("PPM header ends early")
        fields.append(m.group(1))
        pos = m.end()
    if fields[0] != b"P6":
        raise PPMHeaderError(f"not a binary PPM (magic {fields[0][:8]!r})")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError:
        raise PPMHeaderError(f"non-numeric PPM header fields {fields[1:]!r}") from None
    if width < 1 or height < 1:
        raise PPMHeaderError(f"bad PPM dimensions {width}x{height}")
    if maxval != 255:
        raise PPMMaxvalError(f"unsupported PPM maxval {maxval} (only 255)")
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise PPMHeaderError("missing whitespace after PPM maxval")
    pos += 1
    need = width * height * 3
    payload = data[pos : pos + need]
    if len(payload) < need:
        raise PPMTruncatedError(f"PPM payload has {len(payload)} bytes, expected {need}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)


def write_ppm(rgb: np.ndarray) -> bytes:
    h, w, _ = rgb.shape
    return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(rgb, dtype=np.uint8).tobytes()


def to_unit(rgb: np.ndarray) -> np.ndarray:
    """uint8 (H, W, 3) -> float (3, H, W) in [-1, 1]."""
    return 2.0 * (rgb.astype(np.float64).transpose(2, 0, 1) / 255.0) - 1.0


def quantize(pixels: np.ndarray) -> np.ndarray:
    """float (3, H, W) in [-1, 1] -> uint8 (H, W, 3), rounding half up."""
    p = np.floor((np.asarray(pixels) + 1.0) * 0.5 * 255.0 + 0.5)
    return np.clip(p, 0, 255).astype(np.uint8).transpose(1, 2, 0)


def _domain_from_path(path: Path) -> Optional[str]:
    parent = path.parent.name
    if parent.endswith(("A", "B")) and parent[:-1] in SPLITS:
        return parent[-1]
    return None


def load_image(path) -> ImageRecord:
    path = Path(path)
    pixels = to_unit(read_ppm(path.read_bytes()))
    return ImageRecord(pixels, _domain_from_path(path), str(path))


def save_image(record, path) -> None:
    pixels = record.pixels if isinstance(record, ImageRecord) else record
    Path(path).write_bytes(write_ppm(quantize(pixels)))


def list_images(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise EmptyDomainError(f"image directory {directory} does not exist")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() == ".ppm")


# --------------------------------------------------------------- synthetic


@dataclass
class SynthSpec:
    image_size: int = 64
    count_a: int = 200
    count_b: int = 200
    test_count_a: int = 30
    test_count_b: int = 30
    disk_color_a: tuple[int, int, int] = (200, 30, 30)
    disk_color_b: tuple[int, int, int] = (240, 140, 20)
    jitter: int = 20
    radius_min: float = 0.15
    radius_max: float = 0.35
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.count_a, self.count_b) < 1:
            raise ValueError("SynthSpec counts must be >= 1")
        if min(self.test_count_a, self.test_count_b) < 0:
            raise ValueError("SynthSpec test counts must be >= 0")
        if not 0 < self.radius_min <= self.radius_max < 0.5:
            raise ValueError("disk radius fractions must satisfy 0 < min <= max < 0.5")


@dataclass
class DiskInfo:
    filename: str
    domain: str
    cx: float
    cy: float
    radius: float
    color: tuple[int, int, int]
    seed: int

    def mask(self, size: int) -> np.ndarray:
        """Boolean (size, size) disk membership at integer pixel coordinates."""
        yy, xx = np.mgrid[0:size, 0:size]
        return (xx - self.cx) ** 2 + (yy - self.cy) ** 2 <= self.radius**2


def image_seed(seed: int, split: str, domain: str, index: int) -> int:
    ss = np.random.SeedSequence([seed, SPLITS.index(split), "AB".index(domain), index])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def render_disk_image(spec: SynthSpec, domain: str, seed: int) -> tuple[np.ndarray, float, float, float, tuple]:
    """Draw one (S, S, 3) uint8 image; returns it with cx, cy, radius, color."""
    rng = np.random.default_rng(seed)
    s = spec.image_size
    c0, c1 = rng.uniform(0, 255, size=(2, 3))
    angle = rng.uniform(0, 2 * np.pi)
    yy, xx = np.mgrid[0:s, 0:s] / max(s - 1, 1)
    proj = np.cos(angle) * xx + np.sin(angle) * yy
    t = (proj - proj.min()) / max(proj.max() - proj.min(), 1e-12)
    img = c0[None, None, :] * (1.0 - t[..., None]) + c1[None, None, :] * t[..., None]

    radius = float(rng.uniform(spec.radius_min, spec.radius_max) * s)
    cx = float(rng.uniform(radius, s - 1 - radius))
    cy = float(rng.uniform(radius, s - 1 - radius))
    base = np.array(spec.disk_color_a if domain == "A" else spec.disk_color_b)
    color = np.clip(base + rng.integers(-spec.jitter, spec.jitter + 1, size=3), 0, 255)
    disk = DiskInfo("", domain, cx, cy, radius, tuple(int(v) for v in color), seed).mask(s)
    img[disk] = color
    rgb = np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8)
    return rgb, cx, cy, radius, tuple(int(v) for v in color)


def generate_synthetic(spec: SynthSpec, out_dir) -> list[DiskInfo]:
    """Write the train/test A/B folders and ``manifest.csv``; returns the manifest."""
    root = Path(out_dir)
    manifest: list[DiskInfo] = []
    counts = {("train", "A"): spec.count_a, ("train", "B"): spec.count_b,
              ("test", "A"): spec.test_count_a, ("test", "B"): spec.test_count_b}
    try:
        for (split, domain), count in counts.items():
            folder = root / f"{split}{domain}"
            folder.mkdir(parents=True, exist_ok=True)
            for i in range(count):
                seed = image_seed(spec.seed, split, domain, i)
                rgb, cx, cy, radius, color = render_disk_image(spec, domain, seed)
                name = f"{split}{domain}/{domain.lower()}_{i:04d}.ppm"
                (root / name).write_bytes(write_ppm(rgb))
                manifest.append(DiskInfo(name, domain, cx, cy, radius, color, seed))
        write_manifest(manifest, root / "manifest.csv")
    except OSError as exc:
        raise OSError(f"cannot write synthetic dataset to {root}: {exc}") from exc
    return manifest


def write_manifest(entries: Sequence[DiskInfo], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_FIELDS)
        for e in entries:
            w.writerow([e.filename, e.domain, repr(e.cx), repr(e.cy), repr(e.radius), *e.color, e.seed])


def read_manifest(path) -> dict[str, DiskInfo]:
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            info = DiskInfo(row["filename"], row["domain"], float(row["cx"]), float(row["cy"]),
                            float(row["radius"]), (int(row["r"]), int(row["g"]), int(row["b"])),
                            int(row["seed"]))
            out[info.filename] = info
    return out


# ---------------------------------------------------------------- batching


class DomainImages:
    """All images of one domain folder, decoded once into an (N, 3, S, S) array."""

    def __init__(self, directory) -> None:
        self.paths = list_images(directory)
        if not self.paths:
            raise EmptyDomainError(f"no .ppm images in {directory}")
        self.pixels = np.stack([load_image(p).pixels for p in self.paths])

    def __len__(self) -> int:
        return len(self.paths)


def steps_per_epoch(count_a: int, count_b: int, batch_size: int) -> int:
    return -(-min(count_a, count_b) // batch_size)


def epoch_batches(images_a: DomainImages, images_b: DomainImages, batch_size: int,
                  epoch_seed) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Independently shuffled A and B batches; the shorter domain sets the epoch length."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    rng = np.random.default_rng(epoch_seed)
    perm_a = rng.permutation(len(images_a))
    perm_b = rng.permutation(len(images_b))
    n = min(len(images_a), len(images_b))
    for start in range(0, n, batch_size):
        stop = min(start + batch_size, n)
        yield images_a.pixels[perm_a[start:stop]], images_b.pixels[perm_b[start:stop]]


def dataset_iter(dir_a, dir_b, batch_size: int, epoch_seed) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    return epoch_batches(DomainImages(dir_a), DomainImages(dir_b), batch_size, epoch_seed)


def data_dirs(root, split: str = "train") -> tuple[str, str]:
    return os.path.join(root, f"{split}A"), os.path.join(root, f"{split}B")
