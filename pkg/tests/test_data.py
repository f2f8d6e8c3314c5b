import hashlib

import numpy as np
import pytest

from devgan.data import (
    DomainImages,
    EmptyDomainError,
    PPMHeaderError,
    PPMMaxvalError,
    PPMTruncatedError,
    SynthSpec,
    dataset_iter,
    epoch_batches,
    generate_synthetic,
    list_images,
    load_image,
    quantize,
    read_manifest,
    read_ppm,
    save_image,
    steps_per_epoch,
    to_unit,
    write_ppm,
)

TWO_BY_TWO = b"P6\n2 2\n255\n" + bytes([255, 0, 0, 0, 255, 0, 0, 0, 255, 128, 128, 128])


def test_read_two_by_two_fixture():
    rgb = read_ppm(TWO_BY_TWO)
    assert rgb.shape == (2, 2, 3)
    assert rgb[0, 0].tolist() == [255, 0, 0]
    assert rgb[1, 1].tolist() == [128, 128, 128]
    assert write_ppm(rgb) == TWO_BY_TWO


def test_header_comments_are_skipped():
    data = b"P6\n# made by hand\n2 2\n255\n" + TWO_BY_TWO[len(b"P6\n2 2\n255\n"):]
    assert np.array_equal(read_ppm(data), read_ppm(TWO_BY_TWO))


@pytest.mark.parametrize("data,error", [
    (b"P3\n2 2\n255\n" + bytes(12), PPMHeaderError),
    (b"P6\n2 2\n65535\n" + bytes(24), PPMMaxvalError),
    (TWO_BY_TWO[:-1], PPMTruncatedError),
])
def test_malformed_files_raise_distinct_errors(data, error):
    with pytest.raises(error):
        read_ppm(data)


def test_error_types_are_distinct():
    assert len({PPMHeaderError, PPMMaxvalError, PPMTruncatedError}) == 3
    assert not issubclass(PPMTruncatedError, PPMHeaderError)


def test_pixel_mapping():
    unit = to_unit(np.array([[[255, 0, 128]]], dtype=np.uint8))
    assert unit[0, 0, 0] == 1.0 and unit[1, 0, 0] == -1.0
    assert abs(unit[2, 0, 0]) < 0.01
    assert quantize(unit).reshape(-1).tolist() == [255, 0, 128]


def test_quantize_clips_out_of_range():
    assert quantize(np.array([[[1.7]], [[-3.0]], [[0.0]]])).reshape(-1).tolist() == [255, 0, 128]


def test_save_load_is_idempotent(tmp_path, rng):
    pixels = rng.uniform(-1, 1, size=(3, 5, 4))
    save_image(pixels, tmp_path / "x.ppm")
    first = (tmp_path / "x.ppm").read_bytes()
    save_image(load_image(tmp_path / "x.ppm"), tmp_path / "y.ppm")
    assert (tmp_path / "y.ppm").read_bytes() == first
    assert np.abs(load_image(tmp_path / "x.ppm").pixels - pixels).max() <= 1 / 255 + 1e-12


def _digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_synthetic_generation_is_byte_identical(tmp_path):
    spec = SynthSpec(image_size=16, count_a=3, count_b=3, test_count_a=2, test_count_b=2, seed=4)
    generate_synthetic(spec, tmp_path / "one")
    generate_synthetic(spec, tmp_path / "two")
    assert _digest(tmp_path / "one") == _digest(tmp_path / "two")
    generate_synthetic(SynthSpec(image_size=16, count_a=3, count_b=3, test_count_a=2, test_count_b=2, seed=5),
                       tmp_path / "three")
    assert _digest(tmp_path / "one") != _digest(tmp_path / "three")


def test_manifest_masks_partition_and_disk_colour(tiny_data):
    spec = SynthSpec()
    manifest = read_manifest(tiny_data / "manifest.csv")
    assert len(manifest) == 10 + 10 + 4 + 4
    for name, info in manifest.items():
        rgb = read_ppm((tiny_data / name).read_bytes())
        mask = info.mask(rgb.shape[0])
        assert mask.any() and (~mask).any()
        assert (rgb[mask] == np.array(info.color)).all()
        base = np.array(spec.disk_color_a if info.domain == "A" else spec.disk_color_b)
        assert np.abs(np.array(info.color) - np.clip(base, 0, 255)).max() <= spec.jitter


def test_domain_from_folder(tiny_data):
    assert load_image(tiny_data / "trainA" / "a_0000.ppm").domain == "A"
    assert load_image(tiny_data / "testB" / "b_0001.ppm").domain == "B"


def _write_folder(path, count, rng):
    path.mkdir()
    for i in range(count):
        save_image(rng.uniform(-1, 1, size=(3, 4, 4)), path / f"{i}.ppm")


def test_dataset_iter_stops_at_shorter_domain(tmp_path, rng):
    _write_folder(tmp_path / "A", 3, rng)
    _write_folder(tmp_path / "B", 5, rng)
    pairs = list(dataset_iter(tmp_path / "A", tmp_path / "B", 1, 0))
    assert len(pairs) == 3 == steps_per_epoch(3, 5, 1)
    assert all(a.shape == b.shape == (1, 3, 4, 4) for a, b in pairs)


def test_epoch_count_for_uneven_domains():
    assert steps_per_epoch(1177, 996, 1) == 996
    assert steps_per_epoch(10, 10, 3) == 4


def test_shuffle_is_seeded(tiny_data):
    a, b = DomainImages(tiny_data / "trainA"), DomainImages(tiny_data / "trainB")
    order = lambda seed: [x[0].tobytes() for x, _ in epoch_batches(a, b, 1, seed)]
    assert order([0, 1]) == order([0, 1])
    assert order([0, 1]) != order([0, 2])
    assert sorted(order([0, 1])) == sorted(order([0, 2]))


def test_empty_and_missing_folders(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(EmptyDomainError):
        DomainImages(tmp_path / "empty")
    with pytest.raises(EmptyDomainError, match="does not exist"):
        list_images(tmp_path / "nope")


def test_pairings_differ_across_epoch_seeds(tiny_data):
    a, b = DomainImages(tiny_data / "trainA"), DomainImages(tiny_data / "trainB")
    pairs = lambda seed: {(x.tobytes(), y.tobytes()) for x, y in epoch_batches(a, b, 1, seed)}
    assert pairs([0, 0]) != pairs([0, 1])
