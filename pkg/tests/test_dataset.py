import numpy as np
import pytest
from PIL import Image

from bitclimb import dataset
from bitclimb.dataset import (MATCH, NONMATCH, DatasetFormatError, DatasetLoadError,
                              generate_synthetic_pairset, load_brown_subset, read_pairset,
                              tile_mosaic, write_pairset)


@pytest.fixture
def brown_dir(tmp_path):
    """One mosaic: patch 0 black, patch 1 white, patches 2..9 random; 10 listed in info.txt."""
    rng = np.random.default_rng(0)
    patches = rng.integers(0, 256, size=(10, 64, 64), dtype=np.uint8)
    patches[0] = 0
    patches[1] = 255
    Image.fromarray(tile_mosaic(patches), mode="L").save(tmp_path / "patches0000.bmp")
    (tmp_path / "info.txt").write_text("".join(f"{7 + i // 2} 0\n" for i in range(10)))
    (tmp_path / "m50_1_1_0.txt").write_text("0 7 0 1 7 0 0\n")
    (tmp_path / "m50_3_3_0.txt").write_text("0 7 0 1 9 0 0\n5 9 0 3 9 0 0\n9 11 0 2 8 0 0\n")
    return tmp_path, patches


def test_brown_fixture_round_trips_bytes(brown_dir):
    root, patches = brown_dir
    ps = load_brown_subset(root, "m50_1_1_0.txt")
    assert ps.num_pairs == 1
    assert ps.labels.tolist() == [MATCH]
    a, b = ps.pairs[0]
    assert np.array_equal(ps.patches[a], patches[0])
    assert np.array_equal(ps.patches[b], patches[1])
    assert ps.patch_ids.tolist() == [0, 1]


def test_brown_labels_follow_3d_point_ids(brown_dir):
    root, patches = brown_dir
    ps = load_brown_subset(root, "m50_3_3_0.txt")
    raw = [line.split() for line in (root / "m50_3_3_0.txt").read_text().splitlines()]
    assert ps.labels.tolist() == [MATCH if r[1] == r[4] else NONMATCH for r in raw]
    assert ps.labels.tolist() == [NONMATCH, MATCH, NONMATCH]
    for (a, b), r in zip(ps.pairs, raw):
        assert ps.patch_ids[a] == int(r[0]) and ps.patch_ids[b] == int(r[3])
        assert np.array_equal(ps.patches[a], patches[int(r[0])])


def test_brown_load_is_repeatable(brown_dir):
    root, _ = brown_dir
    assert load_brown_subset(root, "m50_3_3_0.txt").same_as(load_brown_subset(root, "m50_3_3_0.txt"))


def test_brown_rgb_mosaic_uses_first_channel(tmp_path):
    patches = np.zeros((2, 64, 64), dtype=np.uint8)
    patches[1] = 200
    grey = tile_mosaic(patches)
    Image.fromarray(np.stack([grey] * 3, axis=-1), mode="RGB").save(tmp_path / "patches0000.bmp")
    (tmp_path / "info.txt").write_text("1 0\n2 0\n")
    (tmp_path / "p.txt").write_text("0 1 0 1 2 0 0\n")
    ps = load_brown_subset(tmp_path, "p.txt")
    assert ps.patches[1].min() == 200


def test_brown_errors(brown_dir, tmp_path):
    root, _ = brown_dir
    with pytest.raises(DatasetLoadError, match="nope.txt"):
        load_brown_subset(root, "nope.txt")
    (root / "bad.txt").write_text("0 7 0 1 7 0 0\n0 7 0 1\n")
    with pytest.raises(DatasetFormatError, match=":2:"):
        load_brown_subset(root, "bad.txt")
    (root / "far.txt").write_text("0 7 0 300 7 0 0\n")
    with pytest.raises(DatasetFormatError):
        load_brown_subset(root, "far.txt")
    with pytest.raises(DatasetLoadError, match="info.txt"):
        load_brown_subset(tmp_path / "missing", "x.txt")


def test_brown_missing_mosaic(tmp_path):
    (tmp_path / "info.txt").write_text("1 0\n" * 300)
    (tmp_path / "p.txt").write_text("0 1 0 299 1 0 0\n")
    Image.fromarray(np.zeros((1024, 1024), np.uint8), mode="L").save(tmp_path / "patches0000.bmp")
    with pytest.raises(DatasetFormatError, match="patches0001"):
        load_brown_subset(tmp_path, "p.txt")


def test_synthetic_counts():
    ps = generate_synthetic_pairset(1, 10, 4, 0.1)
    # 10 * C(4, 2) within-class pairs, enumerated
    expected = sum(1 for c in range(10) for i in range(4) for j in range(i + 1, 4))
    assert expected == 60
    assert ps.num_matches == 60
    assert ps.num_pairs - ps.num_matches == 60
    cls = np.arange(ps.num_patches) // 4
    a, b = ps.pairs.T
    assert np.all((cls[a] == cls[b]) == (ps.labels == MATCH))


def test_synthetic_zero_noise_gives_identical_matches():
    ps = generate_synthetic_pairset(4, 3, 3, 0.0)
    for (a, b), lab in zip(ps.pairs, ps.labels):
        if lab == MATCH:
            assert ps.patches[a].tobytes() == ps.patches[b].tobytes()


def test_synthetic_is_deterministic():
    assert generate_synthetic_pairset(9, 5, 3, 0.2).same_as(generate_synthetic_pairset(9, 5, 3, 0.2))
    assert not generate_synthetic_pairset(9, 5, 3, 0.2).same_as(generate_synthetic_pairset(10, 5, 3, 0.2))


def test_synthetic_noise_level_is_respected():
    ps = generate_synthetic_pairset(2, 2, 20, 0.25)
    diff = (ps.patches[1:20] != ps.patches[0]).mean()
    # two members differ where either was resampled to a different byte: 1 - 0.75**2 ~ 0.4375, times 255/256
    assert abs(diff - (1 - 0.75 ** 2) * 255 / 256) < 0.02


@pytest.mark.parametrize("classes, per", [(1, 4), (3, 1)])
def test_synthetic_parameter_errors(classes, per):
    with pytest.raises(ValueError):
        generate_synthetic_pairset(0, classes, per, 0.1)


def test_pairset_container_round_trip(tmp_path):
    ps = generate_synthetic_pairset(3, 4, 3, 0.3)
    p1, p2 = tmp_path / "a.pairs", tmp_path / "b.pairs"
    write_pairset(ps, p1)
    head = p1.read_bytes().split(b"\n", 1)[0]
    assert head == f"PAIRSET v1 {ps.num_patches} {ps.num_pairs}".encode()
    back = read_pairset(p1)
    assert np.array_equal(back.patches, ps.patches)
    assert np.array_equal(back.pairs, ps.pairs)
    assert np.array_equal(back.labels, ps.labels)
    write_pairset(back, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_pairset_container_rejects_garbage(tmp_path):
    p = tmp_path / "x.pairs"
    p.write_bytes(b"PAIRSET v1 1 1\n" + b"\0" * 4096 + b"0 3 1\n")
    with pytest.raises(DatasetFormatError):
        read_pairset(p)
    p.write_bytes(b"NOPE\n")
    with pytest.raises(DatasetFormatError):
        read_pairset(p)


def test_both_classes_required():
    ps = dataset.PairSet(np.zeros((2, 64, 64), np.uint8), [(0, 1)], [1])
    with pytest.raises(ValueError):
        ps.require_both_classes()


def test_patch_values_validated():
    with pytest.raises(ValueError):
        dataset.PairSet(np.zeros((2, 32, 32), np.uint8), [], [])
