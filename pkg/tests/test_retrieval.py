import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bitclimb import retrieval
from bitclimb.bitgen import sample_brief_pool
from bitclimb.retrieval import (ImageIndex, Keypoint, detect_fast, extract_patch, index_images,
                                match_count, match_count_table, precision_at_k, retrieve,
                                tune_threshold)
from bitclimb.selection import Signature, select_random

from oracles import naive_greedy_matches


def square_image():
    img = np.zeros((160, 160), np.uint8)
    img[50:110, 50:110] = 220
    return img


def blob_image():
    img = np.full((256, 256), 30, np.uint8)
    for y in range(36, 216, 12):
        for x in range(36, 216, 12):
            img[y:y + 5, x:x + 5] = 230
    return img


@pytest.fixture(scope="module")
def tools():
    pool = sample_brief_pool(9, 512)
    return pool, select_random(512, 64, 9)


# -- detection ---------------------------------------------------------------

def test_constant_image_has_no_corners():
    assert detect_fast(np.full((100, 100), 128, np.uint8)) == []


def test_square_corners_found():
    kps = detect_fast(square_image(), 20, 75)
    for cx, cy in [(50, 50), (109, 50), (50, 109), (109, 109)]:
        assert any(abs(k.x - cx) <= 1 and abs(k.y - cy) <= 1 for k in kps), (cx, cy)


def test_corner_rich_image_is_capped():
    kps = detect_fast(blob_image(), 20, 75)
    assert len(kps) == 75
    scores = [k.score for k in kps]
    assert scores == sorted(scores, reverse=True)
    assert all(32 <= k.x <= 256 - 32 and 32 <= k.y <= 256 - 32 for k in kps)


def test_detection_is_deterministic():
    assert detect_fast(blob_image()) == detect_fast(blob_image().copy())


def test_too_small_image():
    with pytest.raises(ValueError):
        detect_fast(np.zeros((70, 100), np.uint8))


def test_patch_is_direct_crop():
    img = np.random.default_rng(0).integers(0, 256, (100, 120)).astype(np.uint8)
    kp = Keypoint(40, 60, 1.0)
    patch = extract_patch(img, kp)
    assert patch.shape == (64, 64)
    for dy in (0, 17, 63):
        for dx in (0, 31, 63):
            assert patch[dy, dx] == img[kp.y - 32 + dy, kp.x - 32 + dx]


def test_index_duplicates_and_bounds(tools):
    pool, d = tools
    imgs = [blob_image(), blob_image(), square_image()]
    index = index_images(imgs, ["a", "a", "b"], d, pool, threads=2)
    assert np.array_equal(index.signatures[0], index.signatures[1])
    assert sum(len(s) for s in index.signatures) <= 75 * 3
    empty = index_images([np.zeros((80, 80), np.uint8)], ["z"], d, pool)
    assert empty.signatures[0].shape == (0, 8)


# -- matching ----------------------------------------------------------------

def random_sigs(rng, n, b):
    return [Signature.from_bits(rng.integers(0, 2, b)) for _ in range(n)]


def test_self_match_at_zero():
    sigs = random_sigs(np.random.default_rng(1), 12, 64)
    assert match_count(sigs, sigs, 0) == 12


def test_threshold_below_all_distances():
    a = [Signature.from_bits([0] * 16)]
    b = [Signature.from_bits([1] * 8 + [0] * 8)]
    assert match_count(a, b, 7) == 0 and match_count(a, b, 8) == 1


def brute_force_greedy(a, b, t):
    # exhaustive: try every claim order; greedy-ascending on distinct distances gives one answer
    dist = np.array([[sum(x != y for x, y in zip(p.to_bits(), q.to_bits())) for q in b] for p in a])
    return naive_greedy_matches(dist, t)


def test_three_by_three_against_oracle():
    rng = np.random.default_rng(3)
    checked = 0
    while checked < 100:
        a, b = random_sigs(rng, 3, 24), random_sigs(rng, 3, 24)
        dist = [[int(np.sum(p.to_bits() != q.to_bits())) for q in b] for p in a]
        flat = list(itertools.chain(*dist))
        if len(set(flat)) != 9:
            continue
        t = int(rng.integers(6, 18))
        assert match_count(a, b, t) == brute_force_greedy(a, b, t)
        checked += 1


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8), st.integers(1, 8), st.integers(0, 16))
def test_match_count_symmetric(seed, na, nb, t):
    rng = np.random.default_rng(seed)
    a = [Signature.from_bits(rng.integers(0, 2, 16)) for _ in range(na)]
    pool_b = a + random_sigs(rng, 4, 16)  # shared signatures force distance ties
    b = [pool_b[i] for i in rng.integers(0, len(pool_b), nb)]
    assert match_count(a, b, t) == match_count(b, a, t)


def test_match_count_monotone_in_threshold():
    rng = np.random.default_rng(4)
    a, b = random_sigs(rng, 20, 32), random_sigs(rng, 25, 32)
    counts = [match_count(a, b, t) for t in range(33)]
    assert counts == sorted(counts) and counts[-1] == 20


def test_match_count_length_mismatch():
    with pytest.raises(ValueError):
        match_count([Signature.from_bits([0] * 8)], [Signature.from_bits([0] * 16)], 3)


# -- retrieval -----------------------------------------------------------------

@pytest.fixture(scope="module")
def planted_index(tools):
    pool, d = tools
    images, groups = retrieval.generate_synthetic_images(1, num_groups=5, per_group=4)
    index = index_images(images, groups, d, pool)
    return index, match_count_table(index)


def test_table_matches_direct_counts(planted_index):
    index, counts = planted_index
    for i, j, t in [(0, 1, 5), (2, 9, 20), (7, 3, 64)]:
        assert counts[i, j, t] == match_count(index.signatures[i], index.signatures[j], t)


def test_duplicate_ranks_first(tools):
    pool, d = tools
    images, groups = retrieval.generate_synthetic_images(2, num_groups=3, per_group=1)
    images = images + [images[1].copy()]
    index = index_images(images, ["x", "y", "z", "y"], d, pool)
    assert retrieve(1, index, 1, 0) == [3]
    assert len(retrieve(0, index, 10, 0)) == 3


def test_planted_top3_are_cogroup(planted_index):
    index, counts = planted_index
    t, p = tune_threshold(index, 3, counts)
    assert p == 1.0
    for q in range(len(index)):
        top = retrieve(q, index, 3, t, counts)
        assert all(index.groups[j] == index.groups[q] for j in top)
    assert p >= precision_at_k(index, 3, 0, counts)
    assert p >= precision_at_k(index, 3, index.b, counts)


def test_exact_duplicate_groups(tools):
    pool, d = tools
    images, _ = retrieval.generate_synthetic_images(3, num_groups=4, per_group=1)
    images = [im for im in images for _ in range(3)]
    groups = [str(g) for g in range(4) for _ in range(3)]
    index = index_images(images, groups, d, pool)
    counts = match_count_table(index)
    for k in (1, 2):
        assert precision_at_k(index, k, 0, counts) == 1.0


def test_random_labels_give_chance_precision():
    n, group = 400, 4
    rng = np.random.default_rng(11)
    groups = [str(g) for g in rng.permutation(np.repeat(np.arange(n // group), group))]
    index = ImageIndex([str(i) for i in range(n)], groups, [np.zeros((0, 1), np.uint8)] * n, 8)
    counts = rng.integers(0, 50, (n, n, 9))
    p = precision_at_k(index, 1, 4, counts)
    chance = (group - 1) / (n - 1)
    sigma = np.sqrt(chance * (1 - chance) / n)
    assert abs(p - chance) <= 3 * sigma


def test_single_group_tunes_to_zero(tools):
    pool, d = tools
    images, _ = retrieval.generate_synthetic_images(5, num_groups=1, per_group=3)
    index = index_images(images, ["g"] * 3, d, pool)
    assert tune_threshold(index, 2) == (0, 1.0)


def test_retrieve_argument_errors(planted_index):
    index, counts = planted_index
    with pytest.raises(IndexError):
        retrieve(99, index, 1, 0, counts)
    with pytest.raises(ValueError):
        retrieve(0, index, 0, 0, counts)


# -- files ---------------------------------------------------------------------

def test_manifest_parsing(tmp_path):
    (tmp_path / "m.txt").write_text("a.png 1\n\nsub/b.png 2\n")
    entries = retrieval.read_manifest(tmp_path / "m.txt")
    assert entries == [(tmp_path / "a.png", "1"), (tmp_path / "sub/b.png", "2")]
    (tmp_path / "bad.txt").write_text("lonely\n")
    with pytest.raises(retrieval.ManifestError):
        retrieval.read_manifest(tmp_path / "bad.txt")
    with pytest.raises(retrieval.ManifestError):
        retrieval.read_manifest(tmp_path / "none.txt")


def test_summary_line():
    assert retrieval.summary_line(3, 0.5, 12) == "precision_at_k,3,0.5,threshold,12"
