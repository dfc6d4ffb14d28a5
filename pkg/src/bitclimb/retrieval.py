"""Keypoint-based image search with binary descriptors.

Each image is reduced to up to 75 FAST corners, a 64x64 patch around each and
its signature.  Two images score the number of one-to-one keypoint matches
whose Hamming distance stays under a threshold; the threshold is swept to
maximise precision@k over the database.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .bitgen import BitPool
from .dataset import PATCH_SIZE
from .rng import SplitMix64
from .selection import Descriptor, Signature, compute_signatures, hamming_matrix

HALF = PATCH_SIZE // 2
MIN_IMAGE_SIDE = PATCH_SIZE + 7
DEFAULT_FAST_THRESHOLD = 20
DEFAULT_MAX_KEYPOINTS = 75
ARC = 9

# Bresenham circle of radius 3, clockwise from 12 o'clock, as (dx, dy)
CIRCLE = [(0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
          (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3)]


class ManifestError(Exception):
    pass


@dataclass(frozen=True)
class Keypoint:
    x: int
    y: int
    score: float


def _segment_scores(img: np.ndarray, threshold: int) -> np.ndarray:
    """FAST-9 score for every pixel (0 where the segment test fails)."""
    h, w = img.shape
    centre = img[3:h - 3, 3:w - 3]
    ring = np.stack([img[3 + dy:h - 3 + dy, 3 + dx:w - 3 + dx] for dx, dy in CIRCLE])
    diff = ring - centre[None]
    scores = np.zeros(centre.shape, dtype=np.float64)
    for polarity in (1, -1):
        ok = polarity * diff > threshold
        gain = np.where(ok, np.abs(diff) - threshold, 0).astype(np.float64)
        ok_ext = np.concatenate([ok, ok[:15]])
        gain_ext = np.concatenate([gain, gain[:15]])
        run = np.zeros(centre.shape, dtype=bool)
        for start in range(16):
            run |= ok_ext[start:start + ARC].all(axis=0)
        if not run.any():
            continue
        # every term on a qualifying arc is positive, so the best window is the whole arc
        best = np.zeros(centre.shape, dtype=np.float64)
        for length in range(ARC, 17):
            for start in range(16):
                window = ok_ext[start:start + length].all(axis=0)
                if window.any():
                    total = gain_ext[start:start + length].sum(axis=0)
                    best = np.where(window & (total > best), total, best)
        scores = np.where(run, np.maximum(scores, best), scores)
    out = np.zeros((h, w), dtype=np.float64)
    out[3:h - 3, 3:w - 3] = scores
    return out


def detect_fast(image: np.ndarray, intensity_threshold: int = DEFAULT_FAST_THRESHOLD,
                max_keypoints: int = DEFAULT_MAX_KEYPOINTS) -> list[Keypoint]:
    """FAST-9 corners with 3x3 non-maximum suppression, strongest first.

    Corners closer than 32 pixels to a border cannot host a 64x64 patch and
    are dropped before ranking.  Equal scores rank by (y, x).
    """
    img = np.asarray(image)
    if img.ndim != 2 or min(img.shape) < MIN_IMAGE_SIDE:
        raise ValueError(f"image must be 2-D and at least {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}")
    img = img.astype(np.int32)
    score = _segment_scores(img, intensity_threshold)
    padded = np.pad(score, 1)
    h, w = score.shape
    neighbourhood = np.stack([padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
                              for dy in (-1, 0, 1) for dx in (-1, 0, 1)])
    peak = (score > 0) & (score >= neighbourhood.max(axis=0))
    peak[:HALF, :] = False
    peak[h - HALF + 1:, :] = False
    peak[:, :HALF] = False
    peak[:, w - HALF + 1:] = False
    ys, xs = np.nonzero(peak)
    vals = score[ys, xs]
    order = np.lexsort((xs, ys, -vals))[:max_keypoints]
    return [Keypoint(int(xs[i]), int(ys[i]), float(vals[i])) for i in order]


def extract_patch(image: np.ndarray, kp: Keypoint) -> np.ndarray:
    """The 64x64 crop covering columns ``x-32 .. x+31`` and rows ``y-32 .. y+31``."""
    return np.asarray(image)[kp.y - HALF:kp.y + HALF, kp.x - HALF:kp.x + HALF]


@dataclass(frozen=True, eq=False)
class ImageIndex:
    """Signatures per image; image ids are positions in ``names``."""

    names: list[str]
    groups: list[str]
    signatures: list[np.ndarray]  # each (num_keypoints, bytes) uint8
    b: int

    def __len__(self) -> int:
        return len(self.names)


def image_signatures(image: np.ndarray, descriptor: Descriptor, pool: BitPool,
                     fast_threshold: int = DEFAULT_FAST_THRESHOLD,
                     max_keypoints: int = DEFAULT_MAX_KEYPOINTS) -> np.ndarray:
    keypoints = detect_fast(image, fast_threshold, max_keypoints)
    nbytes = (descriptor.b + 7) // 8
    if not keypoints:
        return np.zeros((0, nbytes), dtype=np.uint8)
    patches = np.stack([extract_patch(image, kp) for kp in keypoints])
    return compute_signatures(descriptor, pool, patches)


def index_images(images: Sequence[np.ndarray], groups: Sequence[str], descriptor: Descriptor,
                 pool: BitPool, fast_threshold: int = DEFAULT_FAST_THRESHOLD,
                 max_keypoints: int = DEFAULT_MAX_KEYPOINTS, names: Sequence[str] | None = None,
                 threads: int = 1) -> ImageIndex:
    if len(images) != len(groups):
        raise ValueError("need one group label per image")
    descriptor.check_pool(pool)

    def work(img):
        return image_signatures(img, descriptor, pool, fast_threshold, max_keypoints)

    if threads > 1 and len(images) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            sigs = list(ex.map(work, images))
    else:
        sigs = [work(img) for img in images]
    if names is None:
        names = [str(i) for i in range(len(images))]
    return ImageIndex(list(names), [str(g) for g in groups], sigs, descriptor.b)


# -- matching ----------------------------------------------------------------

def _as_packed(sigs) -> np.ndarray:
    if isinstance(sigs, np.ndarray):
        return sigs.astype(np.uint8, copy=False).reshape(len(sigs), -1)
    sigs = list(sigs)
    if not sigs:
        return np.zeros((0, 0), dtype=np.uint8)
    lengths = {s.length for s in sigs}
    if len(lengths) != 1:
        raise ValueError("signature lengths differ")
    return np.frombuffer(b"".join(s.bits for s in sigs), dtype=np.uint8).reshape(len(sigs), -1)


def matched_distances(a, b, threshold: int | None = None) -> np.ndarray:
    """Distances of the greedy one-to-one matches, in the order they are made.

    Candidate pairs are visited by ascending distance and a pair is taken
    when neither side is already claimed.  Ties are ordered by the content
    of the two signatures, not by which list they sit in, so swapping the
    arguments yields the same count.
    """
    if isinstance(a, list) and isinstance(b, list) and a and b and a[0].length != b[0].length:
        raise ValueError("signature lengths differ")
    pa, pb = _as_packed(a), _as_packed(b)
    if len(pa) == 0 or len(pb) == 0:
        return np.zeros(0, dtype=np.int64)
    if pa.shape[1] != pb.shape[1]:
        raise ValueError("signature lengths differ")
    dist = hamming_matrix(pa, pb)
    _, content = np.unique(np.concatenate([pa, pb]), axis=0, return_inverse=True)
    content = content.reshape(-1)
    ca, cb = content[: len(pa)], content[len(pa):]
    ii, jj = np.nonzero(dist <= (threshold if threshold is not None else dist.max()))
    d = dist[ii, jj]
    lo = np.minimum(ca[ii], cb[jj])
    hi = np.maximum(ca[ii], cb[jj])
    order = np.lexsort((jj, ii, hi, lo, d))
    used_a = np.zeros(len(pa), dtype=bool)
    used_b = np.zeros(len(pb), dtype=bool)
    out = []
    limit = min(len(pa), len(pb))
    for i, j, dd in zip(ii[order].tolist(), jj[order].tolist(), d[order].tolist()):
        if used_a[i] or used_b[j]:
            continue
        used_a[i] = used_b[j] = True
        out.append(dd)
        if len(out) == limit:
            break
    return np.array(out, dtype=np.int64)


def match_count(a, b, hamming_threshold: int) -> int:
    return len(matched_distances(a, b, hamming_threshold))


def match_count_table(index: ImageIndex) -> np.ndarray:
    """``C[i, j, t]``: matches between images i and j at threshold t, for t = 0..b."""
    n = len(index)
    table = np.zeros((n, n, index.b + 1), dtype=np.int64)
    for i in range(n):
        for j in range(i + 1, n):
            hist = np.bincount(matched_distances(index.signatures[i], index.signatures[j]),
                               minlength=index.b + 1)
            table[i, j] = table[j, i] = np.cumsum(hist)
    return table


def _ranking(counts: np.ndarray, query: int, k: int) -> list[int]:
    others = np.array([j for j in range(len(counts)) if j != query], dtype=np.int64)
    order = np.lexsort((others, -counts[others]))
    return others[order][:k].tolist()


def retrieve(query_id: int, index: ImageIndex, k: int, hamming_threshold: int,
             counts: np.ndarray | None = None) -> list[int]:
    """Top ``k`` other images by match count; ties go to the smaller image id."""
    if not 0 <= query_id < len(index):
        raise IndexError(f"query {query_id} not in index")
    if k < 1:
        raise ValueError("k must be >= 1")
    if counts is None:
        row = np.array([0 if j == query_id else
                        match_count(index.signatures[query_id], index.signatures[j], hamming_threshold)
                        for j in range(len(index))])
    else:
        row = counts[query_id, :, hamming_threshold]
    return _ranking(row, query_id, k)


def precision_at_k(index: ImageIndex, k: int, hamming_threshold: int,
                   counts: np.ndarray | None = None) -> float:
    """Mean over queries of (co-group images among the top k) / k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if counts is None:
        counts = match_count_table(index)
    hits = []
    for q in range(len(index)):
        top = retrieve(q, index, k, hamming_threshold, counts)
        hits.append(sum(index.groups[j] == index.groups[q] for j in top) / k)
    return float(np.mean(hits))


def tune_threshold(index: ImageIndex, k: int, counts: np.ndarray | None = None) -> tuple[int, float]:
    """Threshold in 0..b maximising precision@k (smallest on ties) and that precision."""
    if len(index) == 0:
        raise ValueError("index is empty")
    if counts is None:
        counts = match_count_table(index)
    best_t, best_p = 0, -1.0
    for t in range(index.b + 1):
        p = precision_at_k(index, k, t, counts)
        if p > best_p:
            best_t, best_p = t, p
    return best_t, best_p


# -- files -------------------------------------------------------------------

def read_manifest(path) -> list[tuple[Path, str]]:
    """``path group_id`` per line; relative paths resolve against the manifest's folder."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except FileNotFoundError:
        raise ManifestError(f"missing manifest: {path}") from None
    out = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        fields = line.rsplit(None, 1)
        if len(fields) != 2:
            raise ManifestError(f"{path}:{lineno}: expected 'path group_id'")
        img = Path(fields[0])
        out.append((img if img.is_absolute() else path.parent / img, fields[1]))
    return out


def load_image(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("L"), dtype=np.uint8)
    except FileNotFoundError:
        raise ManifestError(f"missing image: {path}") from None


def format_results(index: ImageIndex, k: int, threshold: int, counts: np.ndarray) -> list[str]:
    lines = ["query_id,rank,retrieved_id,match_count"]
    for q in range(len(index)):
        for rank, j in enumerate(retrieve(q, index, k, threshold, counts), start=1):
            lines.append(f"{q},{rank},{j},{int(counts[q, j, threshold])}")
    return lines


def summary_line(k: int, precision: float, threshold: int) -> str:
    return f"precision_at_k,{k},{precision!r},threshold,{threshold}"


def generate_synthetic_images(seed: int, num_groups: int = 10, per_group: int = 4,
                              size: int = 160, noise: int = 6,
                              rectangles: int = 12) -> tuple[list[np.ndarray], list[str]]:
    """Blocky scenes, one per group, each copied ``per_group`` times with additive noise.

    Noise is uniform on ``[-noise, noise]``; keep it well under the FAST
    threshold so copies share their corners.
    """
    if num_groups < 1 or per_group < 1:
        raise ValueError("need at least one group with one image")
    if size < MIN_IMAGE_SIDE:
        raise ValueError(f"size must be >= {MIN_IMAGE_SIDE}")
    rng = SplitMix64(seed)
    images, groups = [], []
    for g in range(num_groups):
        base = np.full((size, size), rng.below(256), dtype=np.int32)
        for _ in range(rectangles):
            x0, y0 = rng.below(size - 8), rng.below(size - 8)
            w, h = 8 + rng.below(size // 3), 8 + rng.below(size // 3)
            base[y0:y0 + h, x0:x0 + w] = rng.below(256)
        for _ in range(per_group):
            jitter = rng.below_array(2 * noise + 1, size * size).reshape(size, size) - noise
            images.append(np.clip(base + jitter, 0, 255).astype(np.uint8))
            groups.append(str(g))
    return images, groups
