"""Candidate bits, patch preprocessing and packed response caches.

Two bit families are supported:

* ``brief``: intensity tests ``I(x1, y1) < I(x2, y2)`` on a Gaussian-smoothed
  patch;
* ``lbp``: comparisons ``v[i] > v[j]`` between components of a CS-LBP
  histogram vector extracted from the patch.

Responses are stored packed, one row per bit, least-significant bit first.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from .dataset import PATCH_SIZE
from .rng import SplitMix64

BRIEF = "brief"
LBP = "lbp"

DEFAULT_SIGMA = 2.0
DEFAULT_MARGIN = 2
DEFAULT_BRIEF_POOL = 1024
DEFAULT_LBP_POOL = 4096

_CHUNK = 512


class PoolFormatError(Exception):
    pass


@dataclass(frozen=True)
class IntensityPair:
    x1: int
    y1: int
    x2: int
    y2: int


@dataclass(frozen=True)
class VectorPair:
    i: int
    j: int


BitSpec = Union[IntensityPair, VectorPair]


@dataclass(frozen=True)
class LbpParams:
    """CS-LBP(8,1) histogram settings.

    ``threshold`` applies to intensities scaled to [0, 1]; the patch is cut
    into ``grid`` x ``grid`` cells of 16 bins each, so ``n = 16 * grid**2``.
    """

    threshold: float = 0.01
    grid: int = 4
    clip: float = 0.2
    # vector length for pools over vectors not produced by this extractor
    length: int | None = None

    @property
    def n(self) -> int:
        return self.length if self.length is not None else 16 * self.grid * self.grid

    @classmethod
    def from_n(cls, n: int, threshold: float = 0.01) -> "LbpParams":
        grid = math.isqrt(n // 16)
        if n >= 16 and 16 * grid * grid == n and PATCH_SIZE % grid == 0:
            return cls(threshold=threshold, grid=grid)
        return cls(threshold=threshold, length=n)


@dataclass(frozen=True, eq=False)
class BitPool:
    """``B`` distinct specs of one family plus the preprocessing they assume.

    ``specs`` is an int array: ``(B, 4)`` rows ``x1 y1 x2 y2`` for brief pools,
    ``(B, 2)`` rows ``i j`` for lbp pools.
    """

    kind: str
    specs: np.ndarray
    sigma: float = DEFAULT_SIGMA
    margin: int = DEFAULT_MARGIN
    lbp: LbpParams = field(default_factory=LbpParams)
    name: str = "pool"

    def __post_init__(self):
        width = {BRIEF: 4, LBP: 2}.get(self.kind)
        if width is None:
            raise ValueError(f"unknown pool kind {self.kind!r}")
        specs = np.asarray(self.specs, dtype=np.int64).reshape(-1, width)
        specs.flags.writeable = False
        object.__setattr__(self, "specs", specs)

    def __len__(self) -> int:
        return len(self.specs)

    def spec(self, p: int) -> BitSpec:
        row = self.specs[p].tolist()
        return IntensityPair(*row) if self.kind == BRIEF else VectorPair(*row)

    def same_as(self, other: "BitPool") -> bool:
        return (self.kind == other.kind and np.array_equal(self.specs, other.specs)
                and self.sigma == other.sigma and self.margin == other.margin
                and self.lbp == other.lbp)


# -- preprocessing -----------------------------------------------------------

def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(3 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2 * sigma * sigma))
    return k / k.sum()


def preprocess_patch(patch: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian smoothing with clamped borders; works on a patch or a stack of patches."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    img = np.asarray(patch, dtype=np.float64)
    if sigma == 0:
        return img.copy()
    k = gaussian_kernel(sigma)
    r = len(k) // 2
    h, w = img.shape[-2:]
    pad = [(0, 0)] * (img.ndim - 2) + [(r, r), (r, r)]
    padded = np.pad(img, pad, mode="edge")
    rows = sum(k[t] * padded[..., :, t:t + w] for t in range(len(k)))
    return sum(k[t] * rows[..., t:t + h, :] for t in range(len(k)))


_S = math.sqrt(0.5)
# (dx, dy) of the 8 radius-1 neighbours, counter-clockwise from +x; y grows downwards
_NEIGHBOURS = [(1.0, 0.0), (_S, -_S), (0.0, -1.0), (-_S, -_S),
               (-1.0, 0.0), (-_S, _S), (0.0, 1.0), (_S, _S)]


def _sample_interior(img: np.ndarray, dx: float, dy: float) -> np.ndarray:
    """Bilinear sample at offset (dx, dy) for every pixel at distance >= 1 from the border."""
    h, w = img.shape[-2:]
    x0, y0 = math.floor(dx), math.floor(dy)
    fx, fy = dx - x0, dy - y0

    def shifted(ox, oy):
        return img[..., 1 + oy:h - 1 + oy, 1 + ox:w - 1 + ox]

    out = (1 - fx) * (1 - fy) * shifted(x0, y0)
    if fx:
        out = out + fx * (1 - fy) * shifted(x0 + 1, y0)
    if fy:
        out = out + (1 - fx) * fy * shifted(x0, y0 + 1)
    if fx and fy:
        out = out + fx * fy * shifted(x0 + 1, y0 + 1)
    return out


def cslbp_codes(patches: np.ndarray, threshold: float = 0.01) -> np.ndarray:
    """CS-LBP(8,1) codes (0..15) for the interior pixels of each patch.

    Input ``(..., H, W)``; output ``(..., H-2, W-2)`` uint8.
    """
    img = np.asarray(patches, dtype=np.float64) / 255.0
    samples = [_sample_interior(img, dx, dy) for dx, dy in _NEIGHBOURS]
    codes = np.zeros(samples[0].shape, dtype=np.uint8)
    for k in range(4):
        codes |= ((samples[k] - samples[k + 4]) > threshold).astype(np.uint8) << k
    return codes


def lbp_histograms(patches: np.ndarray, params: LbpParams = LbpParams()) -> np.ndarray:
    """Raw per-cell code counts, shape ``(P, n)``, cell-major and bin-minor."""
    if params.length is not None or PATCH_SIZE % params.grid:
        raise ValueError(f"LBP parameters {params} do not describe a patch histogram")
    patches = np.asarray(patches)
    single = patches.ndim == 2
    if single:
        patches = patches[None]
    codes = cslbp_codes(patches, params.threshold).astype(np.int64)
    num = len(patches)
    cell = PATCH_SIZE // params.grid
    coords = np.arange(1, PATCH_SIZE - 1) // cell
    cell_idx = coords[:, None] * params.grid + coords[None, :]
    flat = (np.arange(num)[:, None, None] * params.n + cell_idx[None] * 16 + codes).ravel()
    hist = np.bincount(flat, minlength=num * params.n).reshape(num, params.n).astype(np.float64)
    return hist[0] if single else hist


def normalize_lbp(hist: np.ndarray, clip: float = 0.2) -> np.ndarray:
    v = np.asarray(hist, dtype=np.float64)
    v = v / np.linalg.norm(v, axis=-1, keepdims=True)
    v = np.minimum(v, clip)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def extract_lbp_vector(patch: np.ndarray, params: LbpParams = LbpParams()) -> np.ndarray:
    """Unit-norm CS-LBP histogram vector of one patch (or a stack, row per patch)."""
    return normalize_lbp(lbp_histograms(patch, params), params.clip)


# -- single-bit evaluation ---------------------------------------------------

def eval_bit(spec: BitSpec, data: np.ndarray) -> int:
    """Evaluate one spec on a preprocessed patch (intensity) or an LBP vector."""
    data = np.asarray(data)
    if isinstance(spec, IntensityPair):
        if data.ndim != 2:
            raise TypeError("intensity-pair bit needs a 2-D preprocessed patch")
        return int(data[spec.y1, spec.x1] < data[spec.y2, spec.x2])
    if isinstance(spec, VectorPair):
        if data.ndim != 1:
            raise TypeError("vector-pair bit needs a 1-D LBP vector")
        return int(data[spec.i] > data[spec.j])
    raise TypeError(f"unknown bit spec {spec!r}")


# -- pool sampling -----------------------------------------------------------

def sample_brief_pool(seed: int, B: int = DEFAULT_BRIEF_POOL, margin: int = DEFAULT_MARGIN,
                      sigma: float = DEFAULT_SIGMA) -> BitPool:
    """``B`` distinct intensity tests with coordinates uniform on ``[margin, 63 - margin]``."""
    if B < 1:
        raise ValueError("pool size B must be >= 1")
    if not 0 <= margin < PATCH_SIZE // 2:
        raise ValueError("margin must lie in [0, 32)")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    side = PATCH_SIZE - 2 * margin
    cells = side * side
    if B > cells * (cells - 1):
        raise ValueError(f"only {cells * (cells - 1)} distinct tests exist for margin {margin}")
    rng = SplitMix64(seed)
    seen = set()
    specs = []
    while len(specs) < B:
        spec = tuple(margin + rng.below(side) for _ in range(4))
        if spec[:2] == spec[2:] or spec in seen:
            continue
        seen.add(spec)
        specs.append(spec)
    return BitPool(kind=BRIEF, specs=specs, sigma=float(sigma), margin=margin,
                   name=f"brief-s{seed}-B{B}")


def sample_lbp_pool(seed: int, B: int = DEFAULT_LBP_POOL, n: int = 256,
                    threshold: float = 0.01) -> BitPool:
    """``B`` distinct ordered component pairs ``(i, j)``, ``i != j``."""
    if B < 1:
        raise ValueError("pool size B must be >= 1")
    if B > n * (n - 1):
        raise ValueError(f"only {n * (n - 1)} distinct pairs exist for n={n}")
    if n < 2:
        raise ValueError("vector length n must be >= 2")
    rng = SplitMix64(seed)
    seen = set()
    specs = []
    while len(specs) < B:
        i, j = rng.below(n), rng.below(n)
        if i == j or (i, j) in seen:
            continue
        seen.add((i, j))
        specs.append((i, j))
    return BitPool(kind=LBP, specs=specs, lbp=LbpParams.from_n(n, threshold),
                   name=f"lbp-s{seed}-B{B}")


# -- response caches ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PackedBits:
    """A ``rows x cols`` bit matrix, each row packed little-endian into bytes."""

    packed: np.ndarray
    cols: int

    @property
    def rows(self) -> int:
        return len(self.packed)

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols

    @classmethod
    def from_bool(cls, bits: np.ndarray) -> "PackedBits":
        bits = np.asarray(bits, dtype=bool)
        return cls(np.packbits(bits, axis=1, bitorder="little"), bits.shape[1])

    def row(self, p: int) -> np.ndarray:
        return np.unpackbits(self.packed[p], count=self.cols, bitorder="little")

    def unpacked(self) -> np.ndarray:
        return np.unpackbits(self.packed, axis=1, count=self.cols, bitorder="little")

    def __getitem__(self, idx) -> int:
        p, q = idx
        return int((self.packed[p, q >> 3] >> (q & 7)) & 1)


class ResponseMatrix(PackedBits):
    """Bit ``p``'s output on patch ``q`` at ``[p, q]``."""


class DisagreementTable(PackedBits):
    """``[p, k]`` is 1 when bit ``p`` differs between the two patches of pair ``k``."""


def pool_features(pool: BitPool, patches: np.ndarray) -> np.ndarray:
    """What the pool's bits read: smoothed patches or LBP vectors."""
    if pool.kind == BRIEF:
        return preprocess_patch(patches, pool.sigma)
    return extract_lbp_vector(patches, pool.lbp)


def responses_from_features(pool: BitPool, feats: np.ndarray, columns=None) -> np.ndarray:
    """Boolean ``(P, len(columns))`` responses for already-preprocessed inputs."""
    specs = pool.specs if columns is None else pool.specs[np.asarray(columns)]
    if pool.kind == BRIEF:
        x1, y1, x2, y2 = specs.T
        return feats[:, y1, x1] < feats[:, y2, x2]
    i, j = specs.T
    return feats[:, i] > feats[:, j]


def patch_responses(pool: BitPool, patches: np.ndarray, columns=None) -> np.ndarray:
    patches = np.asarray(patches)
    if len(patches) == 0:
        width = len(pool) if columns is None else len(columns)
        return np.zeros((0, width), dtype=bool)
    return responses_from_features(pool, pool_features(pool, patches), columns)


def _chunks(n: int, size: int = _CHUNK):
    return [(s, min(n, s + size)) for s in range(0, n, size)]


def build_response_matrix(pool: BitPool, patches: np.ndarray, threads: int = 1) -> ResponseMatrix:
    """Evaluate every pool bit on every patch; patch chunks may run on worker threads."""
    if len(pool) == 0:
        raise ValueError("pool is empty")
    patches = np.asarray(patches)
    if len(patches) == 0:
        return ResponseMatrix(np.zeros((len(pool), 0), dtype=np.uint8), 0)
    spans = _chunks(len(patches))

    def work(span):
        s, e = span
        return patch_responses(pool, patches[s:e])

    if threads > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(work, spans))
    else:
        parts = [work(span) for span in spans]
    bits = np.concatenate(parts, axis=0).T
    return ResponseMatrix(np.packbits(bits, axis=1, bitorder="little"), len(patches))


def build_disagreement_table(matrix: ResponseMatrix, pairs: np.ndarray,
                             threads: int = 1) -> DisagreementTable:
    """XOR of each bit's responses on the two patches of every pair."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) and (pairs.min() < 0 or pairs.max() >= matrix.cols):
        raise IndexError("pair index outside the response matrix")
    if len(pairs) == 0:
        return DisagreementTable(np.zeros((matrix.rows, 0), dtype=np.uint8), 0)
    a, b = pairs[:, 0], pairs[:, 1]
    spans = _chunks(matrix.rows, 64)

    def work(span):
        s, e = span
        bits = np.unpackbits(matrix.packed[s:e], axis=1, count=matrix.cols, bitorder="little")
        return np.packbits(bits[:, a] ^ bits[:, b], axis=1, bitorder="little")

    if threads > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(work, spans))
    else:
        parts = [work(span) for span in spans]
    return DisagreementTable(np.concatenate(parts, axis=0), len(pairs))


# -- pool files --------------------------------------------------------------

def write_pool(pool: BitPool, path) -> None:
    with open(path, "w") as fh:
        fh.write(format_pool(pool))


def format_pool(pool: BitPool) -> str:
    if pool.kind == BRIEF:
        lines = [f"BITPOOL v1 brief {len(pool)} {pool.sigma!r} {pool.margin}"]
        lines += [f"ip {x1} {y1} {x2} {y2}" for x1, y1, x2, y2 in pool.specs.tolist()]
    else:
        lines = [f"BITPOOL v1 lbp {len(pool)} {pool.lbp.n} {pool.lbp.threshold!r}"]
        lines += [f"vp {i} {j}" for i, j in pool.specs.tolist()]
    return "\n".join(lines) + "\n"


def read_pool(path) -> BitPool:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except FileNotFoundError:
        raise PoolFormatError(f"missing pool file: {path}") from None
    if not lines:
        raise PoolFormatError(f"{path}: empty pool file")
    head = lines[0].split()
    if len(head) != 6 or head[:2] != ["BITPOOL", "v1"] or head[2] not in (BRIEF, LBP):
        raise PoolFormatError(f"{path}: bad BITPOOL header {lines[0]!r}")
    kind = head[2]
    try:
        count = int(head[3])
        if kind == BRIEF:
            sigma, margin = float(head[4]), int(head[5])
        else:
            n, threshold = int(head[4]), float(head[5])
    except ValueError:
        raise PoolFormatError(f"{path}: bad BITPOOL header {lines[0]!r}") from None
    tag, width = ("ip", 4) if kind == BRIEF else ("vp", 2)
    body = lines[1:]
    if len(body) != count:
        raise PoolFormatError(f"{path}: header promises {count} specs, found {len(body)}")
    specs = []
    for lineno, line in enumerate(body, start=2):
        fields = line.split()
        if len(fields) != width + 1 or fields[0] != tag:
            raise PoolFormatError(f"{path}:{lineno}: expected '{tag}' with {width} integers")
        try:
            specs.append([int(f) for f in fields[1:]])
        except ValueError:
            raise PoolFormatError(f"{path}:{lineno}: non-integer field") from None
    if len({tuple(s) for s in specs}) != len(specs):
        raise PoolFormatError(f"{path}: duplicate specs")
    if kind == BRIEF:
        arr = np.array(specs, dtype=np.int64).reshape(-1, 4)
        if arr.size and (arr.min() < margin or arr.max() > PATCH_SIZE - 1 - margin):
            raise PoolFormatError(f"{path}: coordinate outside [{margin}, {63 - margin}]")
        return BitPool(kind=BRIEF, specs=arr, sigma=sigma, margin=margin, name=path.name)
    params = LbpParams.from_n(n, threshold)
    arr = np.array(specs, dtype=np.int64).reshape(-1, 2)
    if arr.size and (arr.min() < 0 or arr.max() >= n or np.any(arr[:, 0] == arr[:, 1])):
        raise PoolFormatError(f"{path}: component index outside [0, {n}) or i == j")
    return BitPool(kind=LBP, specs=arr, lbp=params, name=path.name)
