"""Patch-pair datasets: the Brown benchmark layout and synthetic stand-ins."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .rng import SplitMix64

PATCH_SIZE = 64
PATCH_BYTES = PATCH_SIZE * PATCH_SIZE
MOSAIC_SIZE = 1024
TILES_PER_ROW = MOSAIC_SIZE // PATCH_SIZE
PATCHES_PER_MOSAIC = TILES_PER_ROW * TILES_PER_ROW

MATCH = 1
NONMATCH = 0


class DatasetError(Exception):
    """Base class for dataset problems."""


class DatasetLoadError(DatasetError):
    """A required file is missing or unreadable."""


class DatasetFormatError(DatasetError):
    """A file exists but its contents violate the expected layout."""


@dataclass(frozen=True, eq=False)
class PairSet:
    """Labelled patch pairs.

    ``patches`` is a ``(P, 64, 64)`` uint8 array, ``pairs`` a ``(K, 2)`` array
    of indices into it and ``labels`` a length-``K`` array holding ``MATCH``
    (1) or ``NONMATCH`` (0).  ``patch_ids`` maps each local patch back to its
    index in the source collection (identity for synthetic sets).
    """

    patches: np.ndarray
    pairs: np.ndarray
    labels: np.ndarray
    name: str = "pairs"
    patch_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        patches = np.ascontiguousarray(self.patches, dtype=np.uint8)
        if patches.ndim != 3 or patches.shape[1:] != (PATCH_SIZE, PATCH_SIZE):
            raise ValueError(f"patches must have shape (P, 64, 64), got {patches.shape}")
        pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        labels = np.asarray(self.labels, dtype=np.uint8).reshape(-1)
        if len(pairs) != len(labels):
            raise ValueError("pairs and labels differ in length")
        if len(pairs) and (pairs.min() < 0 or pairs.max() >= len(patches)):
            raise ValueError("pair index out of range")
        if len(labels) and labels.max() > 1:
            raise ValueError("labels must be 0 (non-match) or 1 (match)")
        ids = self.patch_ids
        ids = np.arange(len(patches), dtype=np.int64) if ids is None else np.asarray(ids, dtype=np.int64)
        for arr in (patches, pairs, labels, ids):
            arr.flags.writeable = False
        object.__setattr__(self, "patches", patches)
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "patch_ids", ids)

    @property
    def num_patches(self) -> int:
        return len(self.patches)

    @property
    def num_pairs(self) -> int:
        return len(self.pairs)

    @property
    def num_matches(self) -> int:
        return int(self.labels.sum())

    def require_both_classes(self):
        m = self.num_matches
        if m == 0 or m == self.num_pairs:
            raise ValueError(f"pair set {self.name!r} needs at least one match and one non-match pair")

    def same_as(self, other: "PairSet") -> bool:
        return (
            self.name == other.name
            and np.array_equal(self.patches, other.patches)
            and np.array_equal(self.pairs, other.pairs)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.patch_ids, other.patch_ids)
        )


def _read_mosaic(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im)
    except FileNotFoundError:
        raise DatasetLoadError(f"missing mosaic file: {path}") from None
    except OSError as exc:
        raise DatasetFormatError(f"cannot decode mosaic {path}: {exc}") from None
    if arr.ndim == 3:
        # some encoders write grey mosaics as RGB(A) with equal channels
        arr = arr[..., 0]
    if arr.shape != (MOSAIC_SIZE, MOSAIC_SIZE):
        raise DatasetFormatError(f"mosaic {path} has shape {arr.shape}, expected 1024x1024")
    return arr.astype(np.uint8, copy=False)


def mosaic_tiles(mosaic: np.ndarray) -> np.ndarray:
    """Split a 1024x1024 mosaic into 256 patches, row-major."""
    return (
        mosaic.reshape(TILES_PER_ROW, PATCH_SIZE, TILES_PER_ROW, PATCH_SIZE)
        .swapaxes(1, 2)
        .reshape(PATCHES_PER_MOSAIC, PATCH_SIZE, PATCH_SIZE)
    )


def tile_mosaic(patches: np.ndarray) -> np.ndarray:
    """Inverse of :func:`mosaic_tiles`; pads with zero patches up to 256."""
    full = np.zeros((PATCHES_PER_MOSAIC, PATCH_SIZE, PATCH_SIZE), dtype=np.uint8)
    full[: len(patches)] = patches
    return (
        full.reshape(TILES_PER_ROW, TILES_PER_ROW, PATCH_SIZE, PATCH_SIZE)
        .swapaxes(1, 2)
        .reshape(MOSAIC_SIZE, MOSAIC_SIZE)
    )


def parse_pair_file(path: Path) -> tuple[np.ndarray, np.ndarray]:
    """Parse a Brown ``m50_*`` match file into ``(pairs, labels)``."""
    try:
        text = Path(path).read_text()
    except FileNotFoundError:
        raise DatasetLoadError(f"missing pair file: {path}") from None
    pairs = []
    labels = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != 7:
            raise DatasetFormatError(f"{path}:{lineno}: expected 7 integers, got {len(fields)} fields")
        try:
            pid1, pt1, _, pid2, pt2, _, _ = (int(f) for f in fields)
        except ValueError:
            raise DatasetFormatError(f"{path}:{lineno}: non-integer field") from None
        pairs.append((pid1, pid2))
        labels.append(MATCH if pt1 == pt2 else NONMATCH)
    return np.array(pairs, dtype=np.int64).reshape(-1, 2), np.array(labels, dtype=np.uint8)


def load_brown_subset(root_path, pair_file: str) -> PairSet:
    """Load the pairs listed in ``pair_file`` from a Brown subset directory.

    Only the patches referenced by the pairs are decoded and kept, in
    ascending order of their global index; ``patch_ids`` records those
    global indices.
    """
    root = Path(root_path)
    info = root / "info.txt"
    try:
        num_patches = sum(1 for line in info.read_text().splitlines() if line.strip())
    except FileNotFoundError:
        raise DatasetLoadError(f"missing file: {info}") from None
    global_pairs, labels = parse_pair_file(root / pair_file)

    ids = np.unique(global_pairs)
    if len(ids) and (ids[0] < 0 or ids[-1] >= num_patches):
        bad = ids[-1] if ids[-1] >= num_patches else ids[0]
        raise DatasetFormatError(f"patch index {bad} outside the {num_patches} patches listed in {info}")
    patches = np.empty((len(ids), PATCH_SIZE, PATCH_SIZE), dtype=np.uint8)
    mosaic_no = ids // PATCHES_PER_MOSAIC
    for m in np.unique(mosaic_no):
        path = root / f"patches{int(m):04d}.bmp"
        if not path.exists():
            raise DatasetFormatError(f"patch index beyond available mosaics: {path} not found")
        tiles = mosaic_tiles(_read_mosaic(path))
        sel = np.nonzero(mosaic_no == m)[0]
        patches[sel] = tiles[ids[sel] % PATCHES_PER_MOSAIC]
    local = np.searchsorted(ids, global_pairs)
    name = f"{root.name}/{pair_file}"
    return PairSet(patches=patches, pairs=local, labels=labels, name=name, patch_ids=ids)


def generate_synthetic_pairset(seed: int, num_classes: int, patches_per_class: int,
                               noise_level: float, name: str | None = None) -> PairSet:
    """Noisy copies of random base patches, with all within-class pairs as matches.

    Each class member is its class's base patch with every pixel replaced,
    with probability ``noise_level``, by a fresh uniform byte.  An equal
    number of non-matching pairs joins random patches from different classes.
    """
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2 to form non-matching pairs")
    if patches_per_class < 2:
        raise ValueError("patches_per_class must be >= 2 to form matching pairs")
    if not 0.0 <= noise_level <= 1.0:
        raise ValueError("noise_level must lie in [0, 1]")
    rng = SplitMix64(seed)
    total = num_classes * patches_per_class
    patches = np.empty((total, PATCH_BYTES), dtype=np.uint8)
    for c in range(num_classes):
        base = rng.below_array(256, PATCH_BYTES).astype(np.uint8)
        for m in range(patches_per_class):
            resample = rng.uniform_array(PATCH_BYTES) < noise_level
            fresh = rng.below_array(256, PATCH_BYTES).astype(np.uint8)
            patches[c * patches_per_class + m] = np.where(resample, fresh, base)

    pairs = []
    for c in range(num_classes):
        start = c * patches_per_class
        for i in range(patches_per_class):
            for j in range(i + 1, patches_per_class):
                pairs.append((start + i, start + j))
    num_match = len(pairs)
    while len(pairs) < 2 * num_match:
        a, b = rng.below(total), rng.below(total)
        if a // patches_per_class != b // patches_per_class:
            pairs.append((a, b))
    labels = [MATCH] * num_match + [NONMATCH] * num_match
    if name is None:
        name = f"synth-s{seed}-c{num_classes}x{patches_per_class}-n{noise_level:g}"
    return PairSet(patches=patches.reshape(total, PATCH_SIZE, PATCH_SIZE), pairs=pairs,
                   labels=labels, name=name)


def write_pairset(pairset: PairSet, path) -> None:
    """Write the ``PAIRSET v1`` container: header, raw patch bytes, pair lines."""
    with open(path, "wb") as fh:
        fh.write(f"PAIRSET v1 {pairset.num_patches} {pairset.num_pairs}\n".encode())
        fh.write(pairset.patches.tobytes())
        for (a, b), lab in zip(pairset.pairs.tolist(), pairset.labels.tolist()):
            fh.write(f"{a} {b} {lab}\n".encode())


def read_pairset(path, name: str | None = None) -> PairSet:
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError:
        raise DatasetLoadError(f"missing pair set file: {path}") from None
    nl = data.find(b"\n")
    header = data[:nl].decode("ascii", errors="replace").split()
    if nl < 0 or len(header) != 4 or header[:2] != ["PAIRSET", "v1"]:
        raise DatasetFormatError(f"{path}: bad PAIRSET header")
    try:
        num_patches, num_pairs = int(header[2]), int(header[3])
    except ValueError:
        raise DatasetFormatError(f"{path}: bad PAIRSET header") from None
    start = nl + 1
    end = start + num_patches * PATCH_BYTES
    if len(data) < end:
        raise DatasetFormatError(f"{path}: truncated patch data")
    patches = np.frombuffer(data[start:end], dtype=np.uint8).reshape(num_patches, PATCH_SIZE, PATCH_SIZE)
    lines = data[end:].decode("ascii").splitlines()
    if len(lines) != num_pairs:
        raise DatasetFormatError(f"{path}: header promises {num_pairs} pairs, found {len(lines)}")
    pairs = np.empty((num_pairs, 2), dtype=np.int64)
    labels = np.empty(num_pairs, dtype=np.uint8)
    for k, line in enumerate(lines):
        fields = line.split()
        if len(fields) != 3 or fields[2] not in ("0", "1"):
            raise DatasetFormatError(f"{path}: malformed pair line {k + 1}: {line!r}")
        try:
            pairs[k] = int(fields[0]), int(fields[1])
        except ValueError:
            raise DatasetFormatError(f"{path}: malformed pair line {k + 1}: {line!r}") from None
        labels[k] = int(fields[2])
    if num_pairs and (pairs.min() < 0 or pairs.max() >= num_patches):
        raise DatasetFormatError(f"{path}: pair index out of range")
    return PairSet(patches=patches, pairs=pairs, labels=labels, name=name or path.stem)


def load_pairset(source, pair_file: str | None = None) -> PairSet:
    """Open either a ``PAIRSET v1`` file or a Brown subset directory."""
    if os.path.isdir(source):
        if not pair_file:
            raise DatasetLoadError(f"{source} is a Brown directory; a pair file name is required")
        return load_brown_subset(source, pair_file)
    return read_pairset(source)
