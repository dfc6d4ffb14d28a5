"""Bit selection: AUC hill climbing and the boosting, correlation and random baselines.

All selectors read a :class:`~bitclimb.bitgen.DisagreementTable`, in which
entry ``[p, k]`` is 1 when pool bit ``p`` gives different outputs on the two
patches of pair ``k``.  The Hamming distance of pair ``k`` under a descriptor
is then the sum of that column over the selected bits.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .bitgen import BitPool, DisagreementTable, ResponseMatrix, patch_responses
from .rng import SplitMix64

logger = logging.getLogger(__name__)

_ROW_CHUNK = 64


class DescriptorFormatError(Exception):
    pass


# -- value types -------------------------------------------------------------

@dataclass(frozen=True)
class Descriptor:
    """An ordered choice of ``b`` distinct pool bits."""

    pool_ref: str
    selected: tuple[int, ...]

    def __post_init__(self):
        sel = tuple(int(i) for i in self.selected)
        if len(set(sel)) != len(sel):
            raise ValueError("descriptor indices must be distinct")
        if any(i < 0 for i in sel):
            raise ValueError("descriptor indices must be non-negative")
        object.__setattr__(self, "selected", sel)

    @property
    def b(self) -> int:
        return len(self.selected)

    def check_pool(self, pool: BitPool):
        if self.selected and max(self.selected) >= len(pool):
            raise ValueError(f"descriptor index {max(self.selected)} outside pool of {len(pool)} bits")


@dataclass(frozen=True)
class Signature:
    """``length`` bits packed least-significant-bit first; bit ``k`` in byte ``k // 8``."""

    bits: bytes
    length: int

    def __post_init__(self):
        bits = bytes(self.bits)
        if len(bits) != (self.length + 7) // 8:
            raise ValueError(f"{self.length} bits need {(self.length + 7) // 8} bytes, got {len(bits)}")
        spare = 8 * len(bits) - self.length
        if spare and bits[-1] >> (8 - spare):
            raise ValueError("padding bits of the final byte must be zero")
        object.__setattr__(self, "bits", bits)

    @classmethod
    def from_bits(cls, bits: Sequence[int]) -> "Signature":
        arr = np.asarray(bits, dtype=bool)
        return cls(np.packbits(arr, bitorder="little").tobytes(), len(arr))

    def to_bits(self) -> np.ndarray:
        return np.unpackbits(np.frombuffer(self.bits, dtype=np.uint8), count=self.length,
                             bitorder="little")

    def hex(self) -> str:
        return self.bits.hex()


class TraceEntry(NamedTuple):
    iteration: int
    auc: float
    accepted: bool


# -- AUC and Hamming ---------------------------------------------------------

def _auc_terms(match_hist, nonmatch_hist) -> tuple[int, int]:
    m = np.asarray(match_hist, dtype=np.int64)
    n = np.asarray(nonmatch_hist, dtype=np.int64)
    if m.shape != n.shape:
        raise ValueError("histograms must cover the same distance range")
    total_m, total_n = int(m.sum()), int(n.sum())
    if total_m <= 0 or total_n <= 0:
        raise ValueError("AUC needs at least one match and one non-match")
    farther = total_n - np.cumsum(n)
    twice = 2 * int(np.dot(m, farther)) + int(np.dot(m, n))
    return twice, 2 * total_m * total_n


def auc(match_hist, nonmatch_hist) -> float:
    """Mann-Whitney AUC of distance histograms, ties counted one half.

    A match closer than a non-match scores 1.  Equal to the trapezoidal area
    under the ROC curve obtained by thresholding the distance.
    """
    num, den = _auc_terms(match_hist, nonmatch_hist)
    return num / den


def distance_histograms(distances, labels, b: int) -> tuple[np.ndarray, np.ndarray]:
    d = np.asarray(distances, dtype=np.int64)
    lab = np.asarray(labels).astype(bool)
    return (np.bincount(d[lab], minlength=b + 1), np.bincount(d[~lab], minlength=b + 1))


def _as_words(bits: bytes) -> np.ndarray:
    pad = (-len(bits)) % 8
    return np.frombuffer(bits + b"\0" * pad, dtype=np.uint64)


def hamming(a: Signature, b: Signature) -> int:
    """Number of differing bits, by popcount over 64-bit words."""
    if a.length != b.length:
        raise ValueError(f"signature lengths differ: {a.length} vs {b.length}")
    return int(np.bitwise_count(_as_words(a.bits) ^ _as_words(b.bits)).sum())


def hamming_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise distances between two equal-shape packed signature arrays."""
    return np.bitwise_count(np.bitwise_xor(a, b)).sum(axis=-1, dtype=np.int64)


def hamming_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """All-pairs distances between packed signature arrays ``(n, bytes)`` and ``(m, bytes)``."""
    a = np.asarray(a, dtype=np.uint8)
    b = np.asarray(b, dtype=np.uint8)
    if a.shape[1:] != b.shape[1:]:
        raise ValueError("signature lengths differ")
    return np.bitwise_count(a[:, None, :] ^ b[None, :, :]).sum(axis=-1, dtype=np.int64)


# -- shared checks -----------------------------------------------------------

def _check_problem(table: DisagreementTable, labels, b: int) -> np.ndarray:
    labels = np.asarray(labels).astype(bool)
    if labels.shape != (table.cols,):
        raise ValueError(f"need one label per table column ({table.cols}), got {labels.shape}")
    if b < 1:
        raise ValueError("descriptor length b must be >= 1")
    if b > table.rows:
        raise ValueError(f"cannot select b={b} bits from a pool of {table.rows}")
    if labels.all() or not labels.any():
        raise ValueError("selection needs at least one match and one non-match pair")
    return labels


def pair_distances(table: DisagreementTable, selected: Sequence[int]) -> np.ndarray:
    """From-scratch Hamming distance of every pair under ``selected``."""
    dist = np.zeros(table.cols, dtype=np.int64)
    sel = np.asarray(selected, dtype=np.int64)
    for s in range(0, len(sel), _ROW_CHUNK):
        rows = np.unpackbits(table.packed[sel[s:s + _ROW_CHUNK]], axis=1, count=table.cols,
                             bitorder="little")
        dist += rows.sum(axis=0, dtype=np.int64)
    return dist


# -- hill climbing -----------------------------------------------------------

class PairDistanceState:
    """Per-pair distances and class histograms for the current descriptor.

    A swap touches only the pairs on which the outgoing and incoming bits
    disagree differently, so proposals cost O(pairs) and never re-sum the
    descriptor.
    """

    def __init__(self, table: DisagreementTable, labels: np.ndarray, selected: Sequence[int]):
        self.table = table
        self.labels = np.asarray(labels).astype(bool)
        self.selected = list(selected)
        self.b = len(self.selected)
        self.distances = pair_distances(table, self.selected)
        self.match_hist, self.nonmatch_hist = distance_histograms(self.distances, self.labels, self.b)
        self._num, self._den = _auc_terms(self.match_hist, self.nonmatch_hist)

    @property
    def auc(self) -> float:
        return self._num / self._den

    def propose(self, position: int, new_bit: int):
        """Score replacing ``selected[position]`` with ``new_bit``; nothing is committed."""
        old_bit = self.selected[position]
        delta = self.table.row(new_bit).astype(np.int8) - self.table.row(old_bit).astype(np.int8)
        changed = np.flatnonzero(delta)
        old_d = self.distances[changed]
        new_d = old_d + delta[changed]
        is_match = self.labels[changed]
        size = self.b + 1
        mh = (self.match_hist - np.bincount(old_d[is_match], minlength=size)
              + np.bincount(new_d[is_match], minlength=size))
        nh = (self.nonmatch_hist - np.bincount(old_d[~is_match], minlength=size)
              + np.bincount(new_d[~is_match], minlength=size))
        num, _ = _auc_terms(mh, nh)
        return num, (position, new_bit, changed, new_d, mh, nh)

    def commit(self, proposal) -> None:
        position, new_bit, changed, new_d, mh, nh = proposal
        self.selected[position] = new_bit
        self.distances[changed] = new_d
        self.match_hist, self.nonmatch_hist = mh, nh
        self._num, self._den = _auc_terms(mh, nh)

    def recompute(self) -> np.ndarray:
        """Audit path: distances summed from scratch."""
        return pair_distances(self.table, self.selected)


def select_hill_climb(table: DisagreementTable, labels, b: int, N: int | None = None,
                      seed: int = 0, pool_ref: str = "pool",
                      on_accept: Callable[[int, PairDistanceState], None] | None = None,
                      ) -> tuple[Descriptor, list[TraceEntry]]:
    """Stochastic hill climbing on the training AUC.

    Starts from ``b`` bits drawn uniformly without replacement, then for
    ``N`` iterations (default ``4 * B``) swaps a random selected bit with a
    random unselected one and keeps the swap only if AUC strictly rises.
    The trace holds the initial state (iteration 0) and every proposal.
    """
    labels = _check_problem(table, labels, b)
    B = table.rows
    if N is None:
        N = 4 * B
    if N < 0:
        raise ValueError("iteration count N must be >= 0")
    rng = SplitMix64(seed)
    order = rng.sample_without_replacement(B, B)
    selected, available = order[:b], order[b:]
    state = PairDistanceState(table, labels, selected)
    trace = [TraceEntry(0, state.auc, True)]
    if not available:
        return Descriptor(pool_ref, tuple(state.selected)), trace
    for it in range(1, N + 1):
        pos = rng.below(b)
        slot = rng.below(len(available))
        incoming = available[slot]
        num, proposal = state.propose(pos, incoming)
        accepted = num > state._num
        if accepted:
            available[slot] = state.selected[pos]
            state.commit(proposal)
            if on_accept is not None:
                on_accept(it, state)
        trace.append(TraceEntry(it, num / state._den, accepted))
    logger.debug("hill climb: AUC %.6f -> %.6f over %d iterations", trace[0].auc, state.auc, N)
    return Descriptor(pool_ref, tuple(state.selected)), trace


# -- baselines ---------------------------------------------------------------

def boosting_rounds(table: DisagreementTable, labels, b: int, shrinkage: float = 1.0):
    """Yield ``(bit, error, alpha, weights)`` for each AdaBoost-style round.

    Weak classifier of bit ``p`` on pair ``k``: +1 (predict match) when the
    bit agrees on both patches, -1 otherwise.
    """
    labels = _check_problem(table, labels, b)
    if not 0.0 < shrinkage <= 1.0:
        raise ValueError("shrinkage must lie in (0, 1]")
    dis = table.unpacked().astype(np.float64)
    y = np.where(labels, 1.0, -1.0)
    agree = 1 - dis  # 1 where the bit predicts "match"
    w = np.full(table.cols, 1.0 / table.cols)
    taken = np.zeros(table.rows, dtype=bool)
    for _ in range(b):
        # weighted error = mass of matches the bit separates + non-matches it joins
        err = dis @ (w * labels) + agree @ (w * ~labels)
        err[taken] = np.inf
        p = int(np.argmin(err))
        taken[p] = True
        eps = min(max(float(err[p]), 1e-12), 1 - 1e-12)
        alpha = shrinkage * 0.5 * np.log((1 - eps) / eps)
        h = 2 * agree[p] - 1
        w = w * np.exp(-alpha * y * h)
        w /= w.sum()
        yield p, eps, alpha, w


def select_boosting(table: DisagreementTable, labels, b: int, shrinkage: float = 1.0,
                    pool_ref: str = "pool") -> Descriptor:
    """Sequential reweighting selection without replacement."""
    picks = [p for p, *_ in boosting_rounds(table, labels, b, shrinkage)]
    return Descriptor(pool_ref, tuple(picks))


def single_bit_aucs(table: DisagreementTable, labels) -> np.ndarray:
    """AUC of each pool bit used alone as a 1-bit distance."""
    labels = np.asarray(labels).astype(bool)
    dis = table.unpacked()
    M, Nn = int(labels.sum()), int((~labels).sum())
    m1 = dis[:, labels].sum(axis=1, dtype=np.int64)
    n1 = dis[:, ~labels].sum(axis=1, dtype=np.int64)
    m0, n0 = M - m1, Nn - n1
    return (2 * m0 * n1 + m0 * n0 + m1 * n1) / (2 * M * Nn)


def response_correlations(responses: ResponseMatrix, bit: int) -> np.ndarray:
    """Pearson correlation of one bit's patch responses with every pool bit.

    Computed from integer co-occurrence counts; a zero-variance bit has
    correlation 0 with everything.
    """
    rows = responses.unpacked().astype(np.float64)
    return _correlate(rows, rows.sum(axis=1), bit, responses.cols)


def _correlate(rows: np.ndarray, ones: np.ndarray, bit: int, P: int) -> np.ndarray:
    both = rows @ rows[bit]
    cov = P * both - ones * ones[bit]
    var = ones * (P - ones)
    denom = np.sqrt(var * var[bit])
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.where(denom > 0, cov / denom, 0.0)
    exact = (var > 0) & (var == var[bit]) & (np.abs(cov) == var)
    corr[exact] = np.sign(cov[exact])
    return np.clip(corr, -1.0, 1.0)


def select_correlation(table: DisagreementTable, labels, b: int, tau: float,
                       responses: ResponseMatrix, pool_ref: str = "pool") -> Descriptor:
    """Greedy accurate-and-decorrelated selection.

    Bits are visited by descending single-bit AUC (ties by index) and kept
    while their largest |correlation| with already kept bits stays below
    ``tau``.  Unfilled slots take the best rejected bits in rank order.
    """
    labels = _check_problem(table, labels, b)
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau must lie in (0, 1]")
    if responses.rows != table.rows:
        raise ValueError("response matrix and disagreement table cover different pools")
    scores = single_bit_aucs(table, labels)
    ranked = np.lexsort((np.arange(table.rows), -scores))
    rows = responses.unpacked().astype(np.float64)
    ones = rows.sum(axis=1)
    worst = np.zeros(table.rows)
    chosen, rejected = [], []
    for p in ranked.tolist():
        if len(chosen) == b:
            break
        if worst[p] < tau:
            chosen.append(p)
            np.maximum(worst, np.abs(_correlate(rows, ones, p, responses.cols)), out=worst)
        else:
            rejected.append(p)
    if len(chosen) < b:
        logger.info("correlation selection: tau=%g admitted %d bits, filling %d", tau, len(chosen),
                    b - len(chosen))
        chosen.extend(rejected[: b - len(chosen)])
    return Descriptor(pool_ref, tuple(chosen))


def select_random(B: int, b: int, seed: int, pool_ref: str = "pool") -> Descriptor:
    if not 1 <= b <= B:
        raise ValueError(f"cannot select b={b} bits from a pool of {B}")
    return Descriptor(pool_ref, tuple(SplitMix64(seed).sample_without_replacement(B, b)))


# -- signatures --------------------------------------------------------------

def compute_signatures(descriptor: Descriptor, pool: BitPool, patches: np.ndarray) -> np.ndarray:
    """Packed signatures ``(P, ceil(b / 8))`` for a stack of patches."""
    descriptor.check_pool(pool)
    bits = patch_responses(pool, np.asarray(patches), columns=list(descriptor.selected))
    return np.packbits(bits, axis=1, bitorder="little")


def compute_signature(descriptor: Descriptor, pool: BitPool, patch: np.ndarray) -> Signature:
    packed = compute_signatures(descriptor, pool, np.asarray(patch)[None])
    return Signature(packed[0].tobytes(), descriptor.b)


# -- files -------------------------------------------------------------------

def format_descriptor(descriptor: Descriptor) -> str:
    lines = [f"DESCRIPTOR v1 {descriptor.pool_ref} {descriptor.b}"]
    lines += [str(i) for i in descriptor.selected]
    return "\n".join(lines) + "\n"


def write_descriptor(descriptor: Descriptor, path) -> None:
    if any(ch.isspace() for ch in descriptor.pool_ref):
        raise ValueError("pool reference must not contain whitespace")
    Path(path).write_text(format_descriptor(descriptor))


def read_descriptor(path) -> Descriptor:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except FileNotFoundError:
        raise DescriptorFormatError(f"missing descriptor file: {path}") from None
    head = lines[0].split() if lines else []
    if len(head) != 4 or head[:2] != ["DESCRIPTOR", "v1"]:
        raise DescriptorFormatError(f"{path}: bad DESCRIPTOR header")
    try:
        b = int(head[3])
        selected = [int(x) for x in lines[1:]]
    except ValueError:
        raise DescriptorFormatError(f"{path}: non-integer entry") from None
    if len(selected) != b:
        raise DescriptorFormatError(f"{path}: header promises {b} indices, found {len(selected)}")
    try:
        return Descriptor(head[2], tuple(selected))
    except ValueError as exc:
        raise DescriptorFormatError(f"{path}: {exc}") from None


def write_signatures(packed: np.ndarray, path) -> None:
    """One lowercase hex signature per line, byte 0 first."""
    with open(path, "w") as fh:
        for row in np.asarray(packed, dtype=np.uint8):
            fh.write(row.tobytes().hex() + "\n")


def read_signatures(path, b: int) -> list[Signature]:
    return [Signature(bytes.fromhex(line.strip()), b)
            for line in Path(path).read_text().splitlines() if line.strip()]


def write_trace(trace: Sequence[TraceEntry], path) -> None:
    with open(path, "w") as fh:
        fh.write("iteration,auc,accepted\n")
        for it, value, acc in trace:
            fh.write(f"{it},{value!r},{int(acc)}\n")


def read_trace(path) -> list[TraceEntry]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != "iteration,auc,accepted":
        raise DescriptorFormatError(f"{path}: bad trace header")
    out = []
    for line in lines[1:]:
        it, value, acc = line.split(",")
        out.append(TraceEntry(int(it), float(value), acc == "1"))
    return out
