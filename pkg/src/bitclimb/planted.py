"""Planted selection problems with a known set of informative bits.

Pair ``k`` owns patches ``2k`` and ``2k + 1``.  Every bit answers a fair coin
on the first patch.  On the second patch an informative bit flips its answer
exactly for non-matching pairs, except that each pair's outcome is itself
flipped with the bit's noise rate; a noise bit flips with probability 1/2
regardless of the label.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bitgen import DisagreementTable, ResponseMatrix, build_disagreement_table
from .rng import SplitMix64, derive_seed

_MODEL_STREAM = 0x504C414E
_SAMPLE_STREAM = 0x50414952


@dataclass(frozen=True, eq=False)
class PlantedInstance:
    responses: ResponseMatrix
    pairs: np.ndarray
    labels: np.ndarray
    table: DisagreementTable
    informative: np.ndarray
    flip_rates: np.ndarray

    @property
    def num_bits(self) -> int:
        return self.responses.rows


@dataclass(frozen=True)
class PlantedModel:
    """Which pool bits are informative and how noisy each one is."""

    num_bits: int
    informative: np.ndarray
    flip_rates: np.ndarray  # per pool bit; 0.5 for noise bits
    # informative bits in the same group reuse one noise draw with probability ``shared``
    group: np.ndarray | None = None
    shared: float = 0.0

    @classmethod
    def create(cls, seed: int, num_informative: int = 300, num_noise: int = 724,
               flip=0.05, group_size: int = 1, shared: float = 0.0) -> "PlantedModel":
        B = num_informative + num_noise
        rng = SplitMix64(derive_seed(seed, _MODEL_STREAM))
        informative = np.sort(np.array(rng.sample_without_replacement(B, num_informative), dtype=np.int64))
        rates = np.full(B, 0.5)
        flip = np.broadcast_to(np.asarray(flip, dtype=np.float64), (num_informative,))
        rates[informative] = flip
        group = np.full(B, -1, dtype=np.int64)
        group[informative] = np.arange(num_informative) // max(1, group_size)
        return cls(B, informative, rates, group, shared)

    def sample(self, seed: int, num_pairs: int = 2000, match_fraction: float = 0.5) -> PlantedInstance:
        rng = SplitMix64(derive_seed(seed, _SAMPLE_STREAM))
        num_match = int(round(num_pairs * match_fraction))
        labels = np.zeros(num_pairs, dtype=np.uint8)
        labels[:num_match] = 1
        B = self.num_bits
        first = rng.below_array(2, B * num_pairs).reshape(B, num_pairs).astype(bool)
        draws = rng.uniform_array(B * num_pairs).reshape(B, num_pairs)
        if self.shared > 0 and self.group is not None:
            num_groups = int(self.group.max()) + 1
            common = rng.uniform_array(num_groups * num_pairs).reshape(num_groups, num_pairs)
            use = rng.uniform_array(B * num_pairs).reshape(B, num_pairs) < self.shared
            members = self.group >= 0
            draws[members] = np.where(use[members], common[self.group[members]], draws[members])
        noise = draws < self.flip_rates[:, None]
        planted_dis = np.zeros((B, num_pairs), dtype=bool)
        planted_dis[self.informative] = ~labels.astype(bool)
        dis = planted_dis ^ noise
        responses = np.empty((B, 2 * num_pairs), dtype=bool)
        responses[:, 0::2] = first
        responses[:, 1::2] = first ^ dis
        pairs = np.stack([np.arange(0, 2 * num_pairs, 2), np.arange(1, 2 * num_pairs, 2)], axis=1)
        matrix = ResponseMatrix.from_bool(responses)
        table = build_disagreement_table(matrix, pairs)
        return PlantedInstance(matrix, pairs, labels, table, self.informative, self.flip_rates)


def planted_instance(seed: int, num_pairs: int = 2000, num_informative: int = 300,
                     num_noise: int = 724, flip=0.05) -> PlantedInstance:
    """One planted problem; the default shape is 300 informative bits at 5% noise among 1024."""
    model = PlantedModel.create(seed, num_informative, num_noise, flip)
    return model.sample(seed, num_pairs)
