"""Region labels, one-hot class triples and recombination counting.

A region label is a plain int in {0, 1}. Class triples are ordered
(no LVO, left LVO, right LVO).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import NamedTuple

CLASS_NAMES = ("no_lvo", "left", "right")


class ExclusionError(ValueError):
    """A pair or quadruple with LVOs on both sides reached label composition."""


class ClassTriple(NamedTuple):
    no_lvo: int
    left: int
    right: int

    def index(self):
        """Position of the hot component (0 = no LVO, 1 = left, 2 = right)."""
        return (self.no_lvo, self.left, self.right).index(1)

    def swapped(self):
        return ClassTriple(self.no_lvo, self.right, self.left)

    @classmethod
    def from_index(cls, k):
        return cls(*(int(i == k) for i in range(3)))


def _bit(y):
    y = int(y)
    if y not in (0, 1):
        raise ValueError(f"region label must be 0 or 1, got {y}")
    return y


def _triple(left, right):
    return ClassTriple(int(not (left or right)), left, right)


def is_admissible_hemi(y_i, y_j):
    return not (_bit(y_i) and _bit(y_j))


def is_admissible_subvol(yI_i, yI_j, yM_k, yM_l):
    left = _bit(yI_i) or _bit(yM_k)
    right = _bit(yI_j) or _bit(yM_l)
    return not (left and right)


def compose_hemi_labels(y_left, y_right):
    """Class triple of a stack holding hemisphere ``y_left`` left and ``y_right`` right."""
    if not is_admissible_hemi(y_left, y_right):
        raise ExclusionError("two LVO-positive hemispheres cannot be recombined")
    return _triple(_bit(y_left), _bit(y_right))


def compose_subvolume_labels(yI_i, yI_j, yM_k, yM_l):
    """Global, ICA and MCA triples for a stack of left/right ICA and left/right MCA."""
    if not is_admissible_subvol(yI_i, yI_j, yM_k, yM_l):
        raise ExclusionError(
            f"bilateral LVO combination (ICA {yI_i},{yI_j}; MCA {yM_k},{yM_l}) is excluded"
        )
    yI_i, yI_j, yM_k, yM_l = map(_bit, (yI_i, yI_j, yM_k, yM_l))
    glob = _triple(int(yI_i or yM_k), int(yI_j or yM_l))
    return glob, _triple(yI_i, yI_j), _triple(yM_k, yM_l)


@dataclass(frozen=True)
class CohortStats:
    patients: int
    positive_ratio: float

    def __post_init__(self):
        if self.patients < 1:
            raise ValueError("cohort needs at least one patient")
        if not 0.0 <= self.positive_ratio <= 1.0:
            raise ValueError("positive_ratio must lie in [0, 1]")

    @property
    def hemispheres(self):
        return 2 * self.patients


def count_hemi_recombinations(stats):
    """Number of ordered hemisphere stacks, mirrored ones included."""
    r, P = stats.positive_ratio, stats.patients
    return 2 * r * (2 - r) * P**2 + (2 - r) ** 2 * P**2


def count_subvol_recombinations(stats):
    """Number of ordered ICA/MCA quadruples, assuming positives affect both regions."""
    r, P = stats.positive_ratio, stats.patients
    return (2 * r**2 * (2 - r) ** 2 + 4 * r * (2 - r) ** 3 + (2 - r) ** 4) * P**4


DEFAULT_ENUMERATION_CAP = 10**7


def count_admissible_stacks(ica, mca, scheme, cap=DEFAULT_ENUMERATION_CAP):
    """Brute-force count of admissible ordered stacks.

    ``ica`` and ``mca`` hold one label per hemisphere (same indexing).
    Draws are with replacement, so a hemisphere may be paired with itself.
    """
    ica, mca = [_bit(y) for y in ica], [_bit(y) for y in mca]
    if len(ica) != len(mca):
        raise ValueError("ica and mca label lists differ in length")
    n = len(ica)
    total = n**2 if scheme == "hemi" else n**4
    if total > cap:
        raise OverflowError(f"{total} candidate stacks exceed the enumeration cap {cap}")
    if scheme == "hemi":
        hemi = [a or b for a, b in zip(ica, mca)]
        return sum(is_admissible_hemi(hemi[i], hemi[j]) for i, j in itertools.product(range(n), repeat=2))
    if scheme == "subvol":
        return sum(
            is_admissible_subvol(ica[i], ica[j], mca[k], mca[l])
            for i, j, k, l in itertools.product(range(n), repeat=4)
        )
    raise ValueError(f"unknown scheme {scheme!r}")


def enumerate_admissible(patients, positives, scheme, cap=DEFAULT_ENUMERATION_CAP):
    """Enumerate a cohort where each positive patient has ICA and MCA occluded on one side."""
    if not 0 <= positives <= patients:
        raise ValueError("positives must lie in [0, patients]")
    ica, mca = [], []
    for p in range(patients):
        y = int(p < positives)
        # affected side first, healthy side second
        ica += [y, 0]
        mca += [y, 0]
    return count_admissible_stacks(ica, mca, scheme, cap=cap)
