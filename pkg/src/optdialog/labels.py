"""Class vocabulary and tolerant label resolution.

Agent replies rarely quote a class name perfectly, so resolution runs a
three-step ladder: exact normalized match, unique substring containment,
then nearest neighbour by edit distance (with adjacent transpositions
counted as one edit) under a normalized-distance cap.
"""

import re
import string
from dataclasses import dataclass, field
from typing import Iterable

from .errors import AmbiguousLabel, UnknownLabel

# Fraction of the longer string an edit distance may cover and still count
# as the same label.
FUZZY_DISTANCE_CAP = 0.25

_WHITESPACE_RE = re.compile(r"\s+")


def normalize_label(text: str) -> str:
    """Lowercase, trim, collapse inner whitespace, strip trailing punctuation."""
    collapsed = _WHITESPACE_RE.sub(" ", text.strip().lower())
    return collapsed.rstrip(string.punctuation + " ")


def edit_distance(a: str, b: str) -> int:
    """Optimal string alignment distance (edits plus adjacent transpositions)."""
    m, n = len(a), len(b)
    if m == 0 or n == 0:
        return m or n
    prev2: list[int] = []
    prev = list(range(n + 1))
    for i in range(1, m + 1):
        cur = [i] + [0] * n
        for j in range(1, n + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
            if i > 1 and j > 1 and a[i - 1] == b[j - 2] and a[i - 2] == b[j - 1]:
                cur[j] = min(cur[j], prev2[j - 2] + 1)
        prev2, prev = prev, cur
    return prev[n]


@dataclass(frozen=True)
class LabelSpace:
    """Ordered class vocabulary; indices into it identify predictions."""

    classes: tuple[str, ...]
    _normalized: tuple[str, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.classes) < 2:
            raise ValueError(f"a label space needs at least 2 classes, got {len(self.classes)}")
        normalized = tuple(normalize_label(c) for c in self.classes)
        if any(not n for n in normalized):
            raise ValueError("class names must be non-empty")
        if len(set(normalized)) != len(normalized):
            dupes = sorted({n for n in normalized if normalized.count(n) > 1})
            raise ValueError(f"duplicate class names after normalization: {dupes}")
        object.__setattr__(self, "_normalized", normalized)

    @classmethod
    def from_names(cls, names: Iterable[str]) -> "LabelSpace":
        """Build a canonical space: dedupe by normalized form, sort by it."""
        by_norm: dict[str, str] = {}
        for name in names:
            norm = normalize_label(name)
            if norm and norm not in by_norm:
                by_norm[norm] = name.strip()
        return cls(tuple(by_norm[n] for n in sorted(by_norm)))

    def __len__(self) -> int:
        return len(self.classes)

    def name_of(self, index: int) -> str:
        return self.classes[index]

    def exact_index(self, name: str) -> int | None:
        """Index of the exactly matching class after normalization, else None."""
        try:
            return self._normalized.index(normalize_label(name))
        except ValueError:
            return None


def match_label(candidate: str, labels: LabelSpace) -> int:
    """Resolve free text to a class index.

    Raises UnknownLabel when nothing is close enough and AmbiguousLabel when
    two or more classes tie as the nearest admissible match.
    """
    norm = normalize_label(candidate)
    if not norm:
        raise UnknownLabel(candidate, "empty after normalization")
    normalized = labels._normalized

    for i, cls_norm in enumerate(normalized):
        if norm == cls_norm:
            return i

    contained = [i for i, cls_norm in enumerate(normalized) if cls_norm in norm or norm in cls_norm]
    if len(contained) == 1:
        return contained[0]

    admissible: list[tuple[int, int]] = []
    for i, cls_norm in enumerate(normalized):
        dist = edit_distance(norm, cls_norm)
        if dist / max(len(norm), len(cls_norm)) <= FUZZY_DISTANCE_CAP:
            admissible.append((dist, i))
    if not admissible:
        raise UnknownLabel(candidate)
    best = min(dist for dist, _ in admissible)
    tied = [i for dist, i in admissible if dist == best]
    if len(tied) > 1:
        raise AmbiguousLabel(candidate, [labels.classes[i] for i in tied])
    return tied[0]
