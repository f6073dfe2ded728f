"""Symbolic space, cylinder sets and affine iterated function systems.

Words are plain tuples of symbols in ``1..m``; the empty tuple is the empty
word.  A set ``E`` in the shift space is stored as a finite antichain of words
whose cylinders cover it.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

Word = tuple


class IfsError(ValueError):
    """Raised for matrices that do not form a contracting invertible IFS."""


def parse_word(text: str) -> Word:
    """``"1212"`` -> ``(1, 2, 1, 2)``; the empty string is the empty word."""
    text = text.strip()
    if not text:
        return ()
    if not text.isdigit():
        raise ValueError(f"not a digit word: {text!r}")
    return tuple(int(ch) for ch in text)


def format_word(word: Sequence[int]) -> str:
    if any(not 1 <= k <= 9 for k in word):
        raise ValueError("digit-string serialization needs symbols in 1..9")
    return "".join(str(k) for k in word)


class Prefix(NamedTuple):
    word: Word
    diagonal: bool


def common_prefix(x: Sequence[int], y: Sequence[int]) -> Prefix:
    """Longest common initial segment of two words.

    ``diagonal`` is set when the words are equal, which for the kernels means
    the pair ``x = y`` rather than two distinct sequences sharing a prefix.
    """
    x, y = tuple(x), tuple(y)
    n = 0
    for a, b in zip(x, y):
        if a != b:
            break
        n += 1
    return Prefix(x[:n], x == y)


@dataclass(frozen=True, eq=False)
class AffineIfs:
    """Linear parts ``T_1..T_m`` of an affine IFS (translations kept apart).

    Products ``T_I`` and their singular values are memoised per word.
    """

    matrices: np.ndarray
    norms: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def m(self) -> int:
        return self.matrices.shape[0]

    @property
    def d(self) -> int:
        return self.matrices.shape[1]

    @property
    def alpha_plus(self) -> float:
        return float(self.norms.max())

    @property
    def strict_half(self) -> bool:
        return bool(self.norms.max() < 0.5)

    @property
    def pairwise_norm_condition(self) -> bool:
        # max_{i != j} (||T_i|| + ||T_j||) < 1; exposed only as a flag
        n = np.sort(self.norms)[::-1]
        return bool(n[0] + n[1] < 1.0)

    def product(self, word: Sequence[int]) -> np.ndarray:
        word = tuple(word)
        hit = self._cache.get(("T", word))
        if hit is not None:
            return hit
        if not word:
            out = np.eye(self.d)
        else:
            out = self.product(word[:-1]) @ self.matrices[word[-1] - 1]
        self._cache[("T", word)] = out
        return out

    def to_dict(self) -> dict:
        return {"d": self.d, "matrices": [t.tolist() for t in self.matrices]}

    @classmethod
    def from_dict(cls, data: dict) -> "AffineIfs":
        ifs = validate_ifs(data["matrices"])
        if "d" in data and int(data["d"]) != ifs.d:
            raise IfsError(f"declared d={data['d']} but matrices are {ifs.d}x{ifs.d}")
        return ifs


def validate_ifs(matrices) -> AffineIfs:
    """Check contraction and invertibility and build an :class:`AffineIfs`."""
    mats = [np.atleast_2d(np.asarray(t, dtype=float)) for t in matrices]
    if not mats:
        raise IfsError("no matrices given")
    d = mats[0].shape[0]
    if d == 0:
        raise IfsError("dimension d must be at least 1")
    for t in mats:
        if t.shape != (d, d):
            raise IfsError(f"expected {d}x{d} matrices, got {t.shape}")
        if not np.all(np.isfinite(t)):
            raise IfsError("matrix entries must be finite")
    arr = np.stack(mats)
    sv = np.linalg.svd(arr, compute_uv=False)
    norms = sv[:, 0]
    for j, (t, s) in enumerate(zip(arr, sv)):
        if s[-1] <= 1e-14 * max(1.0, s[0]) or np.linalg.det(t) == 0.0:
            raise IfsError(f"T_{j + 1} is not invertible")
        if s[0] >= 1.0:
            raise IfsError(f"T_{j + 1} has norm {s[0]:.6g} >= 1")
    return AffineIfs(arr, norms)


def singular_values(ifs: AffineIfs, word: Sequence[int]) -> np.ndarray:
    """Singular values of ``T_word`` in non-increasing order."""
    word = tuple(word)
    key = ("sv", word)
    hit = ifs._cache.get(key)
    if hit is None:
        hit = np.linalg.svd(ifs.product(word), compute_uv=False)
        ifs._cache[key] = hit
    return hit


@dataclass(frozen=True)
class SymbolicSet:
    """Finite antichain of words; the union of their cylinders."""

    words: tuple

    def __post_init__(self):
        words = tuple(tuple(int(k) for k in w) for w in self.words)
        if not words:
            raise ValueError("a symbolic set needs at least one word")
        if len(set(words)) != len(words):
            raise ValueError("duplicate words")
        ordered = sorted(words)
        # in lexicographic order a prefix sorts immediately before some extension of it
        for a, b in zip(ordered, ordered[1:]):
            if b[: len(a)] == a:
                raise ValueError(f"{a} is a prefix of {b}: not an antichain")
        object.__setattr__(self, "words", tuple(ordered))

    @classmethod
    def full_shift(cls) -> "SymbolicSet":
        return cls(((),))

    def __len__(self):
        return len(self.words)

    def __iter__(self):
        return iter(self.words)

    def check_alphabet(self, m: int) -> None:
        for w in self.words:
            if any(not 1 <= k <= m for k in w):
                raise ValueError(f"word {w} uses symbols outside 1..{m}")

    def to_json(self) -> str:
        return json.dumps([format_word(w) for w in self.words])

    @classmethod
    def from_json(cls, text: str) -> "SymbolicSet":
        return cls(tuple(parse_word(s) for s in json.loads(text)))


@dataclass(frozen=True)
class SymbolicPoints:
    """Finitely many eventually periodic sequences ``word + tail tail ...``.

    Unlike :class:`SymbolicSet` this is a finite set of points of the shift
    space; refining it gives one leaf word per point.
    """

    points: tuple

    def __post_init__(self):
        pts = tuple((tuple(int(k) for k in w), tuple(int(k) for k in t)) for w, t in self.points)
        if not pts:
            raise ValueError("need at least one point")
        if any(not t for _, t in pts):
            raise ValueError("every point needs a non-empty periodic tail")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    def check_alphabet(self, m: int) -> None:
        for w, t in self.points:
            if any(not 1 <= k <= m for k in w + t):
                raise ValueError(f"point {w}|{t} uses symbols outside 1..{m}")

    @classmethod
    def parse(cls, items: Iterable[str]) -> "SymbolicPoints":
        """``"12|1"`` is the sequence ``1 2 1 1 1 ...``."""
        pts = []
        for text in items:
            w, sep, t = text.partition("|")
            if not sep:
                raise ValueError(f"point {text!r} needs a '|tail'")
            pts.append((parse_word(w), parse_word(t)))
        return cls(tuple(pts))

    def prefix(self, i: int, n: int) -> Word:
        w, t = self.points[i]
        if n <= len(w):
            return w[:n]
        k = n - len(w)
        return w + (t * (k // len(t) + 1))[:k]


class CodingPoint(NamedTuple):
    point: np.ndarray
    error_bound: float


def default_coding_depth(ifs: AffineIfs, tol: float = 1e-12) -> int:
    """Smallest ``n`` with ``alpha_plus**n < tol``."""
    return int(math.floor(math.log(tol) / math.log(ifs.alpha_plus))) + 1


def coding_point(ifs: AffineIfs, a, word: Sequence[int], tail: Sequence[int] | None = None,
                 tol: float = 1e-12) -> CodingPoint:
    """Evaluate ``f_{i1} o ... o f_{in}(0)`` for the translations ``a``.

    ``a`` has shape ``(m, d)``.  If ``tail`` is given the word is continued
    by repeating it until ``alpha_plus**n < tol``, which approximates the
    coding map on the eventually periodic sequence ``word + tail tail ...``.
    The returned bound controls the distance to the coding image of every
    infinite sequence in the cylinder of the evaluated word.
    """
    a = np.asarray(a, dtype=float).reshape(ifs.m, ifs.d)
    word = tuple(word)
    if tail:
        n = max(default_coding_depth(ifs, tol), len(word))
        tail = tuple(tail)
        word = word + tail * ((n - len(word)) // len(tail) + 1)
        word = word[:n]
    point = np.zeros(ifs.d)
    lin = np.eye(ifs.d)
    for k in word:
        point = point + lin @ a[k - 1]
        lin = lin @ ifs.matrices[k - 1]
    ap = ifs.alpha_plus
    sup_a = float(np.linalg.norm(a, axis=1).max())
    return CodingPoint(point, ap ** len(word) * sup_a / (1.0 - ap))


def _extend(ifs: AffineIfs, word: Word, done, out: list, cap: int) -> None:
    stack = [word]
    while stack:
        w = stack.pop()
        if done(w):
            out.append(w)
            if len(out) > cap:
                raise OverflowError(f"refinement exceeds {cap} leaves")
            continue
        stack.extend(w + (j,) for j in range(ifs.m, 0, -1))


def refine_to_depth(sset: SymbolicSet | SymbolicPoints, ifs: AffineIfs, *, depth: int | None = None,
                    threshold: float | None = None, leaf_cap: int = 200_000) -> SymbolicSet:
    """Replace every word by its minimal extensions meeting the stop rule.

    Exactly one of ``depth`` (``len(I) >= depth``) or ``threshold``
    (``alpha_1(T_I) <= threshold``) must be given.  The union of cylinders is
    unchanged.  For :class:`SymbolicPoints` each point yields the first
    prefix meeting the rule.
    """
    if (depth is None) == (threshold is None):
        raise ValueError("give exactly one of depth= or threshold=")
    sset.check_alphabet(ifs.m)
    if depth is not None:
        done = lambda w: len(w) >= depth  # noqa: E731
    else:
        if threshold <= 0:
            raise ValueError("threshold must be positive")
        done = lambda w: singular_values(ifs, w)[0] <= threshold  # noqa: E731
    out: list = []
    if isinstance(sset, SymbolicPoints):
        for i in range(len(sset)):
            n = 0
            while not done(sset.prefix(i, n)):
                n += 1
            out.append(sset.prefix(i, n))
        if len(set(out)) != len(out):
            raise ValueError("points coincide")
        return SymbolicSet(tuple(out))
    for w in sset:
        _extend(ifs, w, done, out, leaf_cap)
    return SymbolicSet(tuple(out))


def coding_matrix(ifs: AffineIfs, word: Sequence[int]) -> np.ndarray:
    """Matrix ``M`` with ``coding_point(ifs, a, word).point == M @ a.ravel()``."""
    M = np.zeros((ifs.d, ifs.m * ifs.d))
    lin = np.eye(ifs.d)
    for k in word:
        M[:, (k - 1) * ifs.d:k * ifs.d] += lin
        lin = lin @ ifs.matrices[k - 1]
    return M


def iter_words(m: int, n: int) -> Iterable[Word]:
    """All words of length ``n`` in lexicographic order."""
    if n == 0:
        yield ()
        return
    for w in iter_words(m, n - 1):
        for j in range(1, m + 1):
            yield w + (j,)
