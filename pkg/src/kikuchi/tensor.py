"""Random symmetric tensors stored one entry per r-subset.

Entries live in a flat float64 array indexed by the colex rank of the
r-subset. Sampling is keyed by ``(seed, rank)`` through Philox, so any rank
range can be regenerated without drawing the ones before it.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum
from math import comb
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import ndtri

from .combinat import all_subsets, make_subset, rank_subset
from .errors import FormatError, InvalidArgumentError


class Distribution(str, Enum):
    GAUSSIAN = "gaussian"
    RADEMACHER = "rademacher"
    PLANTED_GAUSSIAN = "planted-over-gaussian"
    PLANTED_RADEMACHER = "planted-over-rademacher"

    @property
    def code(self) -> int:
        return _DIST_CODES.index(self)

    @property
    def base(self) -> "Distribution":
        if self is Distribution.PLANTED_GAUSSIAN:
            return Distribution.GAUSSIAN
        if self is Distribution.PLANTED_RADEMACHER:
            return Distribution.RADEMACHER
        return self

    def planted(self) -> "Distribution":
        if self.base is Distribution.GAUSSIAN:
            return Distribution.PLANTED_GAUSSIAN
        return Distribution.PLANTED_RADEMACHER


_DIST_CODES = [
    Distribution.GAUSSIAN,
    Distribution.RADEMACHER,
    Distribution.PLANTED_GAUSSIAN,
    Distribution.PLANTED_RADEMACHER,
]

_NO_SEED = 2**64 - 1


def random_words(seed: int, start: int, count: int) -> np.ndarray:
    """uint64 words ``start .. start+count`` of the Philox stream keyed by ``seed``."""
    bitgen = np.random.Philox(key=seed)
    # one counter step yields four 64-bit words
    bitgen.advance(start // 4)
    skip = start % 4
    words = bitgen.random_raw(count + skip)
    return np.asarray(words[skip:], dtype=np.uint64)


def noise_block(distribution: Distribution | str, seed: int, start: int, count: int) -> np.ndarray:
    """Noise entries for ranks ``start .. start+count`` under ``distribution``."""
    dist = Distribution(distribution).base
    words = random_words(seed, start, count)
    if dist is Distribution.RADEMACHER:
        return np.where(words >> np.uint64(63), 1.0, -1.0)
    # 53-bit uniform on the open interval (0, 1), then the inverse normal CDF
    u = ((words >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u)


@dataclass(frozen=True)
class Spike:
    """Planted rank-one direction ``v`` with strength ``lam``."""

    v: np.ndarray
    lam: float

    def __post_init__(self):
        v = np.asarray(self.v, dtype=np.float64)
        if v.ndim != 1:
            raise InvalidArgumentError("spike vector must be one-dimensional")
        if self.lam < 0:
            raise InvalidArgumentError("signal strength must be nonnegative")
        v.setflags(write=False)
        object.__setattr__(self, "v", v)

    @property
    def boolean(self) -> bool:
        return bool(np.all(np.abs(self.v) == 1.0))

    @classmethod
    def random(cls, n: int, lam: float, seed: int) -> "Spike":
        """Uniform ``v`` in {-1, +1}^n."""
        words = random_words(seed, 0, n)
        return cls(np.where(words >> np.uint64(63), 1.0, -1.0), lam)


@dataclass(frozen=True, eq=False)
class SymmetricTensor:
    n: int
    r: int
    entries: np.ndarray
    distribution: Distribution = Distribution.GAUSSIAN
    seed: int | None = None
    _subsets: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.r < 1 or self.n < self.r:
            raise InvalidArgumentError(f"need n >= r >= 1, got n={self.n}, r={self.r}")
        entries = np.ascontiguousarray(self.entries, dtype=np.float64)
        if entries.shape != (comb(self.n, self.r),):
            raise InvalidArgumentError(
                f"expected {comb(self.n, self.r)} entries for n={self.n}, r={self.r}, "
                f"got shape {entries.shape}"
            )
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "distribution", Distribution(self.distribution))

    @classmethod
    def zeros(cls, n: int, r: int) -> "SymmetricTensor":
        return cls(n, r, np.zeros(comb(n, r)))

    def entry(self, subset: Sequence[int]) -> float:
        s = make_subset(subset, self.n)
        if len(s) != self.r:
            raise InvalidArgumentError(f"tensor of order {self.r} indexed by {len(s)}-subset {s}")
        return float(self.entries[rank_subset(s)])

    def with_entry(self, subset: Sequence[int], value: float) -> "SymmetricTensor":
        """Copy of this tensor with one entry replaced."""
        s = make_subset(subset, self.n)
        if len(s) != self.r:
            raise InvalidArgumentError(f"tensor of order {self.r} indexed by {len(s)}-subset {s}")
        entries = self.entries.copy()
        entries[rank_subset(s)] = value
        return SymmetricTensor(self.n, self.r, entries, self.distribution, self.seed)

    @property
    def subsets(self) -> np.ndarray:
        """The r-subsets in rank order (cached)."""
        if self._subsets is None:
            object.__setattr__(self, "_subsets", all_subsets(self.n, self.r))
        return self._subsets

    def __eq__(self, other):
        if not isinstance(other, SymmetricTensor):
            return NotImplemented
        return (
            self.n == other.n
            and self.r == other.r
            and self.distribution == other.distribution
            and self.seed == other.seed
            and np.array_equal(self.entries, other.entries)
        )

    __hash__ = None


def sample_tensor(n: int, r: int, distribution: Distribution | str = "gaussian", seed: int = 0) -> SymmetricTensor:
    """Sample i.i.d. entries, one per r-subset. Deterministic in ``(n, r, distribution, seed)``."""
    if r < 3 or n < r:
        raise InvalidArgumentError(f"need n >= r >= 3, got n={n}, r={r}")
    dist = Distribution(distribution)
    if dist.base is not dist:
        raise InvalidArgumentError("sample the base noise, then call add_spike")
    entries = noise_block(dist, seed, 0, comb(n, r))
    return SymmetricTensor(n, r, entries, dist, seed)


def spike_entries(v: np.ndarray, subsets: np.ndarray) -> np.ndarray:
    """``prod(v[i] for i in S)`` for each row S of ``subsets``."""
    return np.prod(np.asarray(v, dtype=np.float64)[subsets], axis=1)


def add_spike(tensor: SymmetricTensor, spike: Spike) -> SymmetricTensor:
    """Return ``T`` with ``T_S = G_S + lam * prod_{i in S} v_i``; ``tensor`` is untouched."""
    if spike.v.shape != (tensor.n,):
        raise InvalidArgumentError(f"spike of length {spike.v.shape[0]} for n={tensor.n}")
    entries = tensor.entries + spike.lam * spike_entries(spike.v, tensor.subsets)
    return SymmetricTensor(tensor.n, tensor.r, entries, tensor.distribution.planted(), tensor.seed)


def planted_tensor(n: int, r: int, spike: Spike) -> SymmetricTensor:
    """The noiseless tensor ``lam * v^{(x) r}`` restricted to r-subsets."""
    return add_spike(SymmetricTensor.zeros(n, r), spike)


# --- file format ----------------------------------------------------------

MAGIC = b"KIKTENSR".ljust(16, b"\0")
VERSION = 1
_HEADER = struct.Struct("<16sIIIIQQ")


def save(tensor: SymmetricTensor, path: str | Path) -> None:
    seed = _NO_SEED if tensor.seed is None else tensor.seed
    header = _HEADER.pack(
        MAGIC, VERSION, tensor.n, tensor.r, tensor.distribution.code, seed, tensor.entries.size
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(tensor.entries.astype("<f8").tobytes())


def load(path: str | Path) -> SymmetricTensor:
    data = Path(path).read_bytes()
    if len(data) < 16:
        raise FormatError("file shorter than magic", len(data))
    if data[:16] != MAGIC:
        raise FormatError("bad magic", 0)
    if len(data) < _HEADER.size:
        raise FormatError("truncated header", len(data))
    _, version, n, r, code, seed, count = _HEADER.unpack_from(data)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 16)
    if r < 1 or r > n:
        raise FormatError(f"invalid order r={r} for n={n}", 24)
    if code >= len(_DIST_CODES):
        raise FormatError(f"unknown distribution code {code}", 28)
    if count != comb(n, r):
        raise FormatError(f"entry count {count} != C({n},{r})", 40)
    expected = _HEADER.size + 8 * count
    if len(data) != expected:
        raise FormatError(f"payload length mismatch: expected {expected} bytes, got {len(data)}", min(len(data), expected))
    entries = np.frombuffer(data, dtype="<f8", offset=_HEADER.size, count=count).astype(np.float64)
    return SymmetricTensor(n, r, entries, _DIST_CODES[code], None if seed == _NO_SEED else seed)
