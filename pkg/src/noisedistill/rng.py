"""Splittable deterministic random streams.

A stream is identified by (seed, label).  Child streams are derived purely
from the parent's identity plus a label, never from draw position, so sibling
streams stay independent of each other's consumption order.  PCG64 keyed by a
SHA-256 digest keeps sequences identical across platforms and runs.
"""

from __future__ import annotations

import hashlib
from typing import Iterable

import numpy as np

from .errors import DomainError


class SeededRng:
    def __init__(self, seed: int, label: str = "root"):
        self.seed = int(seed)
        self.label = label
        digest = hashlib.sha256(f"{self.seed}|{label}".encode("utf-8")).digest()
        self._gen = np.random.Generator(np.random.PCG64(int.from_bytes(digest[:16], "little")))

    def child(self, label: str) -> "SeededRng":
        """Derive an independent stream; identity depends only on the label path."""
        return SeededRng(self.seed, f"{self.label}/{label}")

    def uniform(self, lo: float, hi: float) -> float:
        if not lo < hi:
            raise DomainError(f"uniform requires lo < hi, got [{lo}, {hi})")
        return float(self._gen.uniform(lo, hi))

    def uniforms(self, n: int, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        if not lo < hi:
            raise DomainError(f"uniforms requires lo < hi, got [{lo}, {hi})")
        return self._gen.uniform(lo, hi, size=n)

    def normals(self, n: int) -> np.ndarray:
        return self._gen.standard_normal(n)

    def integer(self, lo: int, hi: int) -> int:
        """One integer from [lo, hi)."""
        if hi <= lo:
            raise DomainError(f"integer requires lo < hi, got [{lo}, {hi})")
        return int(self._gen.integers(lo, hi))

    def permutation(self, n: int) -> np.ndarray:
        """Uniform random permutation of 0..n-1."""
        return self._gen.permutation(n)

    def choice(self, n: int, m: int, exclude: Iterable[int] = (),
               replace: bool = False) -> np.ndarray:
        """m indices drawn uniformly from 0..n-1 minus `exclude`."""
        excluded = set(int(i) for i in exclude)
        allowed = np.array([i for i in range(n) if i not in excluded], dtype=np.intp)
        if allowed.size == 0:
            raise DomainError("choice has no allowed indices")
        if not replace and m > allowed.size:
            raise DomainError(f"cannot draw {m} distinct indices from {allowed.size} allowed")
        return self._gen.choice(allowed, size=m, replace=replace)

    def __repr__(self) -> str:
        return f"SeededRng(seed={self.seed}, label={self.label!r})"
