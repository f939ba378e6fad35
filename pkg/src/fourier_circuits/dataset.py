"""k-input modular addition datasets, deterministic splits, one-hot encodings."""

from __future__ import annotations

import csv
import itertools
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_BUDGET = 10**7

# SplitMix64 constants (Steele, Lea & Flood 2014); split keys are version 1.
SPLITMIX_GAMMA = np.uint64(0x9E3779B97F4A7C15)
SPLITMIX_MUL1 = np.uint64(0xBF58476D1CE4E5B9)
SPLITMIX_MUL2 = np.uint64(0x94D049BB133111EB)
SPLIT_PRNG_VERSION = "splitmix64-v1"


def enumeration_budget() -> int:
    """Cap on brute-force enumeration sizes; ``FC_BUDGET`` overrides the default."""
    raw = os.environ.get("FC_BUDGET")
    if raw is None or raw.strip() == "":
        return DEFAULT_BUDGET
    try:
        value = int(float(raw))
    except ValueError:
        raise ValueError(f"FC_BUDGET must be an integer, got {raw!r}") from None
    if value <= 0:
        raise ValueError(f"FC_BUDGET must be positive, got {value}")
    return value


class BudgetExceeded(ValueError):
    """An enumeration would exceed the configured point budget."""


def check_budget(n: int, what: str) -> None:
    cap = enumeration_budget()
    if n > cap:
        raise BudgetExceeded(f"{what} needs {n} evaluations, budget is {cap} (set FC_BUDGET to raise it)")


def is_prime(n: int) -> bool:
    if n < 2:
        return False
    if n % 2 == 0:
        return n == 2
    i = 3
    while i * i <= n:
        if n % i == 0:
            return False
        i += 2
    return True


def check_modulus(p: int) -> None:
    if isinstance(p, bool) or int(p) != p or p <= 2 or not is_prime(int(p)):
        raise ValueError(f"p must be an odd prime, got {p}")


def check_arity(k: int) -> None:
    if isinstance(k, bool) or int(k) != k or k < 2:
        raise ValueError(f"k must be an integer >= 2, got {k}")


@dataclass(frozen=True)
class ModAddDataset:
    """Points ``(a_1..a_k) -> (a_1+...+a_k) mod p`` stored column-wise.

    ``inputs`` has shape ``(n, k)``; ``labels`` has shape ``(n,)``.
    """

    p: int
    k: int
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.int64).reshape(-1, self.k)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if len(inputs) != len(labels):
            raise ValueError("inputs and labels differ in length")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def points(self) -> list[tuple[tuple[int, ...], int]]:
        return [(tuple(int(v) for v in a), int(y)) for a, y in zip(self.inputs, self.labels)]

    def subset(self, idx) -> "ModAddDataset":
        idx = np.asarray(idx, dtype=np.intp)
        return ModAddDataset(self.p, self.k, self.inputs[idx], self.labels[idx])

    def to_csv(self, path) -> None:
        """Write ``a_1,...,a_k,label`` rows with a header."""
        with open(Path(path), "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow([f"a_{i + 1}" for i in range(self.k)] + ["label"])
            for a, y in zip(self.inputs.tolist(), self.labels.tolist()):
                writer.writerow([*a, y])

    @classmethod
    def from_csv(cls, path, p: int) -> "ModAddDataset":
        with open(Path(path), newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        k = len(header) - 1
        arr = np.array(body, dtype=np.int64).reshape(-1, k + 1)
        return cls(p, k, arr[:, :k], arr[:, k])


def generate_full(p: int, k: int) -> ModAddDataset:
    """All ``p**k`` input tuples in lexicographic order."""
    check_modulus(p)
    check_arity(k)
    check_budget(p**k, f"full dataset p={p}, k={k}")
    # lexicographic: last coordinate varies fastest
    grids = np.indices((p,) * k).reshape(k, -1).T
    return ModAddDataset(p, k, grids, grids.sum(axis=1) % p)


def generate_sampled(p: int, k: int, n: int, seed: int) -> ModAddDataset:
    """``n`` tuples drawn uniformly with replacement (for spaces beyond the full-mode cap)."""
    check_modulus(p)
    check_arity(k)
    if n <= 0:
        raise ValueError("n must be positive")
    check_budget(n, "sampled dataset")
    rng = np.random.default_rng(seed)
    inputs = rng.integers(0, p, size=(n, k))
    return ModAddDataset(p, k, inputs, inputs.sum(axis=1) % p)


def splitmix64(seed: int, n: int) -> np.ndarray:
    """First ``n`` outputs of SplitMix64 started from ``seed`` (uint64 array)."""
    state = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    steps = np.arange(1, n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = state + steps * SPLITMIX_GAMMA
        z = (z ^ (z >> np.uint64(30))) * SPLITMIX_MUL1
        z = (z ^ (z >> np.uint64(27))) * SPLITMIX_MUL2
        z = z ^ (z >> np.uint64(31))
    return z


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction <= 1.0:
            raise ValueError(f"train_fraction must be in (0, 1], got {self.train_fraction}")


def split(ds: ModAddDataset, spec: SplitSpec) -> tuple[ModAddDataset, ModAddDataset]:
    """Deterministic train/test partition.

    Point ``i`` receives the key ``splitmix64(seed)[i]``; the ``round(f*n)``
    points with the smallest keys (ties by index) form the training set.
    Both halves keep the dataset's original order.  ``round`` is half-up.
    """
    if len(ds) == 0:
        raise ValueError("cannot split an empty dataset")
    if not 0.0 < spec.train_fraction <= 1.0:
        raise ValueError(f"train_fraction must be in (0, 1], got {spec.train_fraction}")
    n = len(ds)
    n_train = int(np.floor(spec.train_fraction * n + 0.5))
    keys = splitmix64(spec.seed, n)
    order = np.argsort(keys, kind="stable")
    mask = np.zeros(n, dtype=bool)
    mask[order[:n_train]] = True
    return ds.subset(np.flatnonzero(mask)), ds.subset(np.flatnonzero(~mask))


def one_hot(a: int, p: int) -> np.ndarray:
    if not 0 <= a < p:
        raise ValueError(f"a={a} out of range for p={p}")
    v = np.zeros(p)
    v[a] = 1.0
    return v


def all_tuples(p: int, k: int):
    """Iterate lexicographically over ``Z_p^k``."""
    return itertools.product(range(p), repeat=k)
