"""Discrete Fourier transforms over Z_p and spectrum metrics.

Transforms are computed by direct summation against the DFT matrix, which is
exact enough for the small moduli used here and has no FFT dependency.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .dataset import check_budget


TIE_TOL = 1e-12
ZERO_MASS_RTOL = 1e-20


def dft_matrix(p: int) -> np.ndarray:
    """``F[j, a] = exp(-2 pi i j a / p)`` with exponents reduced mod p."""
    ja = np.outer(np.arange(p), np.arange(p)) % p
    return np.exp(-2j * np.pi * ja / p)


@dataclass(frozen=True)
class Spectrum:
    p: int
    coeffs: np.ndarray

    def power(self) -> np.ndarray:
        return np.abs(self.coeffs) ** 2


@dataclass(frozen=True)
class Spectrum2D:
    p: int
    coeffs: np.ndarray

    def power(self) -> np.ndarray:
        return np.abs(self.coeffs) ** 2


def _as_vector(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.ndim != 1:
        raise ValueError(f"expected a vector, got shape {u.shape}")
    return u


def dft1(u, p: int | None = None) -> Spectrum:
    u = _as_vector(u)
    if p is not None and len(u) != p:
        raise ValueError(f"length {len(u)} does not match p={p}")
    n = len(u)
    return Spectrum(n, dft_matrix(n) @ u)


def idft1(s: Spectrum) -> np.ndarray:
    """Inverse transform; returns the real part (imaginary residue is rounding only)."""
    coeffs = np.asarray(s.coeffs, dtype=complex)
    if coeffs.shape != (s.p,):
        raise ValueError("spectrum length does not match p")
    return (dft_matrix(s.p).conj() @ coeffs).real / s.p


def dft2(m) -> Spectrum2D:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"dft2 needs a square matrix, got shape {m.shape}")
    f = dft_matrix(m.shape[0])
    return Spectrum2D(m.shape[0], f @ m @ f.T)


def idft2(s: Spectrum2D) -> np.ndarray:
    fc = dft_matrix(s.p).conj()
    return (fc @ np.asarray(s.coeffs) @ fc.T).real / s.p**2


def frequency_powers(u) -> np.ndarray:
    """``P(j) = |u^(j)|^2 + |u^(-j)|^2`` for ``j = 1..(p-1)/2`` (index 0 is ``j=1``)."""
    u = _as_vector(u)
    p = len(u)
    pw = dft1(u).power()
    half = np.arange(1, (p - 1) // 2 + 1)
    return pw[half] + pw[(-half) % p]


def max_normalized_power(u) -> tuple[float, int]:
    """Largest share of non-DC spectral power at one frequency, and that frequency.

    Ties (within ``TIE_TOL``) go to the smaller frequency.
    """
    u = _as_vector(u)
    powers = frequency_powers(u)
    total = powers.sum()
    # constant vectors leave only rounding residue outside the DC bin
    if not total > ZERO_MASS_RTOL * len(u) * float(u @ u):
        raise ValueError("vector has no non-constant spectral mass")
    share = powers / total
    # shares within TIE_TOL of the maximum count as tied; the smallest frequency wins
    idx = int(np.flatnonzero(share >= share.max() - TIE_TOL)[0])
    return float(share[idx]), idx + 1


def spectrum_rows(u) -> list[tuple[int, float, float]]:
    powers = frequency_powers(u)
    total = powers.sum()
    norm = powers / total if total > 0 else np.zeros_like(powers)
    return [(j + 1, float(pw), float(nz)) for j, (pw, nz) in enumerate(zip(powers, norm))]


def write_spectrum_csv(path, vectors: dict) -> None:
    """Write ``freq,power,normalized_power`` rows; a ``neuron`` column leads when several vectors are given."""
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["neuron", "freq", "power", "normalized_power"])
        for name, vec in vectors.items():
            for freq, pw, nz in spectrum_rows(vec):
                writer.writerow([name, freq, repr(pw), repr(nz)])


def output_table(f_eval: Callable, p: int, k: int) -> np.ndarray:
    """Tabulate ``f(a_1..a_k, c)`` over all of ``Z_p^(k+1)`` as an array of shape ``(p,)*(k+1)``.

    ``f_eval`` may be vectorized (accepting integer arrays of equal shape) or scalar;
    the scalar fallback is used when the vectorized call fails or returns the wrong shape.
    """
    check_budget(p ** (k + 1), f"network DFT p={p}, k={k}")
    grids = np.indices((p,) * (k + 1))
    try:
        values = np.asarray(f_eval(*grids), dtype=float)
        if values.shape == grids.shape[1:]:
            return values
    except (TypeError, ValueError, IndexError):
        pass
    out = np.empty((p,) * (k + 1))
    for idx in np.ndindex(*out.shape):
        out[idx] = f_eval(*idx)
    return out


def table_dft(table: np.ndarray, j) -> complex:
    """One coefficient of the multi-dimensional DFT of a tabulated function."""
    p = table.shape[0]
    j = [int(v) % p for v in j]
    if len(j) != table.ndim:
        raise ValueError(f"need {table.ndim} indices, got {len(j)}")
    acc = table.astype(complex)
    for ji in j:
        # contract the leading axis each time
        phase = np.exp(-2j * np.pi * ji * np.arange(p) / p)
        acc = np.tensordot(phase, acc, axes=(0, 0))
    return complex(acc)


def network_dft(f_eval: Callable, p: int, k: int, j) -> complex:
    """Brute-force coefficient ``f^(j_1..j_{k+1})`` of a function on ``Z_p^(k+1)``."""
    if len(j) != k + 1:
        raise ValueError(f"need k+1={k + 1} indices, got {len(j)}")
    return table_dft(output_table(f_eval, p, k), j)
