"""Frequency reports for trained or constructed models."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fourier import TIE_TOL, dft2, frequency_powers
from .mlp import MlpParams
from .transformer import AttnParams, token_space_attention


def neuron_frequency_powers(params: MlpParams) -> np.ndarray:
    """Per-neuron power at each frequency ``1..(p-1)/2``, summed over the neuron's ``k+1`` vectors.

    Shape ``(m, (p-1)/2)``; the DC component is excluded.
    """
    out = np.zeros((params.m, (params.p - 1) // 2))
    for i in range(params.m):
        for vec in (*params.U[i], params.W[i]):
            out[i] += frequency_powers(vec)
    return out


@dataclass(frozen=True)
class FrequencyReport:
    """Dominant frequency and its power share for every neuron.

    A neuron is active when its norm is at least ``active_fraction`` of the
    largest neuron norm; inactive neurons are excluded from the histogram.
    """

    p: int
    dominant: np.ndarray
    max_power: np.ndarray
    norms: np.ndarray
    active: np.ndarray
    powers: np.ndarray

    @property
    def histogram(self) -> dict[int, int]:
        hist = {z: 0 for z in range(1, (self.p - 1) // 2 + 1)}
        for z in self.dominant[self.active]:
            hist[int(z)] += 1
        return hist

    @property
    def missing_frequencies(self) -> list[int]:
        return [z for z, n in self.histogram.items() if n == 0]

    def fraction_single_frequency(self, threshold: float = 0.9) -> float:
        """Share of active neurons whose max normalized power is at least ``threshold``."""
        if not self.active.any():
            return 0.0
        return float(np.mean(self.max_power[self.active] >= threshold))


def frequency_report(params: MlpParams, active_fraction: float = 0.1) -> FrequencyReport:
    powers = neuron_frequency_powers(params)
    totals = powers.sum(axis=1)
    safe = np.where(totals > 0, totals, 1.0)
    share = powers / safe[:, None]
    # first frequency within TIE_TOL of the row maximum
    dominant = np.argmax(share >= share.max(axis=1, keepdims=True) - TIE_TOL, axis=1) + 1
    max_power = np.where(totals > 0, share.max(axis=1), 0.0)
    norms = params.neuron_norms()
    top = norms.max(initial=0.0)
    active = (norms >= active_fraction * top) & (totals > 0) if top > 0 else np.zeros(params.m, dtype=bool)
    return FrequencyReport(params.p, dominant, max_power, norms, active, powers)


def write_neuron_spectra(path, params: MlpParams) -> None:
    """``neuron,freq,power,normalized_power`` rows for every neuron and frequency."""
    powers = neuron_frequency_powers(params)
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["neuron", "freq", "power", "normalized_power"])
        for i, row in enumerate(powers):
            total = row.sum()
            for j, pw in enumerate(row):
                writer.writerow([i, j + 1, repr(float(pw)), repr(float(pw / total) if total > 0 else 0.0)])


def write_neuron_summary(path, report: FrequencyReport) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["neuron", "norm", "active", "dominant_freq", "max_normalized_power"])
        for i in range(len(report.norms)):
            writer.writerow(
                [i, repr(float(report.norms[i])), int(report.active[i]), int(report.dominant[i]), repr(float(report.max_power[i]))]
            )


@dataclass(frozen=True)
class HeadSpectrum:
    layer: int
    head: int
    matrix: np.ndarray
    power: np.ndarray

    def top_share(self, n_peaks: int = 8) -> float:
        """Share of non-DC power held by the ``n_peaks`` largest 2-D frequency bins."""
        pw = self.power.copy()
        pw[0, 0] = 0.0
        total = pw.sum()
        if total <= 0:
            return 0.0
        return float(np.sort(pw.ravel())[::-1][:n_peaks].sum() / total)


def attention_spectra(params: AttnParams) -> list[HeadSpectrum]:
    out = []
    for layer in range(params.cfg.layers):
        for head in range(params.cfg.heads):
            a = token_space_attention(params, head, layer)
            out.append(HeadSpectrum(layer, head, a, dft2(a).power()))
    return out
