"""Analytic maximum-margin network for k-input modular addition.

The network is assembled from cosine neurons.  For every frequency ``zeta`` it
realises ``cos(2 pi zeta (a_1 + ... + a_k - c) / p)`` by

1. expanding the cosine of a sum into ``2**k`` products of cos/sin factors
   (:func:`cos_sum_expansion`), and
2. writing each product ``x_1 * ... * x_k`` as a signed sum of ``k``-th powers of
   ``+-x_1 +- ... +- x_k`` (:func:`sum_to_product_terms`), which is exactly
   what one neuron ``(sum_j u_j(a_j))**k * w(c)`` computes.

Sign patterns ``c`` and ``-c`` give identical power terms, so only one of each
pair is kept; every product therefore costs ``2**(k-1)`` neurons and each
frequency ``2**(2k-1)`` neurons.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .dataset import check_arity, check_budget, check_modulus
from .mlp import MAX_K, MlpParams, NeuronParams, dataset_margin_h, forward_batch, l2k1_norm


def gamma_star(k: int, p: int) -> float:
    """Maximum normalized margin ``2 k! / ((2k+2)^((k+1)/2) (p-1) p^((k-1)/2))``."""
    check_arity(k)
    check_modulus(p)
    return 2.0 * math.factorial(k) / ((2 * k + 2) ** ((k + 1) / 2) * (p - 1) * p ** ((k - 1) / 2))


def unit_beta(p: int, k: int) -> float:
    """Cosine amplitude that gives a neuron with ``k+1`` cosine vectors unit L2 norm."""
    return math.sqrt(2.0 / ((k + 1) * p))


def _check_small_k(k: int, lo: int = 1) -> None:
    if isinstance(k, bool) or int(k) != k or not lo <= k <= MAX_K:
        raise ValueError(f"k must be an integer in [{lo}, {MAX_K}], got {k}")


@dataclass(frozen=True)
class CosineNeuronSpec:
    zeta: int
    phases_u: tuple[float, ...]
    phase_w: float
    beta: float

    def phase_gap(self) -> float:
        """``sum(phases_u) - phase_w`` reduced to ``(-pi, pi]``."""
        return wrap_angle(sum(self.phases_u) - self.phase_w)


def wrap_angle(x: float) -> float:
    y = math.remainder(x, 2 * math.pi)
    return math.pi if y == -math.pi else y


def cosine_vector(p: int, zeta: int, phase: float, beta: float) -> np.ndarray:
    return beta * np.cos(phase + 2 * np.pi * zeta * np.arange(p) / p)


def cosine_neuron(spec: CosineNeuronSpec, p: int, k: int) -> NeuronParams:
    check_modulus(p)
    if len(spec.phases_u) != k:
        raise ValueError(f"need {k} input phases, got {len(spec.phases_u)}")
    if not 1 <= spec.zeta <= (p - 1) // 2:
        raise ValueError(f"frequency {spec.zeta} outside [1, {(p - 1) // 2}]")
    u = np.stack([cosine_vector(p, spec.zeta, ph, spec.beta) for ph in spec.phases_u])
    return NeuronParams(u, cosine_vector(p, spec.zeta, spec.phase_w, spec.beta))


def unit_cosine_neuron(p: int, k: int, zeta: int = 1, phases_u=None, phase_w: float | None = None) -> NeuronParams:
    phases_u = tuple(phases_u) if phases_u is not None else (0.0,) * k
    phase_w = sum(phases_u) if phase_w is None else phase_w
    return cosine_neuron(CosineNeuronSpec(zeta, phases_u, phase_w, unit_beta(p, k)), p, k)


@dataclass(frozen=True)
class SignedTerm:
    """``coefficient * (sum_j signs[j] * x_j)**k``."""

    signs: tuple[int, ...]
    coefficient: int

    def evaluate(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return self.coefficient * float(np.dot(self.signs, x)) ** len(self.signs)


def sum_to_product_terms(k: int) -> list[SignedTerm]:
    """All ``2**k`` terms whose sum is ``2**k * k! * x_1 * ... * x_k``."""
    _check_small_k(k)
    terms = []
    for signs in itertools.product((1, -1), repeat=k):
        n_neg = signs.count(-1)
        terms.append(SignedTerm(signs, -1 if n_neg % 2 else 1))
    return terms


def representative_sign_patterns(k: int) -> list[tuple[int, ...]]:
    """One sign vector from each ``{c, -c}`` pair.

    Keeps vectors with fewer than ``k/2`` negative entries; when exactly ``k/2``
    are negative the one with ``c_1 = +1`` is kept.
    """
    _check_small_k(k)
    out = []
    for signs in itertools.product((1, -1), repeat=k):
        n_neg = signs.count(-1)
        if 2 * n_neg < k or (2 * n_neg == k and signs[0] == 1):
            out.append(signs)
    return out


@dataclass(frozen=True)
class TrigTerm:
    """Signed product of cos (``b_i = 0``) and sin (``b_i = 1``) factors.

    Evaluated on angles ``x_1..x_{k+1}``; the terms of :func:`cos_sum_expansion`
    add up to ``cos(x_1 + ... + x_{k+1})``.  To expand ``cos(a_1+...+a_k-c)``
    pass ``x_{k+1} = -c``.
    """

    b: tuple[int, ...]
    sign: int

    def evaluate(self, angles) -> float:
        angles = np.asarray(angles, dtype=float)
        factors = np.where(np.asarray(self.b) == 1, np.sin(angles), np.cos(angles))
        return self.sign * float(np.prod(factors))

    def sign_in_c(self) -> int:
        """Sign of this product when its last factor is written with ``c`` instead of ``-c``."""
        return -self.sign if self.b[-1] else self.sign


def cos_sum_expansion(k: int) -> list[TrigTerm]:
    """The ``2**k`` products in ``cos(x_1 + ... + x_{k+1})``; sign is -1 iff ``sum(b) % 4 == 2``."""
    _check_small_k(k)
    terms = []
    for b in itertools.product((0, 1), repeat=k + 1):
        s = sum(b)
        if s % 2 == 0:
            terms.append(TrigTerm(b, -1 if s % 4 == 2 else 1))
    return terms


def canonical_amplitude(k: int) -> float:
    """Common amplitude ``s`` of all cosine vectors, ``s**(k+1) = 1 / (2**(k-1) k!)``.

    Each group of ``2**(k-1)`` neurons sums to ``2**(k-1) k! s**(k+1)`` times its
    trig product, so this choice makes every product appear with weight one.
    """
    return (1.0 / (2 ** (k - 1) * math.factorial(k))) ** (1.0 / (k + 1))


def construct_neuron_specs(p: int, k: int) -> list[CosineNeuronSpec]:
    """Neuron phases for every frequency, trig product and sign pattern.

    With ``u(a) = s cos(phase + 2 pi zeta a / p)``, a phase of ``pi/2`` turns the
    cosine into ``-sin`` and an extra ``pi`` negates it.  On the output side a
    ``pi/2`` phase yields ``-sin(c) = sin(-c)``, which is the factor the
    expansion asks for.
    """
    check_modulus(p)
    _check_small_k(k, lo=2)
    s = canonical_amplitude(k)
    specs = []
    for zeta in range(1, (p - 1) // 2 + 1):
        for term in cos_sum_expansion(k):
            n_sin_u = sum(term.b[:k])
            for c, coeff in ((c, -1 if c.count(-1) % 2 else 1) for c in representative_sign_patterns(k)):
                phases_u = tuple(
                    (math.pi / 2 if bj else 0.0) + (math.pi if cj < 0 else 0.0) for bj, cj in zip(term.b, c)
                )
                # each -sin on the input side flips the sign of c_j
                amp_sign = term.sign * coeff * (-1 if n_sin_u % 2 else 1)
                phase_w = (math.pi / 2 if term.b[k] else 0.0) + (math.pi if amp_sign < 0 else 0.0)
                specs.append(
                    CosineNeuronSpec(zeta, tuple(wrap_angle(x) for x in phases_u), wrap_angle(phase_w), s)
                )
    return specs


def expected_width(p: int, k: int) -> int:
    return 2 ** (2 * k - 1) * (p - 1) // 2


def construct_max_margin(p: int, k: int) -> MlpParams:
    """Network computing ``sum_{zeta=1}^{(p-1)/2} cos(2 pi zeta (sum(a) - c) / p)`` exactly."""
    check_modulus(p)
    _check_small_k(k, lo=2)
    m = expected_width(p, k)
    check_budget(m * (k + 1) * p, f"construction p={p}, k={k}")
    return MlpParams.from_neurons(cosine_neuron(spec, p, k) for spec in construct_neuron_specs(p, k))


def per_frequency_counts(p: int, k: int) -> dict[int, int]:
    counts: dict[int, int] = {}
    for spec in construct_neuron_specs(p, k):
        counts[spec.zeta] = counts.get(spec.zeta, 0) + 1
    return counts


def normalize_network(params: MlpParams) -> MlpParams:
    """Rescale every neuron by one common factor so that the L_{2,k+1} norm is 1."""
    norm = l2k1_norm(params)
    if not norm > 0:
        raise ValueError("cannot normalize the zero network")
    return params.scaled(1.0 / norm)


def fourier_sum_values(p: int) -> tuple[float, float]:
    """Values of ``sum_{zeta=1}^{(p-1)/2} cos(2 pi zeta t / p)`` at ``t = 0`` and ``t != 0``."""
    return (p - 1) / 2, -0.5


@dataclass(frozen=True)
class IndicatorReport:
    """Exhaustive comparison of network outputs with target patterns over ``Z_p^(k+1)``.

    ``max_deviation`` is measured against ``(p-1)/2`` on the correct class and
    ``0`` elsewhere.  ``fourier_deviation`` is measured against the exact
    finite Fourier sum, which is ``(p-1)/2`` on the correct class and ``-1/2``
    elsewhere.
    """

    max_deviation: float
    worst_tuple: tuple[int, ...]
    fourier_deviation: float
    worst_fourier_tuple: tuple[int, ...]
    correct_values: tuple[float, float]
    wrong_values: tuple[float, float]

    def passes(self, tol: float = 1e-9) -> bool:
        return self.max_deviation < tol

    def matches_fourier_sum(self, tol: float = 1e-9) -> bool:
        return self.fourier_deviation < tol


def _output_table(params: MlpParams) -> tuple[np.ndarray, np.ndarray]:
    p, k = params.p, params.k
    check_budget(p ** (k + 1), f"indicator check p={p}, k={k}")
    inputs = np.indices((p,) * k).reshape(k, -1).T
    logits = forward_batch(params, inputs)
    correct = (inputs.sum(axis=1) % p)[:, None] == np.arange(p)[None, :]
    return logits, correct


def verify_indicator(params: MlpParams, p: int | None = None, k: int | None = None) -> IndicatorReport:
    p = params.p if p is None else p
    k = params.k if k is None else k
    if (p, k) != (params.p, params.k):
        raise ValueError(f"network has p={params.p}, k={params.k}; asked to verify p={p}, k={k}")
    logits, correct = _output_table(params)
    hi, lo = fourier_sum_values(p)

    def worst(target):
        dev = np.abs(logits - target)
        flat = int(np.argmax(dev))
        row, col = divmod(flat, p)
        a = tuple(int(v) for v in np.unravel_index(row, (p,) * k))
        return float(dev.flat[flat]), a + (col,)

    stated, stated_at = worst(np.where(correct, hi, 0.0))
    exact, exact_at = worst(np.where(correct, hi, lo))
    return IndicatorReport(
        max_deviation=stated,
        worst_tuple=stated_at,
        fourier_deviation=exact,
        worst_fourier_tuple=exact_at,
        correct_values=(float(logits[correct].min()), float(logits[correct].max())),
        wrong_values=(float(logits[~correct].min()), float(logits[~correct].max())) if p > 1 else (0.0, 0.0),
    )


def normalized_margin_of_construction(p: int, k: int) -> float:
    from .dataset import generate_full

    return dataset_margin_h(normalize_network(construct_max_margin(p, k)), generate_full(p, k)).normalized_margin
