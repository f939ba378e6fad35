"""One-hidden-layer network with k-th power activation, its norm, and margins.

A network with ``m`` neurons maps ``(a_1..a_k)`` to logits

    f[c] = sum_i (u_{i,1}(a_1) + ... + u_{i,k}(a_k))**k * w_i(c)

Parameters are stored densely: ``U`` has shape ``(m, k, p)`` and ``W`` has
shape ``(m, p)``.  The map is homogeneous of degree ``k + 1`` in the parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import ModAddDataset, check_budget

MAX_K = 6


def check_enumerable_k(k: int) -> None:
    if k > MAX_K:
        raise ValueError(f"k={k} exceeds the supported maximum of {MAX_K}")


@dataclass(frozen=True)
class NeuronParams:
    u: np.ndarray  # (k, p)
    w: np.ndarray  # (p,)

    def __post_init__(self):
        u = np.atleast_2d(np.asarray(self.u, dtype=float))
        w = np.asarray(self.w, dtype=float)
        if w.ndim != 1 or u.shape[1] != w.shape[0]:
            raise ValueError(f"u shape {u.shape} incompatible with w shape {w.shape}")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "w", w)

    @property
    def k(self) -> int:
        return self.u.shape[0]

    @property
    def p(self) -> int:
        return self.w.shape[0]

    def sq_norm(self) -> float:
        return float(np.sum(self.u**2) + np.sum(self.w**2))

    def scaled(self, alpha: float) -> "NeuronParams":
        return NeuronParams(alpha * self.u, alpha * self.w)


@dataclass(frozen=True)
class MlpParams:
    U: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        U = np.asarray(self.U, dtype=float)
        W = np.asarray(self.W, dtype=float)
        if U.ndim != 3 or W.ndim != 2 or U.shape[0] != W.shape[0] or U.shape[2] != W.shape[1]:
            raise ValueError(f"U shape {U.shape} incompatible with W shape {W.shape}")
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "W", W)

    @property
    def m(self) -> int:
        return self.U.shape[0]

    @property
    def k(self) -> int:
        return self.U.shape[1]

    @property
    def p(self) -> int:
        return self.U.shape[2]

    @property
    def neurons(self) -> list[NeuronParams]:
        return [NeuronParams(self.U[i], self.W[i]) for i in range(self.m)]

    @classmethod
    def from_neurons(cls, neurons) -> "MlpParams":
        neurons = list(neurons)
        if not neurons:
            raise ValueError("need at least one neuron")
        return cls(np.stack([n.u for n in neurons]), np.stack([n.w for n in neurons]))

    @classmethod
    def zeros(cls, p: int, k: int, m: int) -> "MlpParams":
        return cls(np.zeros((m, k, p)), np.zeros((m, p)))

    @classmethod
    def random(cls, p: int, k: int, m: int, scale: float, seed: int) -> "MlpParams":
        rng = np.random.default_rng(seed)
        return cls(rng.normal(0.0, scale, (m, k, p)), rng.normal(0.0, scale, (m, p)))

    def scaled(self, alpha: float) -> "MlpParams":
        return MlpParams(alpha * self.U, alpha * self.W)

    def without(self, i: int) -> "MlpParams":
        keep = np.arange(self.m) != i
        return MlpParams(self.U[keep], self.W[keep])

    def neuron_norms(self) -> np.ndarray:
        return np.sqrt(np.sum(self.U**2, axis=(1, 2)) + np.sum(self.W**2, axis=1))


def hidden_sums(params: MlpParams, inputs) -> np.ndarray:
    """``S[n, i] = sum_j u_{i,j}(a_{n,j})`` for a batch of inputs of shape ``(n, k)``."""
    inputs = np.asarray(inputs, dtype=np.intp)
    if inputs.ndim != 2 or inputs.shape[1] != params.k:
        raise ValueError(f"expected inputs of shape (n, {params.k}), got {inputs.shape}")
    if inputs.size and (inputs.min() < 0 or inputs.max() >= params.p):
        raise ValueError("inputs out of range")
    s = np.zeros((inputs.shape[0], params.m))
    for j in range(params.k):
        s += params.U[:, j, :].T[inputs[:, j]]
    return s


def forward_batch(params: MlpParams, inputs) -> np.ndarray:
    """Logits of shape ``(n, p)``."""
    return hidden_sums(params, inputs) ** params.k @ params.W


def forward_mlp(params: MlpParams, a) -> np.ndarray:
    a = np.asarray(a, dtype=np.intp).reshape(-1)
    if len(a) != params.k:
        raise ValueError(f"expected {params.k} inputs, got {len(a)}")
    return forward_batch(params, a[None, :])[0]


def l2k1_norm(params: MlpParams) -> float:
    """``(sum_i ||theta_i||_2^(k+1))^(1/(k+1))``."""
    nu = params.k + 1
    return float(np.sum(params.neuron_norms() ** nu) ** (1.0 / nu))


@dataclass(frozen=True)
class ClassWeighting:
    """Weights over wrong classes; only the uniform ``1/(p-1)`` kind is provided."""

    p: int
    kind: str = "uniform"

    def weights(self, y: int) -> np.ndarray:
        if self.kind != "uniform":
            raise ValueError(f"unsupported class weighting {self.kind!r}")
        tau = np.full(self.p, 1.0 / (self.p - 1))
        tau[y] = 0.0
        return tau


def margins_from_logits(logits: np.ndarray, labels) -> np.ndarray:
    """``f[y] - max_{y' != y} f[y']`` row by row."""
    logits = np.atleast_2d(logits)
    labels = np.asarray(labels, dtype=np.intp).reshape(-1)
    rows = np.arange(len(labels))
    correct = logits[rows, labels]
    others = logits.copy()
    others[rows, labels] = -np.inf
    return correct - others.max(axis=1)


def margin_g(params: MlpParams, a, y: int) -> float:
    return float(margins_from_logits(forward_mlp(params, a), [y])[0])


def class_weighted_margin_gprime(params: MlpParams, a, y: int, tau: ClassWeighting | None = None) -> float:
    logits = forward_mlp(params, a)
    tau = tau or ClassWeighting(params.p)
    return float(logits[y] - tau.weights(y) @ logits)


@dataclass(frozen=True)
class MarginReport:
    min_margin: float
    norm: float
    normalized_margin: float
    per_point_margins: np.ndarray | None = field(default=None, repr=False)


def dataset_margin_h(params: MlpParams, ds: ModAddDataset, keep_points: bool = True) -> MarginReport:
    if len(ds) == 0:
        raise ValueError("margin of an empty dataset is undefined")
    margins = margins_from_logits(forward_batch(params, ds.inputs), ds.labels)
    h = float(margins.min())
    norm = l2k1_norm(params)
    normalized = h / norm ** (params.k + 1) if norm > 0 else 0.0
    return MarginReport(h, norm, normalized, margins if keep_points else None)


def _power_sum_by_residue(u: np.ndarray) -> np.ndarray:
    """``G[t] = sum over a in Z_p^k with sum(a) = t (mod p) of (sum_j u_j(a_j))**k``."""
    k, p = u.shape
    check_enumerable_k(k)
    check_budget(p**k, f"neuron enumeration p={p}, k={k}")
    s = np.zeros((p,) * k)
    r = np.zeros((p,) * k, dtype=np.intp)
    for j in range(k):
        shape = [1] * k
        shape[j] = p
        s = s + u[j].reshape(shape)
        r = r + np.arange(p).reshape(shape)
    return np.bincount((r % p).ravel(), weights=(s**k).ravel(), minlength=p)


def eta_profile(n: NeuronParams) -> np.ndarray:
    """``eta(delta)`` for every ``delta`` in ``Z_p`` by exact enumeration."""
    p, k = n.p, n.k
    g = _power_sum_by_residue(n.u)
    t = np.arange(p)
    # eta(d) = p^-k sum_t G[t] w(t - d)
    return np.array([g @ n.w[(t - d) % p] for d in range(p)]) / p**k


def single_neuron_eta(n: NeuronParams, delta: int) -> float:
    if not 0 <= delta < n.p:
        raise ValueError(f"delta={delta} out of range")
    return float(eta_profile(n)[delta])


def neuron_weighted_objective(n: NeuronParams) -> float:
    """``eta(0) - mean_{delta != 0} eta(delta)``."""
    eta = eta_profile(n)
    return float(eta[0] - eta[1:].mean())
