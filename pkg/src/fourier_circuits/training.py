"""Regularized training for the polynomial MLP and the attention classifier.

Both models expose their parameters as a ``{name: array}`` dictionary and a
differentiable forward pass, so one loop serves both.  The objective is mean
cross-entropy plus ``lam`` times a parameter norm: ``L_{2,k+1}`` for the MLP and
the overall Frobenius norm for the attention model.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import mlp as mlp_mod
from . import transformer as tf
from .dataset import ModAddDataset, SplitSpec, generate_full, generate_sampled, split
from .mlp import MlpParams
from .transformer import AttnConfig, AttnParams

MODEL_KINDS = ("mlp", "attention")
OPTIMIZERS = ("sgd", "adamw")


@dataclass(frozen=True)
class TrainConfig:
    model: str = "mlp"
    p: int = 11
    k: int = 3
    m: int = 160
    d: int = 128
    d_head: int = 32
    layers: int = 1
    residual: bool = True
    positional: bool = True
    layer_norm: bool = False
    tied_unembed: bool = False
    mlp_hidden: int = 0
    init_scale: float = 0.1
    steps: int = 1000
    batch_size: int = 1024
    lr: float = 5e-3
    lam: float = 0.005
    optimizer: str = "adamw"
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-8
    weight_decay: float = 0.0
    warmup: int = 10
    train_fraction: float = 1.0
    sample_size: int = 0
    seed: int = 0
    eval_interval: int = 100
    track_margin: bool = False

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ValueError(f"model must be one of {MODEL_KINDS}, got {self.model!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.eval_interval < 1:
            raise ValueError("eval_interval must be >= 1")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.lr < 0 or self.warmup < 0 or self.weight_decay < 0:
            raise ValueError("lr, warmup and weight_decay must be >= 0")
        if self.sample_size < 0:
            raise ValueError("sample_size must be >= 0")
        SplitSpec(self.train_fraction, self.seed)

    def attn_config(self) -> AttnConfig:
        return AttnConfig(
            p=self.p,
            k=self.k,
            heads=self.m,
            d=self.d,
            d_head=self.d_head,
            layers=self.layers,
            seed=self.seed,
            positional=self.positional,
            residual=self.residual,
            layer_norm=self.layer_norm,
            tied_unembed=self.tied_unembed,
            mlp_hidden=self.mlp_hidden,
        )

    def to_dict(self) -> dict:
        return asdict(self)


# ----------------------------------------------------------------------------
# model adapters


def _mlp_logits(tensors: dict, inputs: np.ndarray, k: int, p: int) -> ad.Tensor:
    U, W = tensors["U"], tensors["W"]
    m = U.shape[0]
    # rows of the (k*p, m) table are u_{., j}(a) for position j and value a
    table = ad.reshape(ad.transpose(U, (1, 2, 0)), (k * p, m))
    idx = inputs + (np.arange(k) * p)[None, :]
    picked = ad.gather_rows(table, idx)  # (n, k, m)
    hidden = ad.sum_(picked, axis=1)
    return ad.matmul(ad.integer_power(hidden, k), W)


def _mlp_norm(tensors: dict, k: int) -> ad.Tensor:
    U, W = tensors["U"], tensors["W"]
    sq = ad.add(ad.sum_(ad.mul(U, U), axis=(1, 2)), ad.sum_(ad.mul(W, W), axis=1))
    per_neuron = ad.power(sq, (k + 1) / 2.0)
    return ad.power(ad.sum_(per_neuron), 1.0 / (k + 1))


def _frobenius_norm(tensors: dict) -> ad.Tensor:
    total = None
    for name in sorted(tensors):
        t = tensors[name]
        part = ad.sum_(ad.mul(t, t))
        total = part if total is None else ad.add(total, part)
    return ad.sqrt(total)


def model_kind(model) -> str:
    if isinstance(model, MlpParams):
        return "mlp"
    if isinstance(model, AttnParams):
        return "attention"
    raise TypeError(f"unsupported model type {type(model).__name__}")


def model_arrays(model) -> dict[str, np.ndarray]:
    if isinstance(model, MlpParams):
        return {"U": model.U, "W": model.W}
    return dict(model.arrays)


def with_arrays(model, arrays: dict[str, np.ndarray]):
    if isinstance(model, MlpParams):
        return MlpParams(arrays["U"], arrays["W"])
    return AttnParams(model.cfg, {name: np.asarray(arrays[name]) for name in model.arrays})


def logits_tensor(model, tensors: dict, inputs) -> ad.Tensor:
    inputs = np.asarray(inputs, dtype=np.intp)
    if isinstance(model, MlpParams):
        if inputs.ndim != 2 or inputs.shape[1] != model.k:
            raise ValueError(f"expected inputs of shape (n, {model.k})")
        return _mlp_logits(tensors, inputs, model.k, model.p)
    return tf.forward_tensors(model.cfg, tensors, inputs)


def norm_tensor(model, tensors: dict) -> ad.Tensor:
    if isinstance(model, MlpParams):
        return _mlp_norm(tensors, model.k)
    return _frobenius_norm(tensors)


def predict(model, inputs) -> np.ndarray:
    if isinstance(model, MlpParams):
        return mlp_mod.forward_batch(model, inputs)
    return tf.forward_batch(model, inputs)


def objective_tensor(model, tensors: dict, inputs, labels, lam: float) -> tuple[ad.Tensor, ad.Tensor, ad.Tensor]:
    """``(total, data_loss, penalty)`` tensors for one batch."""
    data = ad.cross_entropy_rows(logits_tensor(model, tensors, inputs), labels)
    penalty = ad.scale(norm_tensor(model, tensors), lam)
    return ad.add(data, penalty), data, penalty


def regularized_loss(model, batch: ModAddDataset, lam: float) -> float:
    """Mean cross-entropy on ``batch`` plus ``lam`` times the model's norm."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    tensors = {n: ad.Tensor(a) for n, a in model_arrays(model).items()}
    total, _, _ = objective_tensor(model, tensors, batch.inputs, batch.labels, lam)
    return total.item()


def loss_and_grad(model, inputs, labels, lam: float) -> tuple[float, float, float, dict[str, np.ndarray]]:
    """Objective value, its two parts, and gradients with respect to every parameter array."""
    tensors = {n: ad.Tensor(a, requires_grad=True, name=n) for n, a in model_arrays(model).items()}
    with ad.Tape() as tape:
        total, data, penalty = objective_tensor(model, tensors, inputs, labels, lam)
    tape.backward(total)
    grads = {n: (t.grad if t.grad is not None else np.zeros_like(t.data)) for n, t in tensors.items()}
    return total.item(), data.item(), penalty.item(), grads


def accuracy(model, ds: ModAddDataset) -> float:
    """Fraction of points whose argmax logit equals the label; ties go to the smaller class."""
    if len(ds) == 0:
        raise ValueError("accuracy of an empty dataset is undefined")
    return float(np.mean(np.argmax(predict(model, ds.inputs), axis=1) == ds.labels))


def data_loss(model, ds: ModAddDataset) -> float:
    return ad.cross_entropy_rows(ad.Tensor(predict(model, ds.inputs)), ds.labels).item()


# ----------------------------------------------------------------------------
# optimizers


def warmup_factor(step: int, warmup: int) -> float:
    """Linear ramp ``(step+1)/warmup`` for the first ``warmup`` updates (``step`` counts from 0)."""
    if warmup <= 0:
        return 1.0
    return min(1.0, (step + 1) / warmup)


class SGD:
    def __init__(self, lr: float, weight_decay: float = 0.0, warmup: int = 0):
        self.lr, self.weight_decay, self.warmup = lr, weight_decay, warmup
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        lr = self.lr * warmup_factor(self.t, self.warmup)
        self.t += 1
        return {n: p - lr * (grads[n] + self.weight_decay * p) for n, p in params.items()}


class AdamW:
    """Adam with decoupled weight decay: ``theta <- theta - lr * (wd * theta + m_hat / (sqrt(v_hat) + eps))``."""

    def __init__(self, lr: float, betas=(0.9, 0.98), eps: float = 1e-8, weight_decay: float = 0.0, warmup: int = 0):
        self.lr, self.eps, self.weight_decay, self.warmup = lr, eps, weight_decay, warmup
        self.b1, self.b2 = betas
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        lr = self.lr * warmup_factor(self.t, self.warmup)
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        out = {}
        for n, p in params.items():
            g = grads[n]
            m = self.m.get(n, np.zeros_like(p))
            v = self.v.get(n, np.zeros_like(p))
            m = self.b1 * m + (1.0 - self.b1) * g
            v = self.b2 * v + (1.0 - self.b2) * g * g
            self.m[n], self.v[n] = m, v
            out[n] = p - lr * (self.weight_decay * p + (m / c1) / (np.sqrt(v / c2) + self.eps))
        return out


def make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return SGD(cfg.lr, cfg.weight_decay, cfg.warmup)
    return AdamW(cfg.lr, (cfg.beta1, cfg.beta2), cfg.eps, cfg.weight_decay, cfg.warmup)


# ----------------------------------------------------------------------------
# trace and metrics

TRACE_COLUMNS = ("step", "train_loss", "train_acc", "val_acc", "reg_term", "normalized_margin")


@dataclass(frozen=True)
class TraceRecord:
    step: int
    train_loss: float
    train_acc: float
    val_acc: float | None
    reg_term: float
    normalized_margin: float | None = None


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


@dataclass
class TrainTrace:
    records: list[TraceRecord] = field(default_factory=list)
    diverged_at: int | None = None

    def append(self, rec: TraceRecord) -> None:
        if self.records and rec.step <= self.records[-1].step:
            raise ValueError("trace steps must strictly increase")
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([np.nan if getattr(r, name) is None else getattr(r, name) for r in self.records], dtype=float)

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(TRACE_COLUMNS)
            for r in self.records:
                writer.writerow([_fmt(getattr(r, c)) for c in TRACE_COLUMNS])

    @classmethod
    def from_csv(cls, path) -> "TrainTrace":
        trace = cls()
        with open(Path(path), newline="") as fh:
            for row in csv.DictReader(fh):
                opt = lambda s: float(s) if s != "" else None  # noqa: E731
                trace.append(
                    TraceRecord(
                        int(row["step"]),
                        float(row["train_loss"]),
                        float(row["train_acc"]),
                        opt(row["val_acc"]),
                        float(row["reg_term"]),
                        opt(row["normalized_margin"]),
                    )
                )
        return trace


@dataclass(frozen=True)
class GrokMetrics:
    step_train: int | None
    step_val: int | None

    @property
    def delay(self) -> int | None:
        if self.step_train is None or self.step_val is None:
            return None
        return self.step_val - self.step_train

    @property
    def reached(self) -> bool:
        return self.step_train is not None and self.step_val is not None


def grokking_metrics(trace: TrainTrace, threshold: float = 0.99) -> GrokMetrics:
    """First evaluated steps where train and validation accuracy reach ``threshold``."""
    if len(trace) == 0:
        raise ValueError("empty trace")

    def first(attr):
        for r in trace.records:
            v = getattr(r, attr)
            if v is not None and v >= threshold:
                return r.step
        return None

    return GrokMetrics(first("train_acc"), first("val_acc"))


# ----------------------------------------------------------------------------
# training loop


class TrainingDiverged(RuntimeError):
    """Raised when the loss becomes non-finite; carries the last good state."""

    def __init__(self, step: int, model, trace: TrainTrace):
        super().__init__(f"loss became non-finite at step {step}")
        self.step, self.model, self.trace = step, model, trace


def init_model(cfg: TrainConfig):
    if cfg.model == "mlp":
        return MlpParams.random(cfg.p, cfg.k, cfg.m, cfg.init_scale, cfg.seed)
    return tf.init_transformer(cfg.attn_config())


def build_data(cfg: TrainConfig) -> tuple[ModAddDataset, ModAddDataset]:
    if cfg.sample_size:
        ds = generate_sampled(cfg.p, cfg.k, cfg.sample_size, cfg.seed)
    else:
        ds = generate_full(cfg.p, cfg.k)
    return split(ds, SplitSpec(cfg.train_fraction, cfg.seed))


class BatchStream:
    """Shuffled epochs from a seeded generator; the full set is used when it fits in one batch."""

    def __init__(self, n: int, batch_size: int, seed: int):
        self.n, self.batch_size = n, batch_size
        self.rng = np.random.default_rng([seed, 1])
        self.order = np.arange(n)
        self.pos = n

    def next(self) -> np.ndarray:
        if self.batch_size >= self.n:
            return np.arange(self.n)
        if self.pos >= self.n:
            self.order = self.rng.permutation(self.n)
            self.pos = 0
        idx = self.order[self.pos : self.pos + self.batch_size]
        self.pos += self.batch_size
        return idx


def evaluate(model, cfg: TrainConfig, step: int, train_ds, val_ds, full_ds=None) -> TraceRecord:
    tensors = {n: ad.Tensor(a) for n, a in model_arrays(model).items()}
    logits = predict(model, train_ds.inputs)
    loss = ad.cross_entropy_rows(ad.Tensor(logits), train_ds.labels).item()
    train_acc = float(np.mean(np.argmax(logits, axis=1) == train_ds.labels))
    val_acc = accuracy(model, val_ds) if len(val_ds) else None
    reg = cfg.lam * norm_tensor(model, tensors).item()
    margin = None
    if cfg.track_margin and isinstance(model, MlpParams):
        margin = mlp_mod.dataset_margin_h(model, full_ds if full_ds is not None else train_ds, keep_points=False)
        margin = margin.normalized_margin
    return TraceRecord(step, loss, train_acc, val_acc, reg, margin)


def train(cfg: TrainConfig, model=None, progress=None):
    """Run ``cfg.steps`` updates; returns ``(model, trace)``.

    Evaluation happens at step 0, every ``eval_interval`` updates and after the
    last update.  ``progress`` is called with each new trace record.
    """
    train_ds, val_ds = build_data(cfg)
    model = init_model(cfg) if model is None else model
    opt = make_optimizer(cfg)
    stream = BatchStream(len(train_ds), cfg.batch_size, cfg.seed)
    trace = TrainTrace()

    def record(step):
        rec = evaluate(model, cfg, step, train_ds, val_ds)
        trace.append(rec)
        if progress is not None:
            progress(rec)

    record(0)
    params = model_arrays(model)
    for step in range(cfg.steps):
        idx = stream.next()
        total, _, _, grads = loss_and_grad(model, train_ds.inputs[idx], train_ds.labels[idx], cfg.lam)
        if not math.isfinite(total) or not all(np.all(np.isfinite(g)) for g in grads.values()):
            trace.diverged_at = step
            raise TrainingDiverged(step, model, trace)
        new_params = opt.step(params, grads)
        if not all(np.all(np.isfinite(a)) for a in new_params.values()):
            trace.diverged_at = step
            raise TrainingDiverged(step, model, trace)
        params = new_params
        model = with_arrays(model, params)
        done = step + 1
        if done % cfg.eval_interval == 0 or done == cfg.steps:
            record(done)
    return model, trace


def sweep_seeds(cfg: TrainConfig, seeds=(0, 1, 2), progress=None):
    """Train one run per seed; returns ``[(seed, model, trace), ...]``."""
    out = []
    for s in seeds:
        run_cfg = replace(cfg, seed=s)
        model, trace = train(run_cfg, progress=progress)
        out.append((s, model, trace))
    return out
