"""Regularized MCQA loss, adaptive-moment optimizer, train and eval loops."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, TextIO

import numpy as np

from .autodiff import Parameter, Tensor, add, cross_entropy, load_parameters, log1p_abs, save_parameters, scale, sub, tanh, tsum
from .data import McqaExample
from .matching import OmegaParams
from .encoders import Vocabulary
from .model import ModelConfig, PreparedExample, QATModel

SIGMAS = {"tanh": tanh, "log1p-abs": log1p_abs}
METRIC_FIELDS = ("step", "loss", "ce", "reg", "accuracy")


class NonFiniteLoss(FloatingPointError):
    pass


class EmptyDataset(ValueError):
    pass


@dataclass(frozen=True)
class LossConfig:
    lam: float = 10.0
    sigma: str = "tanh"

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.sigma not in SIGMAS:
            raise ValueError(f"sigma must be one of {sorted(SIGMAS)}, got {self.sigma!r}")


def regularizer(omegas: OmegaParams, sigma: str = "tanh") -> Tensor:
    """Sum of sigma(omega) over every layer, head and both slots."""
    f = SIGMAS[sigma]
    return add(tsum(f(omegas.omega1)), tsum(f(omegas.omega2)))


def loss(choice_logits: Tensor, target, omegas: OmegaParams | None, cfg: LossConfig) -> tuple[Tensor, Tensor, Tensor | None]:
    """Cross-entropy minus ``lam`` times the bias regularizer.

    Returns ``(total, ce, reg)``; with ``lam == 0`` or no bias parameters the
    total is the cross-entropy tensor itself.
    """
    if choice_logits.shape[-1] < 2:
        raise ValueError("need at least two choices")
    ce = cross_entropy(choice_logits, target)
    if omegas is None or cfg.lam == 0:
        return ce, ce, None
    reg = regularizer(omegas, cfg.sigma)
    return sub(ce, scale(reg, cfg.lam)), ce, reg


class Adam:
    """Adam with linear warmup; ``rectify=True`` gives RAdam's variance rectification."""

    def __init__(
        self,
        params: dict[str, Parameter],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        warmup_steps: int = 0,
        rectify: bool = False,
    ):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.warmup_steps = warmup_steps
        self.rectify = rectify
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def lr_at(self, t: int) -> float:
        if self.warmup_steps > 0 and t < self.warmup_steps:
            return self.lr * t / self.warmup_steps
        return self.lr

    def step(self):
        self.t += 1
        t = self.t
        lr = self.lr_at(t)
        b1, b2 = self.beta1, self.beta2
        rho_inf = 2.0 / (1.0 - b2) - 1.0
        rho_t = rho_inf - 2.0 * t * b2**t / (1.0 - b2**t)
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            m_hat = self.m[k] / (1 - b1**t)
            if self.rectify and rho_t <= 4.0:
                p.data -= lr * m_hat
                continue
            v_hat = self.v[k] / (1 - b2**t)
            r = 1.0
            if self.rectify:
                r = math.sqrt((rho_t - 4) * (rho_t - 2) * rho_inf / ((rho_inf - 4) * (rho_inf - 2) * rho_t))
            p.data -= lr * r * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {"t": np.array(float(self.t))}
        for k in self.params:
            out[f"m/{k}"] = self.m[k]
            out[f"v/{k}"] = self.v[k]
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]):
        self.t = int(state["t"])
        for k in self.params:
            self.m[k] = np.array(state[f"m/{k}"], copy=True)
            self.v[k] = np.array(state[f"v/{k}"], copy=True)


@dataclass
class TrainState:
    model: QATModel
    optimizer: Adam
    loss_cfg: LossConfig = field(default_factory=LossConfig)
    drop_rate: float = 0.0
    seed: int = 0
    step: int = 0
    rng: np.random.Generator = None

    def __post_init__(self):
        if self.rng is None:
            self.rng = np.random.default_rng(self.seed)


def make_state(
    model: QATModel,
    lr: float = 1e-3,
    warmup_steps: int = 0,
    rectify: bool = False,
    loss_cfg: LossConfig | None = None,
    drop_rate: float = 0.0,
    seed: int = 0,
    trainable: Callable[[str], bool] | None = None,
) -> TrainState:
    """``trainable`` filters parameter names; the rest stay frozen."""
    params = {k: p for k, p in model.named_parameters() if trainable is None or trainable(k)}
    opt = Adam(params, lr=lr, warmup_steps=warmup_steps, rectify=rectify)
    return TrainState(model, opt, loss_cfg or LossConfig(), drop_rate, seed)


def _prepared(model: QATModel, batch) -> list[PreparedExample]:
    return [ex if isinstance(ex, PreparedExample) else model.prepare_example(ex) for ex in batch]


def train_step(batch: Sequence[PreparedExample | McqaExample], state: TrainState) -> dict[str, float]:
    """Forward all choices, regularized loss, backward, one optimizer update."""
    model = state.model
    batch = _prepared(model, batch)
    logits, _ = model.choice_logits(batch, training=True, rng=state.rng, drop_rate=state.drop_rate)
    targets = np.array([ex.answer for ex in batch])
    total, ce, reg = loss(logits, targets, model.omega, state.loss_cfg)
    if not np.isfinite(total.data):
        raise NonFiniteLoss(
            f"step {state.step + 1}: loss={float(total.data)} ce={float(ce.data)} "
            f"reg={None if reg is None else float(reg.data)}"
        )
    model.zero_grad()
    total.backward()
    state.optimizer.step()
    state.step += 1
    pred = np.argmax(logits.data, axis=1)
    return {
        "step": state.step,
        "loss": float(total.data),
        "ce": float(ce.data),
        "reg": 0.0 if reg is None else float(reg.data),
        "accuracy": float(np.mean(pred == targets)),
    }


@dataclass
class EvalResult:
    accuracy: float
    predictions: list[int]
    logits: list[np.ndarray]
    answers: list[int]


def evaluate(model: QATModel, dataset: Sequence[PreparedExample | McqaExample], batch_size: int = 64) -> EvalResult:
    """Argmax accuracy; ties go to the lowest choice index."""
    if len(dataset) == 0:
        raise EmptyDataset("cannot evaluate an empty dataset")
    preds, all_logits, answers = [], [], []
    for lo in range(0, len(dataset), batch_size):
        batch = _prepared(model, dataset[lo : lo + batch_size])
        logits, _ = model.choice_logits(batch)
        for ex, row in zip(batch, logits.data):
            row = row[: len(ex.choices)]
            preds.append(int(np.argmax(row)))
            all_logits.append(row.copy())
            answers.append(ex.answer)
    acc = float(np.mean(np.array(preds) == np.array(answers)))
    return EvalResult(acc, preds, all_logits, answers)


def format_metrics(m: dict) -> str:
    return "\t".join(str(m[k]) if k == "step" else repr(float(m[k])) for k in METRIC_FIELDS)


def fit(
    state: TrainState,
    dataset: Sequence[PreparedExample | McqaExample],
    epochs: int,
    batch_size: int = 16,
    log: TextIO | None = None,
) -> list[dict]:
    """Shuffled mini-batch training; writes one tab-separated metrics line per step."""
    prepared = _prepared(state.model, dataset)
    history = []
    for _ in range(epochs):
        order = state.rng.permutation(len(prepared))
        for lo in range(0, len(order), batch_size):
            m = train_step([prepared[i] for i in order[lo : lo + batch_size]], state)
            history.append(m)
            if log is not None:
                log.write(format_metrics(m) + "\n")
    return history


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, state: TrainState, extra: dict | None = None):
    """Parameters, optimizer moments, step counter and RNG state in one archive."""
    model = state.model
    arrays = {f"param/{k}": v for k, v in model.state_dict().items()}
    arrays.update({f"optim/{k}": v for k, v in state.optimizer.state_dict().items()})
    meta = {
        "model_config": model.config.to_dict(),
        "vocab": model.vocab.tokens,
        "step": state.step,
        "seed": state.seed,
        "drop_rate": state.drop_rate,
        "loss": {"lam": state.loss_cfg.lam, "sigma": state.loss_cfg.sigma},
        "optimizer": {
            "lr": state.optimizer.lr,
            "warmup_steps": state.optimizer.warmup_steps,
            "rectify": state.optimizer.rectify,
            "params": list(state.optimizer.params),
        },
        "rng": state.rng.bit_generator.state,
        **(extra or {}),
    }
    save_parameters(path, arrays, meta)


def load_checkpoint(path, embeddings=None) -> tuple[TrainState, dict]:
    """Rebuild the model and training state saved by :func:`save_checkpoint`."""
    arrays, meta = load_parameters(path)
    cfg = ModelConfig(**meta["model_config"])
    vocab = Vocabulary.from_tokens(meta["vocab"])
    model = QATModel(cfg, vocab, seed=0, embeddings=embeddings)
    model.load_state_dict({k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")})
    named = dict(model.named_parameters())
    o = meta["optimizer"]
    opt = Adam({k: named[k] for k in o["params"]}, lr=o["lr"], warmup_steps=o["warmup_steps"], rectify=o["rectify"])
    opt.load_state_dict({k[len("optim/"):]: v for k, v in arrays.items() if k.startswith("optim/")})
    state = TrainState(model, opt, LossConfig(**meta["loss"]), meta["drop_rate"], meta["seed"], meta["step"])
    state.rng.bit_generator.state = meta["rng"]
    return state, meta
