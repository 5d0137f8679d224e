"""Alternating block gradient descent over freshly queued ranking matrices."""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import metrics
from ._random import substream
from .data import IMPLICIT
from .objective import FactorModel, grad_fast, loss
from .perm_model import stochastic_queue

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"SQLRANK\0"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<8sIQQQ")


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    r: int = 10
    lam: float = 0.1
    ss: float = 0.01
    rate: float = 0.99
    rho: float = 3.0
    k: int | str = "full"
    epochs: int = 100
    seed: int = 0
    init_scale: float = 0.1
    patience: float = math.inf
    sq: bool = True

    def __post_init__(self):
        if self.r < 1:
            raise ValueError("rank must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.ss < 0:
            raise ValueError("step size must be non-negative")
        if not 0 < self.rate <= 1:
            raise ValueError("decay rate must lie in (0, 1]")
        if self.rho < 0:
            raise ValueError("rho must be non-negative")
        if self.k != "full" and int(self.k) < 1:
            raise ValueError("k must be a positive integer or 'full'")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.init_scale < 0:
            raise ValueError("init_scale must be non-negative")

    @property
    def cutoff(self):
        return None if self.k == "full" else int(self.k)

    def to_dict(self):
        d = asdict(self)
        d["patience"] = None if math.isinf(self.patience) else self.patience
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("patience") is None:
            d["patience"] = math.inf
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        known = cls.__dataclass_fields__
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class TrainState:
    model: FactorModel
    epoch: int = 0
    current_ss: float = 0.0
    best_validation: float = -math.inf
    history: list = field(default_factory=list)
    initial_loss: float | None = None
    frozen_pi: object = None

    def snapshot(self):
        return replace(self, model=self.model.copy(), history=list(self.history))


def init_model(cfg, n, m, rng):
    """Gaussian factors with standard deviation ``cfg.init_scale``."""
    U = cfg.init_scale * rng.standard_normal((cfg.r, n))
    V = cfg.init_scale * rng.standard_normal((cfg.r, m))
    return FactorModel(U, V)


def initial_state(cfg, n, m):
    model = init_model(cfg, n, m, substream(cfg.seed, "init"))
    return TrainState(model=model, current_ss=cfg.ss)


def draw_permutations(train, cfg, epoch):
    return stochastic_queue(train, cfg.rho,
                            rng=substream(cfg.seed, "sq", epoch),
                            neg_rng=substream(cfg.seed, "negatives", epoch))


def train_epoch(state, train, cfg, rng=None, threads=None):
    """One U step then one V step on a single queued ranking matrix.

    ``rng`` overrides the per-epoch queuing stream derived from ``cfg.seed``.
    With ``cfg.sq`` false the first matrix drawn is reused for every epoch.
    """
    if cfg.sq or state.frozen_pi is None:
        if rng is not None:
            pi = stochastic_queue(train, cfg.rho, rng=rng)
        else:
            pi = draw_permutations(train, cfg, state.epoch)
        if not cfg.sq:
            state.frozen_pi = pi
    else:
        pi = state.frozen_pi
    k = cfg.cutoff
    model = state.model
    if state.initial_loss is None:
        state.initial_loss = loss(model, pi, k, cfg.lam, threads).total

    ss = state.current_ss
    gU, _ = grad_fast(model, pi, k, cfg.lam, threads)
    model.U = model.U - ss * gU
    ss *= cfg.rate
    _, gV = grad_fast(model, pi, k, cfg.lam, threads)
    model.V = model.V - ss * gV
    ss *= cfg.rate

    state.epoch += 1
    state.current_ss = ss
    value = loss(model, pi, k, cfg.lam, threads).total
    if not math.isfinite(value) or (state.initial_loss > 0 and value > 10 * state.initial_loss):
        raise DivergenceError(
            f"loss diverged to {value:.6g} at epoch {state.epoch} "
            f"(step size {ss / cfg.rate ** 2:.6g})")
    state.history.append({"epoch": state.epoch, "loss": value})
    return state


def validation_score(model, train, valid):
    """Precision@1 for implicit data, NDCG@10 for explicit data."""
    if valid.mode == IMPLICIT:
        return metrics.precision_at_k_implicit(model, train, valid, [1]).precision[1]
    return metrics.ndcg_at_k(model, train, valid, 10)


def fit(train, valid, cfg, threads=None, callback=None):
    """Train up to ``cfg.epochs`` epochs with early stopping on ``valid``.

    Returns a snapshot of the state at the best validation epoch (the
    initialization counts as epoch 0). ``callback(state)`` is invoked after
    every epoch with the live state.
    """
    if valid is not None and (valid.n != train.n or valid.m != train.m):
        raise ValueError("train and validation index spaces differ")
    state = initial_state(cfg, train.n, train.m)
    use_valid = valid is not None and len(valid) > 0
    if not use_valid:
        log.warning("empty validation set; running a fixed %d epochs", cfg.epochs)
    if use_valid:
        state.best_validation = validation_score(state.model, train, valid)
    best = state.snapshot()
    stale = 0
    for _ in range(cfg.epochs):
        train_epoch(state, train, cfg, threads=threads)
        if use_valid:
            score = validation_score(state.model, train, valid)
            state.history[-1]["validation"] = score
            if score > state.best_validation:
                state.best_validation = score
                best = state.snapshot()
                stale = 0
            else:
                stale += 1
        if callback is not None:
            callback(state)
        if use_valid and stale >= cfg.patience:
            log.info("early stop after %d epochs without improvement", stale)
            break
    if not use_valid:
        best = state.snapshot()
    best.best_validation = state.best_validation
    return best


def save_checkpoint(model, path):
    """Binary header ``(magic, version, n, m, r)`` then row-major U and V, little-endian f64."""
    with Path(path).open("wb") as fh:
        fh.write(_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, model.n, model.m, model.r))
        fh.write(np.ascontiguousarray(model.U, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.V, dtype="<f8").tobytes())


def load_checkpoint(path):
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated checkpoint")
    magic, version, n, m, r = _HEADER.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if len(body) != r * (n + m):
        raise ValueError(f"{path}: size does not match header")
    U = body[: r * n].reshape(r, n).astype(float)
    V = body[r * n:].reshape(r, m).astype(float)
    return FactorModel(U, V)


def save_sidecar(cfg, history, path, extra=None):
    doc = {"config": cfg.to_dict(), "history": history}
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")
