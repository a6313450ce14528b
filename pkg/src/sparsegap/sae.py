"""Shallow sparse autoencoders with a linear, unit-norm decoder.

Encoder kinds:

* ``relu``      h = max(0, W_enc (y - b_pre) + b_enc)
* ``jumprelu``  pre-activation zeroed wherever it is <= a learned per-unit threshold
* ``topk``      ReLU followed by keeping the k largest entries (ties -> smallest index)
* ``mp``        T steps of matching pursuit on ``y - b_pre`` against ``W_dec``

Gradients are written out by hand; ``loss_and_grads`` is what the optimiser
consumes and what the finite-difference tests check.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, NumericError
from .metrics import dict_diagnostics
from .solvers import matching_pursuit_batch

log = logging.getLogger(__name__)

KINDS = ("relu", "jumprelu", "topk", "mp")
JUMP_BANDWIDTH = 1e-3
JUMP_THETA_INIT = 1e-3


@dataclass(frozen=True)
class SaeKind:
    name: str
    k: int | None = None  # TopK budget
    T: int | None = None  # MP steps

    def __post_init__(self):
        if self.name not in KINDS:
            raise InvalidArgument(f"unknown SAE kind {self.name!r}")
        if self.name == "topk" and not (self.k and self.k >= 1):
            raise InvalidArgument("topk needs k >= 1")
        if self.name == "mp" and not (self.T and self.T >= 1):
            raise InvalidArgument("mp needs T >= 1")

    @property
    def label(self) -> str:
        return {"relu": "ReLU", "jumprelu": "JumpReLU", "topk": "TopK", "mp": "MP"}[self.name]

    @classmethod
    def make(cls, name: str, k: int):
        """Kind with the sparsity budget set from the generating ``k``."""
        if name == "topk":
            return cls(name, k=k)
        if name == "mp":
            return cls(name, T=k)
        return cls(name)


@dataclass
class SaeModel:
    W_enc: np.ndarray  # (d_h, d_y)
    b_enc: np.ndarray  # (d_h,)
    W_dec: np.ndarray  # (d_y, d_h)
    b_pre: np.ndarray  # (d_y,)
    kind: SaeKind
    theta: np.ndarray | None = None  # JumpReLU thresholds (d_h,)

    @property
    def d_h(self):
        return self.W_dec.shape[1]

    @property
    def d_y(self):
        return self.W_dec.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        p = {"W_enc": self.W_enc, "b_enc": self.b_enc, "W_dec": self.W_dec, "b_pre": self.b_pre}
        if self.theta is not None:
            p["theta"] = self.theta
        return p

    def copy(self) -> "SaeModel":
        return SaeModel(
            self.W_enc.copy(), self.b_enc.copy(), self.W_dec.copy(), self.b_pre.copy(), self.kind,
            None if self.theta is None else self.theta.copy(),
        )


@dataclass
class SaeTrainConfig:
    epochs: int = 200
    batch_size: int = 256
    learning_rate: float = 1e-3
    gamma_reg: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidArgument("epochs must be >= 1")
        if self.batch_size < 1:
            raise InvalidArgument("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise InvalidArgument("learning_rate must be positive")
        if self.gamma_reg < 0:
            raise InvalidArgument("gamma_reg must be >= 0")


@dataclass
class TrainTrace:
    epoch: list[int] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    mean_cosine: list[float] = field(default_factory=list)


def _unit_columns(W):
    n = np.linalg.norm(W, axis=0)
    n[n == 0] = 1.0
    return W / n


def init_sae(d_y: int, d_h: int, kind: SaeKind, rng, b_pre=None, W_dec=None) -> SaeModel:
    """Random unit-norm decoder with the encoder tied to its transpose."""
    if W_dec is None:
        W_dec = _unit_columns(rng.standard_normal((d_y, d_h)))
    else:
        W_dec = _unit_columns(np.array(W_dec, dtype=float))
    return SaeModel(
        W_enc=W_dec.T.copy(),
        b_enc=np.zeros(d_h),
        W_dec=W_dec,
        b_pre=np.zeros(d_y) if b_pre is None else np.array(b_pre, dtype=float),
        kind=kind,
        theta=np.full(d_h, JUMP_THETA_INIT) if kind.name == "jumprelu" else None,
    )


def _topk_mask(r, k):
    if k >= r.shape[1]:
        return r > 0
    order = np.argsort(-r, axis=1, kind="stable")[:, :k]
    mask = np.zeros(r.shape, dtype=bool)
    np.put_along_axis(mask, order, True, axis=1)
    return mask & (r > 0)


def _mp_forward(X, W_dec, T):
    """Unrolled MP, always T steps; returns codes and the tape for backprop."""
    n = X.shape[0]
    rows = np.arange(n)
    H = np.zeros((n, W_dec.shape[1]))
    R = X.copy()
    tape = []
    for _ in range(T):
        corr = R @ W_dec
        j = np.argmax(corr, axis=1)
        c = corr[rows, j]
        tape.append((j, c, R))
        H[rows, j] += c
        R = R - c[:, None] * W_dec[:, j].T
    return H, tape


def _forward(model: SaeModel, Y):
    X = np.atleast_2d(np.asarray(Y, float)) - model.b_pre
    kind = model.kind
    if kind.name == "mp":
        H, tape = _mp_forward(X, model.W_dec, kind.T)
        return X, None, H, tape
    pre = X @ model.W_enc.T + model.b_enc
    if kind.name == "relu":
        gate = pre > 0
    elif kind.name == "jumprelu":
        gate = pre > model.theta
    else:
        gate = _topk_mask(pre, kind.k)
    return X, pre, np.where(gate, pre, 0.0), gate


def encode(model: SaeModel, Y) -> np.ndarray:
    """Codes for one observation ``(d_y,)`` or a batch ``(n, d_y)``."""
    Y = np.asarray(Y, float)
    if model.kind.name == "mp":
        H = matching_pursuit_batch(np.atleast_2d(Y) - model.b_pre, model.W_dec, model.kind.T)[0]
    else:
        H = _forward(model, Y)[2]
    return H[0] if Y.ndim == 1 else H


def decode(model: SaeModel, H) -> np.ndarray:
    return np.asarray(H, float) @ model.W_dec.T + model.b_pre


def loss_and_grads(model: SaeModel, Y, gamma: float):
    """Mean squared reconstruction error plus ``gamma * mean ||h||_1``.

    ``gamma`` only applies to ReLU and JumpReLU; the hard-sparsity kinds
    ignore it.
    """
    Y = np.atleast_2d(np.asarray(Y, float))
    n = Y.shape[0]
    kind = model.kind.name
    if kind in ("topk", "mp"):
        gamma = 0.0
    X, pre, H, aux = _forward(model, Y)
    E = H @ model.W_dec.T + model.b_pre - Y
    loss = float(np.sum(E * E) / n + gamma * np.sum(np.abs(H)) / n)

    gE = 2.0 * E / n
    g = {name: np.zeros_like(p) for name, p in model.params().items()}
    g["W_dec"] += gE.T @ H
    g["b_pre"] += gE.sum(axis=0)
    gH = gE @ model.W_dec + (gamma / n) * np.sign(H)

    if kind == "mp":
        rows = np.arange(n)
        gR = np.zeros_like(X)
        gWT = np.zeros_like(model.W_dec.T)  # (d_h, d_y)
        for j, c, R_prev in reversed(aux):
            d = model.W_dec[:, j].T  # (n, d_y)
            gc = gH[rows, j] - np.sum(d * gR, axis=1)
            np.add.at(gWT, j, -c[:, None] * gR + gc[:, None] * R_prev)
            gR = gR + gc[:, None] * d
        g["W_dec"] += gWT.T
        gX = gR
    else:
        gpre = gH * aux
        if kind == "jumprelu":
            # straight-through pseudo-derivative of the gate w.r.t. the threshold
            window = np.abs(pre - model.theta) < 0.5 * JUMP_BANDWIDTH
            g["theta"] += np.sum(gH * (-model.theta / JUMP_BANDWIDTH) * window, axis=0)
        g["W_enc"] += gpre.T @ X
        g["b_enc"] += gpre.sum(axis=0)
        gX = gpre @ model.W_enc
    g["b_pre"] -= gX.sum(axis=0)
    return loss, g


class _Adam:
    def __init__(self, params, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for k, p in params.items():
            gk = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * gk
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * gk * gk
            p -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def _project_decoder_grad(W_dec, gW):
    """Drop the component of each column gradient along its (unit) column."""
    return gW - W_dec * np.sum(W_dec * gW, axis=0)


def train_sae(Y, kind: SaeKind, cfg: SaeTrainConfig | None = None, truth=None, d_h: int | None = None,
              init_decoder=None) -> tuple[SaeModel, TrainTrace]:
    """Mini-batch Adam on the SAE objective.

    ``d_h`` defaults to the column count of ``truth``.  The per-epoch trace
    holds the mean batch loss and, when ``truth`` is given, the matched mean
    |cosine| between decoder and true columns.
    """
    cfg = cfg or SaeTrainConfig()
    Y = np.asarray(Y, float)
    A = None if truth is None else np.asarray(getattr(truth, "entries", truth), float)
    if d_h is None:
        if A is None:
            raise InvalidArgument("d_h is required when no ground-truth dictionary is given")
        d_h = A.shape[1]
    n, d_y = Y.shape
    rng = np.random.default_rng(cfg.seed)
    model = init_sae(d_y, d_h, kind, rng, b_pre=Y.mean(axis=0), W_dec=init_decoder)
    params = model.params()
    opt = _Adam(params, cfg.learning_rate)
    trace = TrainTrace()

    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            loss, grads = loss_and_grads(model, Y[idx], cfg.gamma_reg)
            if not np.isfinite(loss):
                raise NumericError(f"SAE ({kind.name}) loss diverged at epoch {epoch}")
            grads["W_dec"] = _project_decoder_grad(model.W_dec, grads["W_dec"])
            opt.step(params, grads)
            model.W_dec[...] = _unit_columns(model.W_dec)
            if model.theta is not None:
                np.maximum(model.theta, 0.0, out=model.theta)
            total += loss * idx.size
        trace.epoch.append(epoch)
        trace.loss.append(total / n)
        trace.mean_cosine.append(dict_diagnostics(model.W_dec, A)[0] if A is not None else float("nan"))
    for name, p in model.params().items():
        if not np.all(np.isfinite(p)):
            raise NumericError(f"SAE parameter {name} is non-finite after training")
    log.debug("trained %s SAE: final loss %.4g", kind.name, trace.loss[-1])
    return model, trace
