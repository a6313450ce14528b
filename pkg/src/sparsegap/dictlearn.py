"""Alternating-minimisation dictionary learning with FISTA inference (DL-FISTA)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument
from .metrics import dict_diagnostics
from .solvers import ACTIVE_THRESHOLD, SolverConfig, fista_batch
from .synthgen import write_matrix_csv

RIDGE_EPS = 1e-8


@dataclass
class DlConfig:
    d_h: int
    lam: float = 0.03
    rounds: int = 200
    inner: SolverConfig = field(default_factory=lambda: SolverConfig(lam=0.03, max_iters=100))
    seed: int = 0
    init_dictionary: np.ndarray | None = None  # overrides the seeded random init
    relax: float = 1.8  # over-relaxation of the dictionary step, 1 = plain
    replace_every: int = 5  # 0 disables atom replacement
    replace_count: int = 3
    replace_until: int = 120  # no replacement after this round
    warm_codes: bool = True  # start each round's FISTA from the previous codes

    def __post_init__(self):
        if self.rounds < 0:
            raise InvalidArgument("rounds must be >= 0")
        if self.lam < 0:
            raise InvalidArgument("lambda must be >= 0")
        if not 1.0 <= self.relax < 2.0:
            raise InvalidArgument("relax must lie in [1, 2)")
        if self.replace_every < 0 or self.replace_count < 0:
            raise InvalidArgument("replacement settings must be >= 0")


@dataclass
class LearnedDictionary:
    W: np.ndarray  # (d_y, d_h)
    loss: list[float] = field(default_factory=list)
    cosine: list[float] = field(default_factory=list)

    @property
    def round_trace(self):
        return list(zip(range(1, len(self.loss) + 1), self.loss, self.cosine))


def random_dictionary(d_y: int, d_h: int, seed: int) -> np.ndarray:
    W = np.random.default_rng(seed).standard_normal((d_y, d_h))
    return W / np.linalg.norm(W, axis=0)


def project_columns(W: np.ndarray) -> np.ndarray:
    """Scale every column with norm above 1 back onto the unit sphere."""
    n = np.linalg.norm(W, axis=0)
    return W / np.maximum(n, 1.0)


def reconstruction_loss(Y, W, H) -> float:
    R = np.asarray(Y) - np.asarray(H) @ np.asarray(W).T
    return float(np.sum(R * R))


def _column_sweeps(W, YtH, G, cols, sweeps):
    """Exact per-column minimisation under ``||w_j|| <= 1``, in index order.

    With the other columns fixed the loss is isotropic in ``w_j``, so the
    ball projection of the unconstrained minimiser is the constrained one and
    every step is monotone.
    """
    for _ in range(sweeps):
        for j in cols:
            w = W[:, j] + (YtH[:, j] - W @ G[:, j]) / G[j, j]
            W[:, j] = w / max(1.0, np.linalg.norm(w))
    return W


def update_dictionary(Y, H, W_prev, sweeps: int = 1) -> np.ndarray:
    """Least-squares dictionary step, column-ball projection, then ``sweeps``
    block-coordinate passes.

    The first step is ``W = Y^T H (H^T H + eps I)^{-1}`` on the atoms some
    sample uses, projected column-wise onto the unit ball.  Projection alone
    can overshoot, so the coordinate passes start from whichever of that
    candidate and ``W_prev`` fits better; the result never fits worse than
    ``W_prev``.  Unused atoms keep their previous column.
    """
    Y = np.asarray(Y, float)
    H = np.asarray(H, float)
    W_prev = np.asarray(W_prev, float)
    if Y.shape[0] != H.shape[0] or W_prev.shape != (Y.shape[1], H.shape[1]):
        raise InvalidArgument("inconsistent shapes for the dictionary update")
    used = np.flatnonzero(np.any(np.abs(H) > ACTIVE_THRESHOLD, axis=0))
    W = W_prev.copy()
    if used.size == 0:
        return W
    Hu = H[:, used]
    G = Hu.T @ Hu
    YtH = Y.T @ Hu
    W[:, used] = project_columns(np.linalg.solve(G + RIDGE_EPS * np.eye(used.size), YtH.T).T)
    if reconstruction_loss(Y, W, H) > reconstruction_loss(Y, W_prev, H):
        W = W_prev.copy()
    Wu = _column_sweeps(W[:, used].copy(), YtH, G, range(used.size), sweeps)
    W[:, used] = Wu
    return W


def relaxed_step(Y, H, W_prev, omega: float) -> np.ndarray:
    """Over-relaxed dictionary step ``W_prev + omega (W_new - W_prev)``, projected.

    Falls back to the plain step when the extrapolated dictionary fits the
    fixed codes worse than ``W_prev``, so the fit never degrades.
    """
    W_new = update_dictionary(Y, H, W_prev)
    if omega == 1.0:
        return W_new
    W_rel = project_columns(W_prev + omega * (W_new - W_prev))
    if reconstruction_loss(Y, W_rel, H) <= reconstruction_loss(Y, W_prev, H):
        return W_rel
    return W_new


def replace_weak_atoms(Y, H, W, count: int):
    """Swap the ``count`` atoms with the least total code mass for the
    normalised residuals of the worst-reconstructed samples (in place).

    Atoms stuck on mixtures of rarely active directions carry little code
    mass; the residuals of poorly fit samples point at what is missing.
    Deterministic: ties resolve by index.
    """
    R = Y - H @ W.T
    err = np.sum(R * R, axis=1)
    worst = np.argsort(-err, kind="stable")[:count]
    worst = worst[err[worst] > 0]
    weak = np.argsort(np.abs(H).sum(axis=0), kind="stable")[:worst.size]
    W[:, weak] = (R[worst] / np.linalg.norm(R[worst], axis=1, keepdims=True)).T
    H[:, weak] = 0.0
    return weak


def dl_fista(Y, cfg: DlConfig, truth=None, callback=None) -> LearnedDictionary:
    """Learn a dictionary from the rows of ``Y``.

    Each round infers codes for all samples under the current dictionary and
    then takes an (over-relaxed) :func:`update_dictionary` step.  Every
    ``replace_every`` rounds up to ``replace_until``, the weakest atoms are
    re-seeded from residuals.  ``callback(round, W)`` runs after every round
    (round 0 is the initial dictionary).
    """
    Y = np.asarray(Y, float)
    if Y.ndim != 2 or Y.shape[0] < 1:
        raise InvalidArgument("Y must be a non-empty (p, d_y) matrix")
    d_y = Y.shape[1]
    if cfg.init_dictionary is not None:
        W = project_columns(np.array(cfg.init_dictionary, dtype=float))
        if W.shape != (d_y, cfg.d_h):
            raise InvalidArgument(f"initial dictionary has shape {W.shape}, expected {(d_y, cfg.d_h)}")
    else:
        W = random_dictionary(d_y, cfg.d_h, cfg.seed)
    A = None if truth is None else np.asarray(getattr(truth, "entries", truth), float)
    inner = SolverConfig(
        lam=cfg.lam, max_iters=cfg.inner.max_iters, step_size=cfg.inner.step_size,
        tol=cfg.inner.tol, momentum=cfg.inner.momentum, restart=cfg.inner.restart,
    )
    out = LearnedDictionary(W=W)
    if callback is not None:
        callback(0, W)
    H = None
    for r in range(1, cfg.rounds + 1):
        H, _ = fista_batch(Y, W, inner, init=H if cfg.warm_codes else None)
        W = relaxed_step(Y, H, W, cfg.relax)
        if cfg.replace_every and r % cfg.replace_every == 0 and r <= cfg.replace_until and cfg.replace_count:
            replace_weak_atoms(Y, H, W, cfg.replace_count)
        out.loss.append(reconstruction_loss(Y, W, H) / Y.shape[0])
        out.cosine.append(dict_diagnostics(W, A)[0] if A is not None else float("nan"))
        if callback is not None:
            callback(r, W)
    out.W = W
    return out


def save_checkpoint(prefix, learned: LearnedDictionary) -> None:
    """``{prefix}.csv`` holds the matrix, ``{prefix}.json`` the last round's stats."""
    write_matrix_csv(f"{prefix}.csv", learned.W)
    last = {"round": len(learned.loss),
            "loss": learned.loss[-1] if learned.loss else None,
            "cosine": learned.cosine[-1] if learned.cosine else None}
    with open(f"{prefix}.json", "w") as fh:
        json.dump(last, fh, indent=2, sort_keys=True)
