"""Per-sample sparse inference against a fixed dictionary.

All routines take the dictionary ``D`` with shape ``(d_y, d_h)`` (atoms are
columns) and observations either as a single vector ``(d_y,)`` or as a batch
of rows ``(n, d_y)``.  Batch routines treat rows independently; results do not
depend on how a batch is split.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, NumericError

ACTIVE_THRESHOLD = 1e-8


@dataclass
class SolverConfig:
    lam: float = 0.1
    max_iters: int = 100
    step_size: float | str = "auto"
    tol: float = 1e-7
    momentum: bool = True
    restart: bool = True

    def __post_init__(self):
        if self.lam < 0:
            raise InvalidArgument(f"lambda must be >= 0, got {self.lam}")
        if self.max_iters < 0:
            raise InvalidArgument(f"max_iters must be >= 0, got {self.max_iters}")
        if self.tol < 0:
            raise InvalidArgument(f"tol must be >= 0, got {self.tol}")
        if self.step_size != "auto" and not float(self.step_size) > 0:
            raise InvalidArgument(f"step_size must be positive or 'auto', got {self.step_size}")


@dataclass
class SparseCode:
    values: np.ndarray
    objective: float
    iters_run: int
    residual_norm: float = float("nan")
    rank_deficient: bool = False
    support: np.ndarray = field(init=False)

    def __post_init__(self):
        self.support = np.flatnonzero(np.abs(self.values) > ACTIVE_THRESHOLD)


def soft_threshold(v, tau: float) -> np.ndarray:
    if tau < 0:
        raise InvalidArgument(f"tau must be >= 0, got {tau}")
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - tau, 0.0)


def lipschitz_constant(D: np.ndarray, n_iter: int = 50, tol: float = 1e-8) -> float:
    """Power-iteration estimate of the largest eigenvalue of ``D^T D``.

    The Rayleigh quotient approaches the top eigenvalue from below, so the
    estimate is inflated by 1% to keep ``1/L`` a safe step.
    """
    d_h = D.shape[1]
    if not np.any(D):
        return 0.0
    x = np.ones(d_h) / np.sqrt(d_h) + np.linspace(0.0, 1e-3, d_h)
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(n_iter):
        w = D.T @ (D @ x)
        new = float(x @ w)
        nrm = np.linalg.norm(w)
        if nrm == 0:
            break
        x = w / nrm
        if abs(new - est) <= tol * max(abs(new), 1e-300):
            est = new
            break
        est = new
    # Rayleigh quotient of the final iterate
    est = max(est, float(x @ (D.T @ (D @ x))))
    return 1.01 * est


def lasso_objective(Y, D, H, lam: float) -> np.ndarray:
    """``0.5 ||y - D h||^2 + lam ||h||_1`` per row (or a scalar for vectors)."""
    R = np.asarray(Y) - np.asarray(H) @ D.T
    return 0.5 * np.sum(R * R, axis=-1) + lam * np.sum(np.abs(H), axis=-1)


def _resolve_step(D, cfg: SolverConfig) -> float:
    if cfg.step_size == "auto":
        L = lipschitz_constant(D)
        return 1.0 / L if L > 0 else 1.0
    return float(cfg.step_size)


def fista_batch(Y, D, cfg: SolverConfig | None = None, init=None, trace: bool = False):
    """FISTA (or ISTA with ``momentum=False``) on every row of ``Y``.

    Returns ``(H, iters)`` or ``(H, iters, objective_trace)`` when ``trace``
    is set; the trace has shape ``(iterations + 1, n)``.  Rows stop
    individually once the relative code change drops below ``cfg.tol``.
    With ``cfg.restart`` the momentum of a row is reset whenever the step
    points against the gradient-mapping direction, which gives linear
    convergence once the support settles.
    """
    cfg = cfg or SolverConfig()
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    D = np.asarray(D, dtype=float)
    n, d_y = Y.shape
    d_h = D.shape[1]
    if D.shape[0] != d_y:
        raise InvalidArgument(f"dictionary has {D.shape[0]} rows, observations have {d_y}")
    if not (np.all(np.isfinite(Y)) and np.all(np.isfinite(D))):
        raise NumericError("non-finite observation or dictionary entries")

    if init is None:
        H = np.zeros((n, d_h))
    else:
        H = np.array(np.broadcast_to(np.atleast_2d(init), (n, d_h)), dtype=float)
        if not np.all(np.isfinite(H)):
            raise NumericError("non-finite initial code")

    eta = _resolve_step(D, cfg)
    thr = eta * cfg.lam
    # h <- S(W q + b), W = I - eta D^T D, b = eta D^T y.  When d_h is much
    # larger than d_y the factored gradient is cheaper and algebraically equal.
    precompute = d_h <= 2 * d_y
    if precompute:
        W = np.eye(d_h) - eta * (D.T @ D)
        B = eta * (Y @ D)

    H_prev = H.copy()
    t = np.ones(n)
    iters = np.zeros(n, dtype=np.int64)
    active = np.arange(n)
    history = [lasso_objective(Y, D, H, cfg.lam)] if trace else None

    for _ in range(cfg.max_iters):
        if active.size == 0:
            break
        Ha, Hp = H[active], H_prev[active]
        if cfg.momentum:
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t[active] ** 2))
            Q = Ha + ((t[active] - 1.0) / t_next)[:, None] * (Ha - Hp)
            t[active] = t_next
        else:
            Q = Ha
        if precompute:
            V = Q @ W + B[active]
        else:
            V = Q - eta * ((Q @ D.T - Y[active]) @ D)
        H_new = np.sign(V) * np.maximum(np.abs(V) - thr, 0.0)
        if not np.all(np.isfinite(H_new)):
            raise NumericError("FISTA iterate became non-finite")
        if cfg.momentum and cfg.restart:
            bad = np.einsum("ij,ij->i", Q - H_new, H_new - Ha) > 0
            t[active[bad]] = 1.0

        change = np.linalg.norm(H_new - Ha, axis=1) / np.maximum(1.0, np.linalg.norm(Ha, axis=1))
        H_prev[active] = Ha
        H[active] = H_new
        iters[active] += 1
        if history is not None:
            history.append(lasso_objective(Y, D, H, cfg.lam))
        active = active[change >= cfg.tol]

    if trace:
        return H, iters, np.array(history)
    return H, iters


def fista(y, D, cfg: SolverConfig | None = None, init=None) -> SparseCode:
    cfg = cfg or SolverConfig()
    y = np.asarray(y, dtype=float)
    H, iters = fista_batch(y[None, :], D, cfg, init=None if init is None else np.asarray(init)[None, :])
    h = H[0]
    return SparseCode(
        values=h,
        objective=float(lasso_objective(y, D, h, cfg.lam)),
        iters_run=int(iters[0]),
        residual_norm=float(np.linalg.norm(y - D @ h)),
    )


def matching_pursuit_batch(Y, D, T: int):
    """Classical matching pursuit on each row; atoms may be selected again.

    Selection uses the signed inner product ``d_j^T r`` (no absolute value)
    and ties go to the smallest index.  Returns ``(H, steps, R)`` with the
    final residuals ``R``.
    """
    if T < 1:
        raise InvalidArgument(f"T must be >= 1, got {T}")
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    D = np.asarray(D, dtype=float)
    n = Y.shape[0]
    H = np.zeros((n, D.shape[1]))
    R = Y.copy()
    steps = np.zeros(n, dtype=np.int64)
    rows = np.arange(n)
    scale = np.maximum(1.0, np.linalg.norm(Y, axis=1))
    for _ in range(T):
        live = np.linalg.norm(R, axis=1) > 1e-14 * scale
        if not live.any():
            break
        corr = R @ D
        j = np.argmax(corr, axis=1)
        c = np.where(live, corr[rows, j], 0.0)
        H[rows, j] += c
        R -= c[:, None] * D[:, j].T
        steps += live
    return H, steps, R


def matching_pursuit(y, D, T: int) -> SparseCode:
    y = np.asarray(y, dtype=float)
    H, steps, R = matching_pursuit_batch(y[None, :], D, T)
    res = float(np.linalg.norm(R[0]))
    return SparseCode(values=H[0], objective=0.5 * res**2, iters_run=int(steps[0]), residual_norm=res)


def lstsq_on_support(y, D, support) -> SparseCode:
    """Least-squares magnitudes restricted to ``support``; zero elsewhere.

    Rank-deficient subdictionaries get the minimum-norm solution and set
    ``rank_deficient``.
    """
    y = np.asarray(y, dtype=float)
    D = np.asarray(D, dtype=float)
    support = np.unique(np.asarray(support, dtype=np.int64))
    h = np.zeros(D.shape[1])
    deficient = False
    if support.size:
        sub = D[:, support]
        coef, _, rank, _ = np.linalg.lstsq(sub, y, rcond=None)
        deficient = rank < support.size
        h[support] = coef
    res = float(np.linalg.norm(y - D @ h))
    return SparseCode(values=h, objective=0.5 * res**2, iters_run=1, residual_norm=res, rank_deficient=deficient)


def lstsq_on_support_batch(Y, D, H_support) -> np.ndarray:
    """Re-estimate magnitudes of each row of ``Y`` on the nonzero pattern of ``H_support``."""
    Y = np.atleast_2d(Y)
    out = np.zeros_like(H_support, dtype=float)
    for i in range(Y.shape[0]):
        supp = np.flatnonzero(np.abs(H_support[i]) > ACTIVE_THRESHOLD)
        out[i] = lstsq_on_support(Y[i], D, supp).values
    return out
