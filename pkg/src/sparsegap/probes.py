"""Supervised baselines: a ridge map from activations to latents and a logistic head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument


@dataclass
class RidgeProbe:
    B: np.ndarray  # (d_z, d_y)
    c: np.ndarray  # (d_z,)
    alpha: float

    def predict(self, Y) -> np.ndarray:
        return np.asarray(Y, float) @ self.B.T + self.c


def fit_ridge(Y_train, Z_train, alpha: float = 1e-3) -> RidgeProbe:
    """Closed-form ridge regression with an unpenalised intercept."""
    if alpha < 0:
        raise InvalidArgument(f"alpha must be >= 0, got {alpha}")
    Y = np.asarray(Y_train, float)
    Z = np.asarray(Z_train, float)
    my, mz = Y.mean(axis=0), Z.mean(axis=0)
    Yc, Zc = Y - my, Z - mz
    G = Yc.T @ Yc + alpha * np.eye(Y.shape[1])
    B = np.linalg.lstsq(G, Yc.T @ Zc, rcond=None)[0].T
    return RidgeProbe(B=B, c=mz - B @ my, alpha=alpha)


@dataclass
class LogisticProbe:
    a: np.ndarray
    a0: float
    iters: int = 0
    grad_norm: float = float("nan")

    def decision(self, H) -> np.ndarray:
        return np.asarray(H, float) @ self.a + self.a0

    def predict_proba(self, H) -> np.ndarray:
        return _sigmoid(self.decision(H))


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def fit_logistic(H_train, t_train, l2: float = 1e-4, max_iter: int = 500, gtol: float = 1e-6) -> LogisticProbe:
    """Penalised logistic regression on raw codes.

    Full-batch Nesterov-accelerated gradient descent with backtracking on the
    mean negative log-likelihood plus ``0.5 * l2 * ||a||^2`` (intercept not
    penalised), restarted whenever the objective goes up.  Stops once the
    gradient norm reaches ``gtol`` or after ``max_iter`` iterations.
    """
    if l2 < 0:
        raise InvalidArgument(f"l2 must be >= 0, got {l2}")
    X = np.asarray(H_train, float)
    t = np.asarray(t_train, float)
    if t.min() == t.max():
        raise InvalidArgument("training labels contain a single class")
    n, d = X.shape
    Xa = np.hstack([X, np.ones((n, 1))])
    reg = np.full(d + 1, l2)
    reg[-1] = 0.0

    def f_and_g(w):
        s = Xa @ w
        f = np.mean(np.logaddexp(0.0, s) - t * s) + 0.5 * np.sum(reg * w * w)
        g = Xa.T @ (_sigmoid(s) - t) / n + reg * w
        return f, g

    w = np.zeros(d + 1)
    w[-1] = np.log(t.mean() / (1 - t.mean()))
    v = w.copy()
    mom = 1.0
    fw = f_and_g(w)[0]
    # logistic curvature is at most ||Xa||^2 / (4 n)
    step = 4.0 * n / max(np.linalg.norm(Xa, 2) ** 2, 1e-12)
    gnorm = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        fv, gv = f_and_g(v)
        while True:
            w_new = v - step * gv
            f_new = f_and_g(w_new)[0]
            if f_new <= fv - 0.5 * step * (gv @ gv) or step < 1e-16:
                break
            step *= 0.5
        if f_new > fw:
            # restart momentum from the last accepted point
            v, mom = w.copy(), 1.0
            continue
        mom_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * mom * mom))
        v = w_new + ((mom - 1.0) / mom_next) * (w_new - w)
        w, fw, mom = w_new, f_new, mom_next
        gnorm = float(np.linalg.norm(f_and_g(w)[1]))
        if gnorm <= gtol:
            break
        step *= 1.1
    return LogisticProbe(a=w[:-1].copy(), a0=float(w[-1]), iters=it, grad_norm=gnorm)


def eval_accuracy(probe: LogisticProbe, H, t) -> float:
    pred = probe.predict_proba(H) > 0.5
    return float(np.mean(pred == np.asarray(t).astype(bool)))
