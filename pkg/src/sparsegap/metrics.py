"""Identifiability and diagnostic metrics.

MCC convention: absolute Pearson correlation, Hungarian-matched, averaged over
the matched pairs.  Latent columns that are constant on the evaluated split
(e.g. latents that never activate OOD) carry no variation to recover and are
left out of the matching; constant code columns correlate 0 with everything.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import rankdata

from .errors import InvalidArgument
from .solvers import ACTIVE_THRESHOLD


@dataclass
class Matching:
    rows: np.ndarray  # code / estimated-column indices
    cols: np.ndarray  # latent / ground-truth column indices
    scores: np.ndarray

    @property
    def assignment(self) -> dict[int, int]:
        return {int(r): int(c) for r, c in zip(self.rows, self.cols)}

    def __len__(self):
        return self.rows.size


@dataclass
class MetricRow:
    mcc_id: float = float("nan")
    mcc_ood: float = float("nan")
    auc_id: float = float("nan")
    auc_ood: float = float("nan")
    acc_id: float = float("nan")
    acc_ood: float = float("nan")
    support_precision: float = float("nan")
    support_recall: float = float("nan")
    support_f1: float = float("nan")
    mean_active: float = float("nan")
    dict_cosine: float = float("nan")
    dict_angle: float = float("nan")
    dict_norm_ratio: float = float("nan")

    def as_dict(self):
        return asdict(self)


def hungarian(cost) -> Matching:
    """Minimum-cost injective assignment of rows to columns."""
    cost = np.asarray(cost, dtype=float)
    if not np.all(np.isfinite(cost)):
        raise InvalidArgument("cost matrix has non-finite entries")
    r, c = linear_sum_assignment(cost)
    return Matching(rows=r, cols=c, scores=cost[r, c])


def _standardise(X):
    X = np.asarray(X, dtype=float)
    Xc = X - X.mean(axis=0)
    sd = np.sqrt(np.mean(Xc * Xc, axis=0))
    const = sd <= 1e-12 * np.maximum(1.0, np.abs(X).max(axis=0))
    out = np.zeros_like(Xc)
    out[:, ~const] = Xc[:, ~const] / sd[~const]
    return out, const


def correlation_matrix(H, Z):
    """Pearson correlations ``(d_h, d_z)``; constant columns give 0."""
    Hs, _ = _standardise(H)
    Zs, zconst = _standardise(Z)
    return Hs.T @ Zs / Hs.shape[0], zconst


def mcc(H, Z) -> tuple[float, Matching]:
    H = np.asarray(H, dtype=float)
    Z = np.asarray(Z, dtype=float)
    if H.shape[0] != Z.shape[0]:
        raise InvalidArgument("codes and latents need the same number of rows")
    if H.shape[0] < 2:
        raise InvalidArgument("mcc needs at least 2 samples")
    corr, zconst = correlation_matrix(H, Z)
    varying = np.flatnonzero(~zconst)
    if varying.size == 0:
        return 0.0, Matching(np.array([], int), np.array([], int), np.array([]))
    absc = np.abs(corr[:, varying])
    m = hungarian(1.0 - absc)
    scores = absc[m.rows, m.cols]
    return float(scores.mean()), Matching(rows=m.rows, cols=varying[m.cols], scores=scores)


def _auc_columns(X, t):
    """ROC AUC of every column of ``X`` as a score for binary ``t`` (ties averaged)."""
    t = np.asarray(t).astype(bool)
    n_pos, n_neg = int(t.sum()), int((~t).sum())
    ranks = rankdata(X, axis=0)
    u = ranks[t].sum(axis=0) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def per_feature_auc(H_id, t_id, H_ood, t_ood) -> tuple[float, float, int]:
    """Best single-feature AUC chosen on ID data, reported on both splits.

    The feature and its orientation are fixed on ID and reused unchanged on
    OOD.
    """
    for name, t in (("ID", t_id), ("OOD", t_ood)):
        t = np.asarray(t)
        if t.min() == t.max():
            raise InvalidArgument(f"{name} labels contain a single class")
    auc_id = _auc_columns(np.asarray(H_id, float), t_id)
    oriented = np.maximum(auc_id, 1.0 - auc_id)
    j = int(np.argmax(oriented))
    flip = auc_id[j] < 0.5
    a_ood = float(_auc_columns(np.asarray(H_ood, float)[:, [j]], t_ood)[0])
    return float(oriented[j]), (1.0 - a_ood) if flip else a_ood, j


def support_metrics(H, Z, matching: Matching, threshold: float = ACTIVE_THRESHOLD):
    """Per-sample support precision/recall/F1 after reindexing codes.

    Code index ``r`` is read as latent ``matching.assignment[r]``; active code
    units without a partner always count as false positives.  Returns
    ``(precision, recall, f1, mean_active)`` averaged over samples (a sample
    with no predictions has precision 0).
    """
    H = np.asarray(H, float)
    Z = np.asarray(Z, float)
    n, d_h = H.shape
    to_latent = np.full(d_h, -1, dtype=np.int64)
    to_latent[matching.rows] = matching.cols
    pred = np.abs(H) > threshold
    true = np.abs(Z) > threshold
    matched = to_latent >= 0
    mapped = np.zeros_like(true)
    rows, cols = np.nonzero(pred[:, matched])
    mapped[rows, to_latent[matched][cols]] = True
    tp = np.sum(mapped & true, axis=1)
    n_pred = pred.sum(axis=1)
    n_true = true.sum(axis=1)
    prec = np.divide(tp, n_pred, out=np.zeros(n), where=n_pred > 0)
    rec = np.divide(tp, n_true, out=np.zeros(n), where=n_true > 0)
    denom = prec + rec
    f1 = np.divide(2 * prec * rec, denom, out=np.zeros(n), where=denom > 0)
    return float(prec.mean()), float(rec.mean()), float(f1.mean()), float(n_pred.mean())


def column_cosines(W_hat, A) -> np.ndarray:
    W_hat = np.asarray(W_hat, float)
    A = np.asarray(A, float)
    nw = np.linalg.norm(W_hat, axis=0)
    na = np.linalg.norm(A, axis=0)
    Wn = np.divide(W_hat, nw, out=np.zeros_like(W_hat), where=nw > 0)
    An = np.divide(A, na, out=np.zeros_like(A), where=na > 0)
    return Wn.T @ An


def dictionary_matching(W_hat, A) -> Matching:
    """Match estimated columns to true columns on ``1 - |cosine|``."""
    absc = np.abs(column_cosines(W_hat, A))
    m = hungarian(1.0 - absc)
    return Matching(rows=m.rows, cols=m.cols, scores=absc[m.rows, m.cols])


def dict_diagnostics(W_hat, A):
    """Matched mean |cosine|, mean angle (radians), mean norm ratio, per-column table.

    The table has one dict per matched pair; zero columns are flagged and
    contribute cosine 0 and ratio 0.
    """
    W_hat = np.asarray(W_hat, float)
    A = np.asarray(getattr(A, "entries", A), float)
    if W_hat.shape[0] != A.shape[0]:
        raise InvalidArgument("dictionaries need the same row dimension")
    m = dictionary_matching(W_hat, A)
    nw = np.linalg.norm(W_hat, axis=0)[m.rows]
    na = np.linalg.norm(A, axis=0)[m.cols]
    cos = np.clip(m.scores, 0.0, 1.0)
    angle = np.arccos(cos)
    ratio = np.divide(nw, na, out=np.zeros_like(nw), where=na > 0)
    table = [
        {"est_col": int(r), "true_col": int(c), "cosine": float(cs), "angle": float(a),
         "norm_ratio": float(q), "zero_column": bool(w == 0)}
        for r, c, cs, a, q, w in zip(m.rows, m.cols, cos, angle, ratio, nw)
    ]
    return float(cos.mean()), float(angle.mean()), float(ratio.mean()), table
