"""Experiment drivers.

A sweep is expanded into independent cells (one per outer grid point and
replicate).  Each cell draws its own data and trains its own models, so cells
can run in any order or in separate processes; records are sorted before they
are returned.
"""

from __future__ import annotations

import itertools
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..dictlearn import DlConfig, dl_fista
from ..errors import DegenerateGeometry, InvalidArgument
from ..metrics import MetricRow, dict_diagnostics, dictionary_matching, mcc, per_feature_auc, support_metrics
from ..probes import eval_accuracy, fit_logistic, fit_ridge
from ..sae import SaeKind, SaeTrainConfig, encode, train_sae
from ..seeding import derive_seed
from ..solvers import SolverConfig, fista_batch, lstsq_on_support_batch
from ..synthgen import GenConfig, Split, cs_bound_dim, gen_mixing, sample_split
from ..theory import ToyGeometry, analytic_ood_accuracy, classify_case, simulate_ood_accuracy
from .config import SAE_METHODS, ExperimentConfig

log = logging.getLogger(__name__)

# grid keys swept inside a cell (they share trained models)
INNER_KEYS = {"warmstart-decoder": "round", "warmstart-encoder": "iters", "lambda-sweep": "lam"}


@dataclass
class ExperimentRecord:
    experiment: str
    method: str
    params: dict
    seed: int
    record_seed: int
    metrics: dict
    variant: str = ""
    status: str = "ok"
    wall_time: float = 0.0

    def sort_key(self):
        return (self.experiment, _sortable_params(self.params), self.method, self.variant, self.seed)


def _sortable_params(params):
    out = []
    for key in sorted(params):
        v = params[key]
        out.append((key, (0, float(v), "") if isinstance(v, (int, float)) else (1, 0.0, str(v))))
    return tuple(out)


@dataclass
class CellData:
    d_z: int
    k: int
    d_y: int
    A: np.ndarray
    train: object
    probe: object
    id_test: object
    ood_test: object
    data_seed: int


@dataclass
class Cell:
    cfg: ExperimentConfig
    point: dict
    replicate: int
    models: dict = field(default_factory=dict)

    def method_seed(self, method, variant=""):
        items = tuple(sorted(self.point.items()))
        return derive_seed(self.cfg.master_seed, self.cfg.experiment, items, method, variant, self.replicate)

    def record(self, method, metrics, variant="", extra=None, status="ok", started=None):
        params = dict(self.point)
        params.update(extra or {})
        return ExperimentRecord(
            experiment=self.cfg.experiment, method=method, params=params, seed=self.replicate,
            record_seed=self.method_seed(method, variant), metrics=metrics, variant=variant, status=status,
            wall_time=0.0 if started is None else time.perf_counter() - started,
        )


def make_data(master_seed: int, replicate: int, d_z: int, k: int, p: int, d_y: int, p_test: int) -> CellData:
    """Datasets for one cell.  Test and probe sets do not depend on ``p``."""
    data_seed = derive_seed(master_seed, "data", replicate, d_z, k, d_y)
    A = gen_mixing(d_y, d_z, data_seed)
    train = sample_split(GenConfig(d_z, k, p, seed=data_seed, d_y=d_y), A, Split.ID_TRAIN)
    probe = sample_split(GenConfig(d_z, k, p_test, seed=derive_seed(data_seed, "probe"), d_y=d_y), A,
                         Split.ID_TRAIN)
    test_cfg = GenConfig(d_z, k, p_test, seed=data_seed, d_y=d_y)
    return CellData(d_z, k, d_y, A.entries, train, probe,
                    sample_split(test_cfg, A, Split.ID_TEST), sample_split(test_cfg, A, Split.OOD_TEST), data_seed)


# ----------------------------------------------------------------- evaluation

def score_codes(data: CellData, encode_fn, opts, W=None, supervised=True) -> dict:
    """Full metric row for a code map ``encode_fn: Y -> H``.

    Support metrics read codes through the decoder-column matching when a
    dictionary ``W`` is given, otherwise through the ID MCC matching.
    """
    H_id = encode_fn(data.id_test.Y)
    H_ood = encode_fn(data.ood_test.Y)
    row = MetricRow()
    row.mcc_id, match_id = mcc(H_id, data.id_test.Z)
    row.mcc_ood = mcc(H_ood, data.ood_test.Z)[0]
    row.auc_id, row.auc_ood, _ = per_feature_auc(H_id, data.id_test.labels, H_ood, data.ood_test.labels)
    if supervised:
        probe = fit_logistic(encode_fn(data.probe.Y), data.probe.labels, l2=opts["probe_l2"])
        row.acc_id = eval_accuracy(probe, H_id, data.id_test.labels)
        row.acc_ood = eval_accuracy(probe, H_ood, data.ood_test.labels)
    matching = dictionary_matching(W, data.A) if W is not None else match_id
    row.support_precision, row.support_recall, row.support_f1, row.mean_active = support_metrics(
        H_id, data.id_test.Z, matching)
    if W is not None:
        row.dict_cosine, row.dict_angle, row.dict_norm_ratio, _ = dict_diagnostics(W, data.A)
    return row.as_dict()


def score_mcc(data: CellData, encode_fn) -> dict:
    H_id = encode_fn(data.id_test.Y)
    return {"mcc_id": mcc(H_id, data.id_test.Z)[0], "mcc_ood": mcc(encode_fn(data.ood_test.Y), data.ood_test.Z)[0],
            "mean_active": float(np.mean(np.count_nonzero(np.abs(H_id) > 1e-8, axis=1)))}


def _fista_map(D, lam, iters, offset=None):
    cfg = SolverConfig(lam=lam, max_iters=iters)
    shift = 0.0 if offset is None else offset
    return lambda Y: fista_batch(np.asarray(Y) - shift, D, cfg)[0]


def _get_sae(cell: Cell, data: CellData, method: str):
    if method not in cell.models:
        o = cell.cfg.options
        kind = SaeKind.make(method.removeprefix("sae_"), data.k)
        tc = SaeTrainConfig(epochs=o["sae_epochs"], batch_size=o["sae_batch"], learning_rate=o["sae_lr"],
                            gamma_reg=o["sae_gamma"], seed=cell.method_seed(method))
        cell.models[method] = train_sae(data.train.Y, kind, tc, truth=data.A, d_h=data.d_z)[0]
    return cell.models[method]


def _get_dl(cell: Cell, data: CellData):
    if "dl_fista" not in cell.models:
        o = cell.cfg.options
        dc = DlConfig(d_h=data.d_z, lam=o["dl_lam"], rounds=o["dl_rounds"],
                      inner=SolverConfig(lam=o["dl_lam"], max_iters=o["dl_iters"]), seed=cell.method_seed("dl_fista"))
        cell.models["dl_fista"] = dl_fista(data.train.Y, dc, truth=data.A).W
    return cell.models["dl_fista"]


def run_base_method(cell: Cell, data: CellData, method: str) -> ExperimentRecord:
    o = cell.cfg.options
    t0 = time.perf_counter()
    if method == "fista_oracle":
        m = score_codes(data, _fista_map(data.A, o["oracle_lam"], o["oracle_iters"]), o, W=data.A)
    elif method == "dl_fista":
        W = _get_dl(cell, data)
        m = score_codes(data, _fista_map(W, o["dl_lam"], o["dl_iters"]), o, W=W)
    elif method in SAE_METHODS:
        model = _get_sae(cell, data, method)
        m = score_codes(data, lambda Y: encode(model, Y), o, W=model.W_dec)
    elif method == "linear_probe":
        ridge = fit_ridge(data.train.Y, data.train.Z, alpha=o["ridge_alpha"])
        m = score_codes(data, ridge.predict, o)
    else:
        raise InvalidArgument(f"method {method!r} needs an SAE-specific experiment")
    return cell.record(method, m, started=t0)


# ----------------------------------------------------------------- cells

def _dims(cfg: ExperimentConfig, point):
    d_z, k = int(point["d_z"]), int(point["k"])
    if "delta" in point:
        return d_z, k, int(round(float(point["delta"]) * d_z))
    return d_z, k, cs_bound_dim(k, d_z)


def _sae_methods(cfg):
    return [m for m in cfg.methods if m in SAE_METHODS]


def _cell_sweep(cell: Cell, data: CellData):
    return [run_base_method(cell, data, m) for m in cell.cfg.methods]


def _cell_frozen(cell: Cell, data: CellData):
    o = cell.cfg.options
    recs = []
    want = set(cell.cfg.methods)
    for method in _sae_methods(cell.cfg):
        model = _get_sae(cell, data, method)
        kind = method.removeprefix("sae_")
        recs.append(run_base_method(cell, data, method))
        frozen = _fista_map(model.W_dec, o["frozen_lam"], o["frozen_iters"], model.b_pre)
        if "frozen_fista" in want:
            t0 = time.perf_counter()
            recs.append(cell.record("frozen_fista", score_codes(data, frozen, o, W=model.W_dec), kind, started=t0))
        if "refined" in want:
            t0 = time.perf_counter()
            cfg = SolverConfig(lam=o["frozen_lam"], max_iters=o["frozen_iters"])

            def refined(Y, model=model, cfg=cfg):
                X = np.asarray(Y) - model.b_pre
                return fista_batch(X, model.W_dec, cfg, init=encode(model, Y))[0]
            recs.append(cell.record("refined", score_codes(data, refined, o, W=model.W_dec), kind, started=t0))
    for method in ("dl_fista", "fista_oracle"):
        if method in want:
            recs.append(run_base_method(cell, data, method))
    return recs


def _cell_warmstart_decoder(cell: Cell, data: CellData):
    o = cell.cfg.options
    rounds = sorted({int(r) for r in cell.cfg.grid["round"]})
    recs = []

    def curve(init, variant):
        t0 = time.perf_counter()
        got = {}
        fc = SolverConfig(lam=o["dl_lam"], max_iters=o["dl_iters"])

        def cb(r, W):
            if r in rounds:
                got[r] = score_mcc(data, lambda Y: fista_batch(Y, W, fc)[0])
        dc = DlConfig(d_h=data.d_z, lam=o["dl_lam"], rounds=max(rounds), inner=fc,
                      seed=cell.method_seed("dl_fista", variant), init_dictionary=init)
        dl_fista(data.train.Y, dc, callback=cb)
        for r in rounds:
            recs.append(cell.record("dl_fista", got[r], variant, {"round": r}, started=t0))

    if "dl_fista" in cell.cfg.methods:
        curve(None, "init=random")
    for method in _sae_methods(cell.cfg):
        curve(_get_sae(cell, data, method).W_dec, f"init={method}")
    oracle = score_mcc(data, _fista_map(data.A, o["oracle_lam"], o["oracle_iters"]))
    for r in rounds:
        recs.append(cell.record("fista_oracle", oracle, "", {"round": r}))
    return recs


def code_gap(H_a, H_b) -> float:
    return float(np.max(np.linalg.norm(H_a - H_b, axis=1)))


def _cell_warmstart_encoder(cell: Cell, data: CellData):
    o = cell.cfg.options
    recs = []
    Y = data.id_test.Y
    for method in _sae_methods(cell.cfg):
        model = _get_sae(cell, data, method)
        kind = method.removeprefix("sae_")
        enc = score_mcc(data, lambda Yx: encode(model, Yx))
        X_id = Y - model.b_pre
        for iters in sorted({int(i) for i in cell.cfg.grid["iters"]}):
            cfg = SolverConfig(lam=o["frozen_lam"], max_iters=iters)
            cold = fista_batch(X_id, model.W_dec, cfg)[0]
            warm = fista_batch(X_id, model.W_dec, cfg, init=encode(model, Y))[0]
            gap = code_gap(cold, warm)
            recs.append(cell.record(method, enc, "", {"iters": iters}))
            if "frozen_fista" in cell.cfg.methods:
                m = score_mcc(data, _fista_map(model.W_dec, o["frozen_lam"], iters, model.b_pre))
                recs.append(cell.record("frozen_fista", {**m, "code_gap": gap}, kind, {"iters": iters}))
            if "refined" in cell.cfg.methods:
                def refined(Yx, cfg=cfg):
                    return fista_batch(np.asarray(Yx) - model.b_pre, model.W_dec, cfg, init=encode(model, Yx))[0]
                recs.append(cell.record("refined", {**score_mcc(data, refined), "code_gap": gap}, kind,
                                        {"iters": iters}))
    return recs


def _cell_lambda(cell: Cell, data: CellData):
    o = cell.cfg.options
    recs = []
    lams = sorted({float(v) for v in cell.cfg.grid["lam"]})
    for method in _sae_methods(cell.cfg):
        model = _get_sae(cell, data, method)
        kind = method.removeprefix("sae_")
        enc = score_mcc(data, lambda Y: encode(model, Y))
        for lam in lams:
            recs.append(cell.record(method, enc, "", {"lam": lam}))
            if "frozen_fista" in cell.cfg.methods:
                m = score_mcc(data, _fista_map(model.W_dec, lam, o["frozen_iters"], model.b_pre))
                recs.append(cell.record("frozen_fista", m, kind, {"lam": lam}))
    if "fista_oracle" in cell.cfg.methods:
        for lam in lams:
            recs.append(cell.record("fista_oracle", score_mcc(data, _fista_map(data.A, lam, o["oracle_iters"])), "",
                                    {"lam": lam}))
    return recs


def _cell_support(cell: Cell, data: CellData):
    o = cell.cfg.options
    recs = []
    for method in _sae_methods(cell.cfg):
        model = _get_sae(cell, data, method)
        kind = method.removeprefix("sae_")
        t0 = time.perf_counter()
        recs.append(cell.record(method, score_codes(data, lambda Y: encode(model, Y), o, W=model.W_dec),
                                "encoder", started=t0))

        def relsq(Y, model=model):
            X = np.asarray(Y) - model.b_pre
            return lstsq_on_support_batch(X, model.W_dec, encode(model, Y))
        t0 = time.perf_counter()
        recs.append(cell.record(method, score_codes(data, relsq, o, W=model.W_dec), "lstsq_support", started=t0))
        if "frozen_fista" in cell.cfg.methods:
            frozen = _fista_map(model.W_dec, o["frozen_lam"], o["frozen_iters"], model.b_pre)
            t0 = time.perf_counter()
            recs.append(cell.record("frozen_fista", score_codes(data, frozen, o, W=model.W_dec), kind, started=t0))
    if "fista_oracle" in cell.cfg.methods:
        recs.append(run_base_method(cell, data, "fista_oracle"))
    return recs


_CELL_RUNNERS = {
    "phase": _cell_sweep, "vary-latents": _cell_sweep, "vary-samples": _cell_sweep, "vary-sparsity": _cell_sweep,
    "frozen": _cell_frozen, "warmstart-decoder": _cell_warmstart_decoder,
    "warmstart-encoder": _cell_warmstart_encoder, "lambda-sweep": _cell_lambda, "support": _cell_support,
}

_NAN_ROW = MetricRow().as_dict()


def run_cell(cfg: ExperimentConfig, point: dict, replicate: int):
    cell = Cell(cfg, point, replicate)
    if cfg.experiment == "theory-grid":
        return _theory_cell(cell)
    d_z, k, d_y = _dims(cfg, point)
    if d_y < 1 or k > d_z // 2:
        log.warning("skipping infeasible cell %s (d_y=%d)", point, d_y)
        return [cell.record(m, dict(_NAN_ROW), status="skipped") for m in cfg.methods]
    data = make_data(cfg.master_seed, replicate, d_z, k, int(point["p"]), d_y, int(cfg.options["p_test"]))
    recs = _CELL_RUNNERS[cfg.experiment](cell, data)
    for r in recs:
        r.params.setdefault("d_y", d_y)
    return recs


def _theory_cell(cell: Cell):
    phi, theta = float(cell.point["phi"]), float(cell.point["theta"])
    n = int(cell.cfg.options["mc_samples"])
    nan = {"analytic": math.nan, "simulated": math.nan, "abs_diff": math.nan, "mc_samples": float(n)}
    try:
        g = ToyGeometry(phi * math.pi, theta * math.pi)
        case, _ = classify_case(g)
        a = analytic_ood_accuracy(g)
    except (DegenerateGeometry, InvalidArgument):
        return [cell.record("theory", nan, status="skipped")]
    s = simulate_ood_accuracy(g, n, seed=cell.method_seed("theory"))
    return [cell.record("theory", {"analytic": a, "simulated": s, "abs_diff": abs(a - s), "mc_samples": float(n)},
                        case.value)]


def expand_cells(cfg: ExperimentConfig):
    inner = INNER_KEYS.get(cfg.experiment)
    keys = sorted(k for k in cfg.grid if k != inner)
    for values in itertools.product(*(cfg.grid[k] for k in keys)):
        for rep in cfg.seeds:
            yield dict(zip(keys, values)), rep


def _run_packed(args):
    return run_cell(*args)


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> list[ExperimentRecord]:
    jobs = [(cfg, point, rep) for point, rep in expand_cells(cfg)]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(_run_packed, jobs))
    else:
        chunks = [_run_packed(j) for j in jobs]
    records = [r for chunk in chunks for r in chunk]
    records.sort(key=ExperimentRecord.sort_key)
    return records
