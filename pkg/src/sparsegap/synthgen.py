"""Synthetic superposition data with a compositional ID/OOD split.

Latents ``z`` have exactly ``k`` active coordinates with Uniform(0, 1)
magnitudes and are observed through a row-normalised Gaussian mixing matrix,
``y = A z``.  The first latent is the label carrier (``t = 1{z_1 > 0.5}``).
In-distribution it co-occurs only with the lower half of the remaining
latents; the OOD split pairs it with the upper half instead.

Indices are 0-based here; latent 0 is the label carrier.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidArgument
from .seeding import derive_seed

FLOAT_FMT = "%.17g"


class Split(str, enum.Enum):
    ID_TRAIN = "id_train"
    ID_TEST = "id_test"
    OOD_TEST = "ood_test"


def cs_bound_dim(k: int, d_h: int) -> int:
    """Smallest ``d_y`` with ``d_y >= 2 k ln(d_h / k)``."""
    if k < 1:
        raise InvalidArgument(f"k must be >= 1, got {k}")
    if k >= d_h:
        raise InvalidArgument(f"k must be < d_h, got k={k}, d_h={d_h}")
    return int(math.ceil(2.0 * k * math.log(d_h / k)))


@dataclass(frozen=True)
class GenConfig:
    d_z: int
    k: int
    p: int
    seed: int = 0
    d_y: int | None = None

    def __post_init__(self):
        if self.d_z < 2:
            raise InvalidArgument(f"d_z must be >= 2, got {self.d_z}")
        if not 1 <= self.k <= self.d_z // 2:
            raise InvalidArgument(f"need 1 <= k <= d_z/2, got k={self.k}, d_z={self.d_z}")
        if self.p < 1:
            raise InvalidArgument(f"p must be >= 1, got {self.p}")
        if self.d_y is not None and self.d_y < 1:
            raise InvalidArgument(f"d_y must be >= 1, got {self.d_y}")

    @property
    def obs_dim(self) -> int:
        return self.d_y if self.d_y is not None else cs_bound_dim(self.k, self.d_z)


@dataclass(frozen=True)
class MixingMatrix:
    entries: np.ndarray  # (d_y, d_z)

    @property
    def shape(self):
        return self.entries.shape


@dataclass(frozen=True)
class Dataset:
    Z: np.ndarray  # (p, d_z)
    Y: np.ndarray  # (p, d_y)
    labels: np.ndarray  # (p,) int8
    split: Split

    def __len__(self):
        return self.Z.shape[0]

    def supports(self) -> list[np.ndarray]:
        return [np.flatnonzero(row) for row in self.Z]


def gen_mixing(d_y: int, d_z: int, seed: int) -> MixingMatrix:
    if d_y < 1 or d_z < d_y:
        raise InvalidArgument(f"need 1 <= d_y <= d_z, got d_y={d_y}, d_z={d_z}")
    rng = np.random.default_rng(derive_seed("mixing", int(seed), d_y, d_z))
    A = rng.standard_normal((d_y, d_z))
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    return MixingMatrix(A)


def _draw_without_replacement(rng, n_rows: int, pool: np.ndarray, m: int) -> np.ndarray:
    """``m`` distinct draws from ``pool`` for each of ``n_rows`` rows."""
    out = np.empty((n_rows, m), dtype=np.int64)
    if m == 0 or n_rows == 0:
        return out
    if m > pool.size:
        raise InvalidArgument(f"cannot draw {m} indices from a pool of {pool.size}")
    chunk = max(1, 4_000_000 // pool.size)
    for start in range(0, n_rows, chunk):
        stop = min(n_rows, start + chunk)
        keys = rng.random((stop - start, pool.size))
        if m < pool.size:
            idx = np.argpartition(keys, m - 1, axis=1)[:, :m]
        else:
            idx = np.argsort(keys, axis=1)
        out[start:stop] = pool[idx]
    return out


def sample_split(cfg: GenConfig, A: MixingMatrix, split: Split | str) -> Dataset:
    """Draw ``cfg.p`` samples of the requested split.

    ID samples flip a fair coin: heads activates latent 0 plus ``k - 1``
    latents from ``[1, d_z/2)``; tails activates ``k`` latents from
    ``[1, d_z)``.  OOD samples activate latent 0 plus ``k - 1`` latents from
    ``[d_z/2, d_z)``.
    """
    split = Split(split)
    d_z, k, p = cfg.d_z, cfg.k, cfg.p
    if d_z % 2:
        raise InvalidArgument(f"d_z must be even, got {d_z}")
    if A.entries.shape[1] != d_z:
        raise InvalidArgument(f"mixing matrix has {A.entries.shape[1]} columns, expected {d_z}")
    half = d_z // 2
    if k - 1 > half - 1:
        raise InvalidArgument(f"k-1={k - 1} exceeds the pool of {half - 1} indices")

    rng = np.random.default_rng(
        derive_seed("split", int(cfg.seed), split.value, d_z, k, A.entries.shape[0], p)
    )
    support = np.empty((p, k), dtype=np.int64)
    if split is Split.OOD_TEST:
        support[:, 0] = 0
        support[:, 1:] = _draw_without_replacement(rng, p, np.arange(half, d_z), k - 1)
    else:
        with_first = rng.random(p) < 0.5
        n_a = int(with_first.sum())
        rows_a = np.flatnonzero(with_first)
        rows_b = np.flatnonzero(~with_first)
        support[rows_a, 0] = 0
        support[rows_a, 1:] = _draw_without_replacement(rng, n_a, np.arange(1, half), k - 1)
        support[rows_b] = _draw_without_replacement(rng, p - n_a, np.arange(1, d_z), k)

    Z = np.zeros((p, d_z))
    Z[np.arange(p)[:, None], support] = rng.random((p, k))
    Y = Z @ A.entries.T
    labels = (Z[:, 0] > 0.5).astype(np.int8)
    return Dataset(Z=Z, Y=Y, labels=labels, split=split)


def write_dataset_csv(path, ds: Dataset, append: bool = False) -> None:
    path = Path(path)
    d_z, d_y = ds.Z.shape[1], ds.Y.shape[1]
    new = not (append and path.exists())
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(
                ["sample_id", "split"]
                + [f"z_{j + 1}" for j in range(d_z)]
                + [f"y_{j + 1}" for j in range(d_y)]
                + ["label"]
            )
        for i in range(len(ds)):
            w.writerow(
                [i, ds.split.value]
                + [FLOAT_FMT % v for v in ds.Z[i]]
                + [FLOAT_FMT % v for v in ds.Y[i]]
                + [int(ds.labels[i])]
            )


def read_dataset_csv(path) -> dict[str, Dataset]:
    """Inverse of :func:`write_dataset_csv`; one Dataset per split present."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    d_z = sum(1 for h in header if h.startswith("z_"))
    d_y = sum(1 for h in header if h.startswith("y_"))
    out = {}
    for split in Split:
        sel = [r for r in body if r[1] == split.value]
        if not sel:
            continue
        arr = np.array([[float(v) for v in r[2:2 + d_z + d_y]] for r in sel])
        out[split.value] = Dataset(
            Z=arr[:, :d_z],
            Y=arr[:, d_z:],
            labels=np.array([int(r[-1]) for r in sel], dtype=np.int8),
            split=split,
        )
    return out


def write_matrix_csv(path, M: np.ndarray) -> None:
    np.savetxt(path, np.atleast_2d(M), delimiter=",", fmt=FLOAT_FMT)


def read_matrix_csv(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", ndmin=2))
