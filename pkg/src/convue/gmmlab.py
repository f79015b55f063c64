"""Gaussian-mixture laboratory for multiplicative poisoning.

Clean data is ``x ~ N(y * mu, I)`` with ``y in {+1, -1}``. A convolution-based
UE is modelled as ``x_u = A_y x`` with a tridiagonal ``A_y`` (unit diagonal,
off-diagonals ``a_y``). The defense left-multiplies a random row-shifted
interpolation matrix ``A_r``. Every batch carries the effective matrix of each
sample so the matrix-consistency metrics can be computed.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .imagecore import SeedSpec

_BELOW_ONE = np.nextafter(1.0, 0.0)


@dataclass(frozen=True)
class GmmConfig:
    d: int = 10
    mu: np.ndarray | None = None
    n_per_class: int = 5000

    def __post_init__(self):
        if self.d < 2:
            raise ValueError("d must be >= 2")
        mu = default_mu(self.d) if self.mu is None else np.asarray(self.mu, dtype=np.float64)
        if mu.shape != (self.d,):
            raise ValueError(f"mu must have shape ({self.d},), got {mu.shape}")
        if not np.all(np.isfinite(mu)) or not np.any(mu):
            raise ValueError("mu must be finite and nonzero")
        object.__setattr__(self, "mu", mu)


def default_mu(d: int, norm: float = 2.0) -> np.ndarray:
    """Constant mean direction with the given Euclidean norm."""
    return np.full(d, norm / np.sqrt(d))


@dataclass(frozen=True)
class GmmBatch:
    xs: np.ndarray  # (n, d)
    ys: np.ndarray  # (n,) in {+1, -1}
    mats: np.ndarray  # (n, d, d)

    def __post_init__(self):
        n, d = self.xs.shape
        if self.ys.shape != (n,) or self.mats.shape != (n, d, d):
            raise ValueError("xs, ys and mats must agree in length and dimension")

    def __len__(self) -> int:
        return self.xs.shape[0]

    @property
    def d(self) -> int:
        return self.xs.shape[1]

    def is_clean(self) -> bool:
        return bool(np.array_equal(self.mats, np.broadcast_to(np.eye(self.d), self.mats.shape)))


@dataclass(frozen=True)
class TridiagonalSpec:
    a_pos: float
    a_neg: float
    jitter: float = 0.0

    def __post_init__(self):
        if self.jitter < 0:
            raise ValueError("jitter must be non-negative")

    def a_for(self, y: int) -> float:
        return self.a_pos if y > 0 else self.a_neg


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, SeedSpec):
        return seed.generator(0)
    return np.random.default_rng(seed)


def sample_clean(cfg: GmmConfig, seed) -> GmmBatch:
    rng = _as_rng(seed)
    n = cfg.n_per_class
    ys = np.concatenate([np.ones(n), -np.ones(n)])
    xs = ys[:, None] * cfg.mu[None, :] + rng.standard_normal((2 * n, cfg.d))
    mats = np.broadcast_to(np.eye(cfg.d), (2 * n, cfg.d, cfg.d)).copy()
    return GmmBatch(xs, ys, mats)


def tridiagonal(d: int, a: float) -> np.ndarray:
    return np.eye(d) + a * (np.eye(d, k=1) + np.eye(d, k=-1))


def poison_tridiagonal(batch: GmmBatch, spec: TridiagonalSpec, seed) -> GmmBatch:
    if not batch.is_clean():
        raise ValueError("batch is already poisoned")
    n, d = batch.xs.shape
    a = np.where(batch.ys > 0, spec.a_pos, spec.a_neg).astype(np.float64)
    if spec.jitter > 0:
        a = a + _as_rng(seed).uniform(-spec.jitter, spec.jitter, size=n)
    off = np.eye(d, k=1) + np.eye(d, k=-1)
    mats = np.eye(d)[None] + a[:, None, None] * off[None]
    xs = np.einsum("nij,nj->ni", mats, batch.xs)
    return GmmBatch(xs, batch.ys.copy(), mats)


def _shift_rows(s: np.ndarray):
    m = np.floor(s).astype(np.int64)
    frac = np.minimum(s - m, _BELOW_ONE)
    return m, frac


def build_random_matrix(d: int, alpha: float, seed) -> np.ndarray:
    """Row ``i`` holds ``1 - n_i`` at column ``(i + m_i) mod d`` and ``n_i`` at ``(i + 1 + m_i) mod d``.

    ``s ~ U(-alpha, alpha)^d``, ``m = floor(s)``, ``n = s - m``.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    s = _as_rng(seed).uniform(-alpha, alpha, size=d)
    m, frac = _shift_rows(s)
    rows = np.arange(d)
    A = np.zeros((d, d))
    np.add.at(A, (rows, np.mod(rows + m, d)), 1.0 - frac)
    np.add.at(A, (rows, np.mod(rows + 1 + m, d)), frac)
    return A


def defend_batch(batch: GmmBatch, alpha: float, seed) -> GmmBatch:
    """Left-multiply every sample (and its matrix) by a fresh random ``A_r``."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    n, d = batch.xs.shape
    s = _as_rng(seed).uniform(-alpha, alpha, size=(n, d))
    m, frac = _shift_rows(s)
    rows = np.arange(d)[None, :]
    lo = np.mod(rows + m, d)
    hi = np.mod(rows + 1 + m, d)
    take = lambda a, idx: np.take_along_axis(a, idx, axis=1)  # noqa: E731
    xs = (1.0 - frac) * take(batch.xs, lo) + frac * take(batch.xs, hi)
    mats = (1.0 - frac)[..., None] * take(batch.mats, lo[..., None]) + frac[..., None] * take(
        batch.mats, hi[..., None]
    )
    return GmmBatch(xs, batch.ys.copy(), mats)


# --------------------------------------------------------------------------- #
# matrix-consistency metrics


def class_mean_matrices(batch: GmmBatch) -> dict[int, np.ndarray]:
    out = {}
    for y in (1, -1):
        sel = batch.ys == y
        if not sel.any():
            raise ValueError(f"class {y:+d} has no samples")
        out[y] = batch.mats[sel].mean(axis=0)
    return out


def theta_imi(batch: GmmBatch) -> float:
    """Mean over classes of the entry-averaged intra-class matrix variance."""
    vals = []
    for y in (1, -1):
        sel = batch.ys == y
        if not sel.any():
            raise ValueError(f"class {y:+d} has no samples")
        mats = batch.mats[sel]
        dev = mats - mats.mean(axis=0)
        vals.append(float((dev**2).mean()))
    return float(np.mean(vals))


def theta_imc(batch: GmmBatch) -> float:
    """Cosine similarity between the flattened class-mean matrices."""
    means = class_mean_matrices(batch)
    u, v = means[1].ravel(), means[-1].ravel()
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("cosine similarity undefined for a zero mean matrix")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


# --------------------------------------------------------------------------- #
# classifiers


@dataclass(frozen=True)
class LinearModel:
    w: np.ndarray
    b: float
    fallback: int = 0  # majority label used when w == 0

    def decision(self, xs: np.ndarray) -> np.ndarray:
        return xs @ self.w + self.b

    def predict(self, xs: np.ndarray) -> np.ndarray:
        if self.fallback:
            return np.full(xs.shape[0], self.fallback)
        return np.where(self.decision(xs) >= 0, 1, -1)


def _class_means(batch: GmmBatch):
    pos, neg = batch.ys > 0, batch.ys < 0
    if not pos.any() or not neg.any():
        raise ValueError("both classes must be present")
    return batch.xs[pos].mean(axis=0), batch.xs[neg].mean(axis=0)


def _majority(ys: np.ndarray) -> int:
    return 1 if (ys > 0).sum() >= (ys < 0).sum() else -1


def plugin_classifier_fit(batch: GmmBatch) -> LinearModel:
    """Identity-covariance plug-in rule: ``w = mu_+ - mu_-``, threshold at the midpoint."""
    m_pos, m_neg = _class_means(batch)
    w = m_pos - m_neg
    if not np.any(w):
        warnings.warn("degenerate plug-in classifier (w = 0); predicting the majority class")
        return LinearModel(w, 0.0, _majority(batch.ys))
    return LinearModel(w, float(-w @ (m_pos + m_neg) / 2))


def plugin_classifier_eval(model: LinearModel, batch: GmmBatch) -> float:
    return float(np.mean(model.predict(batch.xs) == batch.ys))


@dataclass(frozen=True)
class GaussianBayesModel:
    """Class-conditional Gaussians with full covariances and equal priors."""

    means: dict
    precisions: dict
    logdets: dict

    def log_likelihood(self, xs: np.ndarray, y: int) -> np.ndarray:
        diff = xs - self.means[y]
        return -0.5 * (np.einsum("ni,ij,nj->n", diff, self.precisions[y], diff) + self.logdets[y])

    def predict(self, xs: np.ndarray) -> np.ndarray:
        return np.where(self.log_likelihood(xs, 1) >= self.log_likelihood(xs, -1), 1, -1)


def gaussian_bayes_fit(batch: GmmBatch, ridge: float = 1e-9) -> GaussianBayesModel:
    means, precisions, logdets = {}, {}, {}
    for y in (1, -1):
        x = batch.xs[batch.ys == y]
        if len(x) < 2:
            raise ValueError(f"class {y:+d} needs at least two samples")
        mu = x.mean(axis=0)
        cov = (x - mu).T @ (x - mu) / len(x) + ridge * np.eye(batch.d)
        sign, logdet = np.linalg.slogdet(cov)
        if sign <= 0:
            raise np.linalg.LinAlgError(f"class {y:+d} covariance is not positive definite")
        means[y], precisions[y], logdets[y] = mu, np.linalg.inv(cov), logdet
    return GaussianBayesModel(means, precisions, logdets)


CLASSIFIERS = {
    "bayes": gaussian_bayes_fit,
    "plugin": plugin_classifier_fit,
}


def accuracy(model, batch: GmmBatch) -> float:
    return float(np.mean(model.predict(batch.xs) == batch.ys))


# --------------------------------------------------------------------------- #
# experiments

SWEEP_COLUMNS = ("grid_value", "theta_imi", "theta_imc", "acc_poisoned", "acc_defended")

DEFAULT_IMC_GRID = tuple(np.linspace(0.75, 0.9, 8).round(6))
DEFAULT_IMI_GRID = tuple(np.linspace(0.0, 0.6, 8).round(6))


@dataclass
class SweepRow:
    grid_value: float
    theta_imi: float
    theta_imc: float
    acc_poisoned: float
    acc_defended: float

    def as_tuple(self):
        return tuple(getattr(self, c) for c in SWEEP_COLUMNS)


@dataclass
class SweepSettings:
    mode: str = "imc"
    a_pos: float = 0.9
    a_neg: float = 0.5  # fixed negative-class parameter for the imi sweep
    jitter: float = 0.0  # fixed jitter for the imc sweep
    alpha: float = 0.5
    classifier: str = "bayes"
    grid: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.mode not in ("imc", "imi"):
            raise ValueError(f"mode must be 'imc' or 'imi', got {self.mode!r}")
        if self.classifier not in CLASSIFIERS:
            raise ValueError(f"unknown classifier {self.classifier!r}")
        if not self.grid:
            self.grid = DEFAULT_IMC_GRID if self.mode == "imc" else DEFAULT_IMI_GRID


def run_hypothesis_experiment(
    mode: str,
    grid,
    cfg: GmmConfig,
    seed: SeedSpec,
    *,
    a_pos: float = 0.9,
    a_neg: float = 0.5,
    jitter: float = 0.0,
    alpha: float = 0.5,
    classifier: str = "bayes",
) -> list[SweepRow]:
    """Sweep one poisoning knob and record both matrix metrics and test accuracy.

    ``imc`` sweeps ``a_neg`` with ``a_pos`` fixed (jitter fixed, usually 0):
    inter-class consistency moves while intra-class inconsistency stays put.
    ``imi`` sweeps the per-sample jitter with both ``a_y`` fixed: the class-mean
    matrices, and so ``theta_imc``, stay constant in expectation.

    Every grid point reuses the same clean train/test draw, so differences
    between rows come from the poisoning alone. Classifiers are fit on the
    poisoned (or poisoned + defended) train split and scored on clean test data.
    """
    settings = SweepSettings(mode, a_pos, a_neg, jitter, alpha, classifier, tuple(grid))
    if len(settings.grid) == 0:
        raise ValueError("grid must be nonempty")
    fit = CLASSIFIERS[settings.classifier]
    train = sample_clean(cfg, seed.child("train"))
    test = sample_clean(cfg, seed.child("test"))
    rows = []
    for k, g in enumerate(settings.grid):
        if settings.mode == "imc":
            spec = TridiagonalSpec(settings.a_pos, float(g), settings.jitter)
        else:
            spec = TridiagonalSpec(settings.a_pos, settings.a_neg, float(g))
        poisoned = poison_tridiagonal(train, spec, seed.child("poison").generator(k))
        defended = defend_batch(poisoned, settings.alpha, seed.child("defend").generator(k))
        rows.append(
            SweepRow(
                float(g),
                theta_imi(poisoned),
                theta_imc(poisoned),
                accuracy(fit(poisoned), test),
                accuracy(fit(defended), test),
            )
        )
    return rows


def trend(rows: list[SweepRow], mode: str) -> float:
    """Spearman rank correlation between the swept metric and poisoned accuracy."""
    metric = [r.theta_imc if mode == "imc" else r.theta_imi for r in rows]
    return float(stats.spearmanr(metric, [r.acc_poisoned for r in rows])[0])


def defense_uplift(
    cfg: GmmConfig,
    seed: SeedSpec,
    a_pos: float = 0.9,
    a_negs=(0.3, 0.5, 0.7),
    alpha: float = 0.5,
    classifier: str = "bayes",
) -> list[SweepRow]:
    """Accuracy with and without the random-matrix defense for each ``a_neg``."""
    return run_hypothesis_experiment(
        "imc", a_negs, cfg, seed, a_pos=a_pos, alpha=alpha, classifier=classifier
    )


def rows_to_csv(rows: list[SweepRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    for r in rows:
        writer.writerow([repr(float(v)) for v in r.as_tuple()])
    return buf.getvalue()
