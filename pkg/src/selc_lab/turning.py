"""Turning-point estimation from per-epoch training-loss distributions.

Early in training the per-sample loss histogram is bimodal: clean samples
drop fast, mislabeled ones stay high. The gap between the two modes peaks
right before the network starts memorizing the wrong labels. Three scalar
separation metrics track that gap per epoch:

  m1  gap between the two GMM component means
  m2  KL divergence from the low-loss component to the high-loss one
  m3  gap between the two 1-D k-means centroids

The turning point is the argmax epoch of a metric series (m1 by default).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ParameterError

VARIANCE_FLOOR = 1e-6
EM_TOL = 1e-6
EM_MAX_ITER = 200
KMEANS_MAX_ITER = 200
METRIC_NAMES = ("m1", "m2", "m3")


def normalize_losses(losses) -> np.ndarray:
    """Min-max scale to [0,1]; a constant vector maps to all zeros."""
    losses = np.asarray(losses, dtype=np.float64)
    if losses.size == 0:
        raise ParameterError("cannot normalize an empty loss vector")
    if losses.ndim != 1:
        raise ParameterError(f"losses must be 1-D, got shape {losses.shape}")
    if not np.all(np.isfinite(losses)):
        raise ParameterError("losses must be finite")
    lo = losses.min()
    hi = losses.max()
    if hi == lo:
        return np.zeros_like(losses)
    return (losses - lo) / (hi - lo)


@dataclass
class LossSnapshot:
    """Per-sample CE losses for one epoch plus their normalized form."""

    epoch: int
    losses: np.ndarray
    normalized: np.ndarray

    def __post_init__(self):
        self.losses = np.asarray(self.losses, dtype=np.float64)
        self.normalized = np.asarray(self.normalized, dtype=np.float64)
        if self.losses.shape != self.normalized.shape:
            raise ParameterError("losses and normalized lengths differ")
        if self.normalized.size and (self.normalized.min() < 0.0 or self.normalized.max() > 1.0):
            raise ParameterError("normalized losses must lie in [0, 1]")

    @classmethod
    def from_losses(cls, epoch: int, losses) -> "LossSnapshot":
        losses = np.asarray(losses, dtype=np.float64)
        return cls(epoch=epoch, losses=losses, normalized=normalize_losses(losses))


@dataclass
class GmmFit:
    weights: tuple
    means: tuple
    variances: tuple
    log_likelihood: float
    iterations: int
    converged: bool
    ll_trace: list = field(default_factory=list, repr=False)


@dataclass
class KMeansFit:
    centroids: tuple
    assignments: np.ndarray
    inertia: float
    degenerate: bool = False


def _log_normal_pdf(x, mean, var):
    return -0.5 * np.log(2.0 * np.pi * var) - (x - mean) ** 2 / (2.0 * var)


def fit_gmm2(normalized_losses, seed: int = 0) -> GmmFit:
    """EM fit of a two-component 1-D Gaussian mixture.

    Initial responsibilities come from a 2-means pre-pass on the same data,
    which makes the fit deterministic; ``seed`` is accepted for interface
    stability but never consulted. Component 1 is the lower-mean one.
    """
    x = np.asarray(normalized_losses, dtype=np.float64)
    if x.ndim != 1 or x.size < 4:
        raise ParameterError(f"need at least 4 one-dimensional points, got shape {x.shape}")
    km, _ = fit_kmeans2_and_m3(x, seed)
    resp = np.zeros((x.size, 2))
    if km.degenerate:
        resp[:] = 0.5
    else:
        resp[np.arange(x.size), km.assignments] = 1.0
        # a one-sided pre-pass (empty cluster) degrades EM to a coin-flip start
        counts = resp.sum(axis=0)
        if counts.min() == 0.0:
            resp[:] = 0.5

    weights = np.empty(2)
    means = np.empty(2)
    variances = np.empty(2)
    ll_prev = -np.inf
    ll = -np.inf
    ll_trace = []
    converged = False
    iterations = 0
    for iterations in range(1, EM_MAX_ITER + 1):
        # M step
        mass = resp.sum(axis=0)
        weights = mass / x.size
        for m in range(2):
            if mass[m] <= 0.0:
                continue
            means[m] = float(resp[:, m] @ x / mass[m])
            variances[m] = float(resp[:, m] @ (x - means[m]) ** 2 / mass[m])
        variances = np.maximum(variances, VARIANCE_FLOOR)
        # E step, in log space
        log_joint = np.stack([
            np.log(np.maximum(weights[m], 1e-300)) + _log_normal_pdf(x, means[m], variances[m])
            for m in range(2)
        ], axis=1)
        top = log_joint.max(axis=1, keepdims=True)
        log_norm = top[:, 0] + np.log(np.exp(log_joint - top).sum(axis=1))
        resp = np.exp(log_joint - log_norm[:, None])
        ll = float(log_norm.sum())
        ll_trace.append(ll)
        if ll - ll_prev < EM_TOL and iterations > 1:
            converged = True
            break
        ll_prev = ll

    if means[0] > means[1]:
        weights = weights[::-1]
        means = means[::-1]
        variances = variances[::-1]
    return GmmFit(
        weights=(float(weights[0]), float(weights[1])),
        means=(float(means[0]), float(means[1])),
        variances=(float(variances[0]), float(variances[1])),
        log_likelihood=ll,
        iterations=iterations,
        converged=converged,
        ll_trace=ll_trace,
    )


def metric_m1(fit: GmmFit) -> float:
    return abs(fit.means[0] - fit.means[1])


def metric_m2(fit: GmmFit) -> float:
    """KL(N1 || N2) with component 1 the lower-mean Gaussian."""
    v1, v2 = fit.variances
    gap = fit.means[0] - fit.means[1]
    return 0.5 * math.log(v2 / v1) + (v1 + gap * gap) / (2.0 * v2) - 0.5


def fit_kmeans2_and_m3(normalized_losses, seed: int = 0):
    """Lloyd's 2-means on 1-D data; returns (KMeansFit, m3).

    Centroids start at the 10th and 90th percentiles, so the fit is
    deterministic and ``seed`` is unused. All-identical input yields a
    degenerate fit with m3 = 0.
    """
    x = np.asarray(normalized_losses, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise ParameterError(f"need at least 2 one-dimensional points, got shape {x.shape}")
    if x.max() == x.min():
        fit = KMeansFit(
            centroids=(float(x[0]), float(x[0])),
            assignments=np.zeros(x.size, dtype=np.int64),
            inertia=0.0,
            degenerate=True,
        )
        return fit, 0.0
    c = np.array([np.percentile(x, 10), np.percentile(x, 90)])
    assign = np.zeros(x.size, dtype=np.int64)
    for _ in range(KMEANS_MAX_ITER):
        new_assign = ((x - c[1]) ** 2 < (x - c[0]) ** 2).astype(np.int64)
        for m in range(2):
            members = x[new_assign == m]
            if members.size:
                c[m] = members.mean()
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
    if c[0] > c[1]:
        c = c[::-1]
        assign = 1 - assign
    inertia = float(((x - c[assign]) ** 2).sum())
    fit = KMeansFit(centroids=(float(c[0]), float(c[1])), assignments=assign, inertia=inertia)
    return fit, abs(fit.centroids[0] - fit.centroids[1])


@dataclass
class MetricSeries:
    """Per-epoch separation metrics; epochs kept sorted ascending."""

    epochs: np.ndarray
    m1: np.ndarray
    m2: np.ndarray
    m3: np.ndarray

    def __post_init__(self):
        self.epochs = np.asarray(self.epochs, dtype=np.int64)
        self.m1 = np.asarray(self.m1, dtype=np.float64)
        self.m2 = np.asarray(self.m2, dtype=np.float64)
        self.m3 = np.asarray(self.m3, dtype=np.float64)
        n = self.epochs.size
        if not (self.m1.size == self.m2.size == self.m3.size == n):
            raise ParameterError("metric series lengths differ")
        if n > 1 and np.any(np.diff(self.epochs) <= 0):
            raise ParameterError("epochs must be strictly increasing")

    def values(self, metric_choice: str) -> np.ndarray:
        if metric_choice not in METRIC_NAMES:
            raise ParameterError(f"metric_choice must be one of {METRIC_NAMES}, got {metric_choice!r}")
        return getattr(self, metric_choice)

    def estimated_t(self, metric_choice: str = "m1", smooth: bool = False) -> int:
        return estimate_turning_point(self, metric_choice, smooth=smooth)


def compute_metric_series(snapshots, seed: int = 0) -> MetricSeries:
    """Fit both models to every snapshot and collect the three metrics."""
    snapshots = sorted(snapshots, key=lambda s: s.epoch)
    if not snapshots:
        raise ParameterError("need at least one loss snapshot")
    epochs, m1s, m2s, m3s = [], [], [], []
    for snap in snapshots:
        gmm = fit_gmm2(snap.normalized, seed)
        _, m3 = fit_kmeans2_and_m3(snap.normalized, seed)
        epochs.append(snap.epoch)
        m1s.append(metric_m1(gmm))
        m2s.append(metric_m2(gmm))
        m3s.append(m3)
    return MetricSeries(epochs=np.array(epochs), m1=np.array(m1s),
                        m2=np.array(m2s), m3=np.array(m3s))


def _median3(values: np.ndarray) -> np.ndarray:
    # 3-wide median with shrunk edge windows
    out = np.empty_like(values)
    for i in range(values.size):
        out[i] = np.median(values[max(0, i - 1):i + 2])
    return out


def estimate_turning_point(series: MetricSeries, metric_choice: str = "m1",
                           smooth: bool = False) -> int:
    """Argmax epoch of the chosen metric; ties break toward the earliest.

    Correction has to start before the turning point, so the earlier of two
    equal peaks is the safe answer. ``smooth`` applies a 3-epoch median
    filter first to knock out single-epoch spikes.
    """
    if series.epochs.size == 0:
        raise ParameterError("cannot estimate a turning point from an empty series")
    values = series.values(metric_choice)
    if smooth:
        values = _median3(values)
    return int(series.epochs[int(np.argmax(values))])


class OnlineTurningPointDetector:
    """Live argmax tracker with a patience rule.

    Feed one metric value per epoch; the detector fires once no new maximum
    has appeared for ``patience`` consecutive epochs. The estimate is the
    epoch of the running maximum. The offline argmax over the full series
    is the reference; this exists so a warm run can stop early.
    """

    def __init__(self, patience: int = 10):
        if patience < 1:
            raise ParameterError(f"patience must be >= 1, got {patience}")
        self.patience = patience
        self.best_epoch = None
        self.best_value = -np.inf
        self.stale = 0
        self.fired = False

    def observe(self, epoch: int, value: float) -> bool:
        """Record one epoch's metric; returns True once fired."""
        if self.fired:
            return True
        if value > self.best_value:
            self.best_value = float(value)
            self.best_epoch = int(epoch)
            self.stale = 0
        else:
            self.stale += 1
            if self.stale >= self.patience:
                self.fired = True
        return self.fired

    @property
    def estimate(self):
        return self.best_epoch


def save_loss_snapshots(snapshots, path) -> None:
    """CSV rows (epoch, sample_id, loss); floats via repr for exact reload."""
    lines = ["epoch,sample_id,loss"]
    for snap in sorted(snapshots, key=lambda s: s.epoch):
        for i, loss in enumerate(snap.losses):
            lines.append(f"{snap.epoch},{i},{float(loss)!r}")
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def load_loss_snapshots(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "epoch,sample_id,loss":
        raise FormatError(f"{path}: expected header 'epoch,sample_id,loss'")
    by_epoch = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise FormatError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
        try:
            epoch = int(parts[0])
            sample_id = int(parts[1])
            loss = float(parts[2])
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc
        by_epoch.setdefault(epoch, []).append((sample_id, loss))
    snapshots = []
    for epoch in sorted(by_epoch):
        rows = sorted(by_epoch[epoch])
        ids = [r[0] for r in rows]
        if ids != list(range(len(ids))):
            raise FormatError(f"{path}: epoch {epoch} sample ids are not 0..{len(ids) - 1}")
        snapshots.append(LossSnapshot.from_losses(epoch, np.array([r[1] for r in rows])))
    return snapshots


def save_metric_series(series: MetricSeries, path) -> None:
    lines = ["epoch,m1,m2,m3"]
    for i in range(series.epochs.size):
        lines.append(f"{series.epochs[i]},{float(series.m1[i])!r},"
                     f"{float(series.m2[i])!r},{float(series.m3[i])!r}")
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def load_metric_series(path) -> MetricSeries:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "epoch,m1,m2,m3":
        raise FormatError(f"{path}: expected header 'epoch,m1,m2,m3'")
    epochs, m1s, m2s, m3s = [], [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise FormatError(f"{path}:{lineno}: expected 4 fields, got {len(parts)}")
        try:
            epochs.append(int(parts[0]))
            m1s.append(float(parts[1]))
            m2s.append(float(parts[2]))
            m3s.append(float(parts[3]))
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc
    return MetricSeries(epochs=np.array(epochs, dtype=np.int64), m1=np.array(m1s),
                        m2=np.array(m2s), m3=np.array(m3s))
