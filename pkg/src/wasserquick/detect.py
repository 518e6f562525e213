"""Likelihood-ratio models and sequential detectors.

Three interchangeable log-likelihood-ratio models drive the CUSUM recursion
S_t = (S_{t-1})+ + llr(x_t): the exact Gaussian mean-shift ratio, a
kernel-smoothed LFD ratio, and a binned lookup table. The window-limited GLR
statistic is provided as the comparison detector. Detector states are plain
immutable values; updates return new states.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DetectorStateError, DiscreteDistribution, InvalidInputError
from .lfd import LOG_RATIO_CLAMP, LfdSolution


def llr_gaussian_mean(x, m: float):
    """log dN(m,1)/dN(0,1) evaluated at x: m*x - m^2/2."""
    return m * np.asarray(x, dtype=float) - 0.5 * m * m


@dataclass(frozen=True)
class GaussianExact:
    """Exact mean-shift ratio for N(0,1) -> N(m,1)."""

    m: float

    def log_ratio(self, x):
        return llr_gaussian_mean(x, self.m)


@dataclass(frozen=True)
class SmoothedLfd:
    """LFD pair convolved with a Gaussian kernel of bandwidth h (1-D only).

    The ratio of the two kernel mixtures is evaluated in log-sum-exp form so
    that far-tail observations underflow gracefully instead of dividing zero
    by zero; outputs are clamped to +-LOG_RATIO_CLAMP.
    """

    support: np.ndarray
    p1: np.ndarray
    p2: np.ndarray
    h: float

    def __post_init__(self):
        support = np.asarray(self.support, dtype=float)
        if support.ndim == 2:
            if support.shape[1] != 1:
                raise InvalidInputError(
                    "kernel smoothing is implemented for dimension 1 only"
                )
            support = support[:, 0]
        p1 = np.asarray(self.p1, dtype=float).ravel()
        p2 = np.asarray(self.p2, dtype=float).ravel()
        if not (support.size == p1.size == p2.size):
            raise InvalidInputError("support and weights must share a length")
        if not (self.h > 0):
            raise InvalidInputError(f"bandwidth must be positive, got {self.h}")
        support = support.copy()
        p1 = p1.copy()
        p2 = p2.copy()
        for arr in (support, p1, p2):
            arr.flags.writeable = False
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "p1", p1)
        object.__setattr__(self, "p2", p2)

    @classmethod
    def from_solution(cls, solution: LfdSolution, h: float) -> "SmoothedLfd":
        return cls(support=solution.joint_support, p1=solution.p1, p2=solution.p2, h=h)

    def log_ratio(self, x):
        from scipy.special import logsumexp

        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        flat = np.atleast_1d(x).ravel()
        out = np.empty(flat.size)
        # chunk so the (points x support) exponent matrix stays small
        step = max(1, 262144 // max(self.support.size, 1))
        inv2h2 = 1.0 / (2.0 * self.h * self.h)
        for s in range(0, flat.size, step):
            xs = flat[s : s + step]
            expo = -((xs[:, None] - self.support[None, :]) ** 2) * inv2h2
            with np.errstate(divide="ignore"):
                num = logsumexp(expo, axis=1, b=self.p2[None, :])
                den = logsumexp(expo, axis=1, b=self.p1[None, :])
            out[s : s + step] = num - den
        out = np.clip(np.nan_to_num(out, nan=0.0), -LOG_RATIO_CLAMP, LOG_RATIO_CLAMP)
        if scalar:
            return float(out[0])
        return out.reshape(np.atleast_1d(x).shape)

    def to_json_dict(self) -> dict:
        return {
            "kind": "smoothed",
            "support": self.support.tolist(),
            "p1": self.p1.tolist(),
            "p2": self.p2.tolist(),
            "h": self.h,
        }


@dataclass(frozen=True)
class BinnedTable:
    """Piecewise-constant log ratio over bins (-inf, e1], (e1, e2], ...

    A boundary observation falls into the lower bin.
    """

    edges: np.ndarray
    log_ratio: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=float).ravel()
        lr = np.asarray(self.log_ratio, dtype=float).ravel()
        if edges.size + 1 != lr.size:
            raise InvalidInputError(
                f"{edges.size} edges require {edges.size + 1} table entries, got {lr.size}"
            )
        if edges.size and np.any(np.diff(edges) <= 0):
            raise InvalidInputError("bin edges must be strictly increasing")
        if not np.all(np.isfinite(lr)):
            raise InvalidInputError("table entries must be finite")
        edges = edges.copy()
        lr = lr.copy()
        edges.flags.writeable = False
        lr.flags.writeable = False
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "log_ratio", lr)

    def bin_index(self, x):
        return np.searchsorted(self.edges, np.asarray(x, dtype=float), side="left")

    def table_lookup(self, x):
        out = np.asarray(self.log_ratio)[self.bin_index(x)]
        if np.isscalar(x) or np.asarray(x).ndim == 0:
            return float(out)
        return out

    def to_json_dict(self) -> dict:
        return {
            "kind": "binned",
            "edges": self.edges.tolist(),
            "logRatio": np.asarray(self.log_ratio).tolist(),
        }


# Model interface shared with GaussianExact/SmoothedLfd; the dataclass field
# name log_ratio is the table itself, so expose the callable under both names.
BinnedTable.log_ratio_at = BinnedTable.table_lookup


def model_from_json_dict(d: dict):
    kind = d.get("kind")
    if kind == "smoothed":
        return SmoothedLfd(
            support=np.asarray(d["support"], dtype=float),
            p1=np.asarray(d["p1"], dtype=float),
            p2=np.asarray(d["p2"], dtype=float),
            h=float(d["h"]),
        )
    if kind == "binned":
        return BinnedTable(
            edges=np.asarray(d["edges"], dtype=float),
            log_ratio=np.asarray(d["logRatio"], dtype=float),
        )
    if kind == "gaussian":
        return GaussianExact(m=float(d["m"]))
    raise InvalidInputError(f"unknown model kind {kind!r}")


def llr_smoothed(model: SmoothedLfd, x):
    """Kernel-smoothed LFD log ratio at x."""
    return model.log_ratio(x)


def llr_binned(model: BinnedTable, x):
    """Table lookup of the bin containing x."""
    return model.table_lookup(x)


def model_log_ratio(model, x):
    """Evaluate any likelihood-ratio model on observations."""
    if isinstance(model, BinnedTable):
        return model.table_lookup(x)
    return model.log_ratio(x)


def bin_edges_uniform_prechange(
    pre_samples=None, quantile_fn=None, L: int = 20
) -> np.ndarray:
    """Breakpoints making the pre-change reference uniform over L bins.

    Edges are the i/L quantiles, i = 1..L-1, either empirical (linear
    interpolation of the sample CDF) or from an exact quantile function.
    """
    if L < 2:
        raise InvalidInputError(f"need at least 2 bins, got L={L}")
    probs = np.arange(1, L) / L
    if quantile_fn is not None:
        edges = np.asarray([float(quantile_fn(p)) for p in probs])
    elif pre_samples is not None:
        samples = np.asarray(pre_samples, dtype=float).ravel()
        if samples.size < L:
            raise InvalidInputError(
                f"need at least L={L} samples for empirical edges, got {samples.size}"
            )
        edges = np.quantile(samples, probs)
    else:
        raise InvalidInputError("provide pre_samples or quantile_fn")
    if np.any(np.diff(edges) <= 0):
        raise InvalidInputError("quantile edges are not strictly increasing")
    return edges


def binned_distribution(dist, edges, floor: float = 1e-6) -> np.ndarray:
    """Mass per bin (-inf, e1], (e1, e2], ..., floored and renormalized.

    Accepts a DiscreteDistribution (1-D) or a raw sample array. The floor
    keeps every bin strictly positive, as the KL-ball programs require; pass
    floor=0 for raw bin masses.
    """
    edges = np.asarray(edges, dtype=float).ravel()
    if edges.size and np.any(np.diff(edges) <= 0):
        raise InvalidInputError("bin edges must be sorted strictly increasing")
    if isinstance(dist, DiscreteDistribution):
        if dist.dimension != 1:
            raise InvalidInputError("binning is implemented for dimension 1 only")
        values = dist.support[:, 0]
        weights = dist.weights
    else:
        values = np.asarray(dist, dtype=float).ravel()
        weights = np.full(values.size, 1.0 / values.size)
    idx = np.searchsorted(edges, values, side="left")
    L = edges.size + 1
    mass = np.bincount(idx, weights=weights, minlength=L)
    if floor > 0:
        mass = np.maximum(mass, floor)
    total = mass.sum()
    if total <= 0:
        raise InvalidInputError("empty distribution cannot be binned")
    return mass / total


# ---------------------------------------------------------------------------
# Sequential detectors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CusumState:
    """Running CUSUM statistic with its stopping threshold."""

    threshold: float
    statistic: float = 0.0
    time: int = 0
    stopped: bool = False


def cusum_update(state: CusumState, llr: float) -> CusumState:
    """One CUSUM step: S <- max(S, 0) + llr; stop when S >= threshold."""
    if state.stopped:
        raise DetectorStateError("detector already stopped; statistic is frozen")
    stat = max(state.statistic, 0.0) + float(llr)
    return CusumState(
        threshold=state.threshold,
        statistic=stat,
        time=state.time + 1,
        stopped=stat >= state.threshold,
    )


def _suffix_scan_max(values: tuple[float, ...]) -> float:
    """max over suffixes v_k..v_end of (sum)^2 / (2 * length)."""
    best = 0.0
    total = 0.0
    for length, v in enumerate(reversed(values), start=1):
        total += v
        best = max(best, total * total / (2.0 * length))
    return best


@dataclass(frozen=True)
class GlrState:
    """Window-limited GLR detector state.

    window holds the most recent observations (at most window_size of them);
    the statistic maximizes the mean-shift likelihood ratio over both the
    change location within the window and the unknown shift size, whose inner
    maximization has the closed form (segment sum)^2 / (2 * segment length).
    """

    threshold: float
    window_size: int
    window: tuple[float, ...] = ()
    time: int = 0
    stopped: bool = False

    def __post_init__(self):
        if self.window_size < 1:
            raise InvalidInputError("window size must be >= 1")
        if len(self.window) > self.window_size:
            raise InvalidInputError("buffer longer than the window size")


def glr_statistic(state: GlrState) -> float:
    """GLR statistic over segments ending at the newest buffered observation."""
    if not state.window:
        raise InvalidInputError("GLR statistic needs a nonempty buffer")
    return _suffix_scan_max(state.window)


def glr_update(state: GlrState, x: float) -> GlrState:
    """Advance the GLR detector by one observation.

    The incoming observation extends the buffered window, so segments of up
    to window_size + 1 observations are scanned, matching a change-location
    search over k in [t - W, t] (clamped at the first observation).
    """
    if state.stopped:
        raise DetectorStateError("detector already stopped")
    extended = state.window + (float(x),)
    stat = _suffix_scan_max(extended)
    return GlrState(
        threshold=state.threshold,
        window_size=state.window_size,
        window=extended[-state.window_size :],
        time=state.time + 1,
        stopped=stat >= state.threshold,
    )


@dataclass(frozen=True)
class StoppingDecision:
    """Outcome of running a detector over a finite stream."""

    stopped_at: int | None
    final_statistic: float
    truncated: bool


@dataclass(frozen=True)
class CusumDetector:
    model: object  # anything with log_ratio(x)
    threshold: float

    name: str = "cusum"


@dataclass(frozen=True)
class GlrDetector:
    window_size: int
    threshold: float

    name: str = "glr"


def run_detector(detector, stream, horizon: int) -> StoppingDecision:
    """Feed a stream to a detector until it stops or the horizon ends.

    The decision at time t depends only on observations 1..t; streams may be
    any iterable and are consumed lazily.
    """
    if horizon < 1:
        raise InvalidInputError(f"horizon must be >= 1, got {horizon}")
    if isinstance(detector, CusumDetector):
        state = CusumState(threshold=detector.threshold)
        last_stat = 0.0
        for t, x in enumerate(stream, start=1):
            if t > horizon:
                break
            state = cusum_update(state, float(model_log_ratio(detector.model, float(x))))
            last_stat = state.statistic
            if state.stopped:
                return StoppingDecision(
                    stopped_at=t, final_statistic=last_stat, truncated=False
                )
        return StoppingDecision(stopped_at=None, final_statistic=last_stat, truncated=True)
    if isinstance(detector, GlrDetector):
        state = GlrState(threshold=detector.threshold, window_size=detector.window_size)
        last_stat = 0.0
        for t, x in enumerate(stream, start=1):
            if t > horizon:
                break
            last_stat = _suffix_scan_max(state.window + (float(x),))
            state = glr_update(state, float(x))
            if state.stopped:
                return StoppingDecision(
                    stopped_at=t, final_statistic=last_stat, truncated=False
                )
        return StoppingDecision(stopped_at=None, final_statistic=last_stat, truncated=True)
    raise InvalidInputError(f"unknown detector type {type(detector).__name__}")
