"""Per-endpoint spectral quality metric and momentum aggregation.

A weighted layer is scored by unfolding its tensor along the channel
dimension of interest, taking the singular spectrum, and combining the
effective-rank ratio r = N'/N with the retained-subspace condition number
kappa = sigma_1/sigma_N' into

    QC = arctan(r / (1 - 1/kappa))          in [0, pi/2].

Edge cases are pinned: an all-zero spectrum scores 0, and kappa == 1
(denominator 0) with r > 0 scores pi/2 (the limit).  The effective rank
counts singular values above tau * sigma_1 (relative hard threshold), which
keeps every quantity scale invariant.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .graph import Side
from .tensorio import unfold

DEFAULT_TAU = 0.01


def svd(matrix):
    """Singular value decomposition (u, s, vt) with u @ diag(s) @ vt == matrix."""
    arr = np.asarray(matrix, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("matrix contains NaN/Inf")
    return np.linalg.svd(arr, full_matrices=False)


def singular_values(matrix):
    arr = np.asarray(matrix, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("matrix contains NaN/Inf")
    return np.linalg.svd(arr, compute_uv=False)


def effective_rank(sigmas, tau=DEFAULT_TAU):
    """Number of singular values above tau * sigma_1; 0 for a zero spectrum."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must be in (0, 1), got {tau}")
    s = np.asarray(sigmas, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ValueError("expected a non-empty 1D spectrum")
    if np.any(s < 0):
        raise ValueError("singular values must be non-negative")
    if np.any(np.diff(s) > 0):
        raise ValueError("spectrum must be sorted in descending order")
    if s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > tau * s[0]))


def qc_value(n_eff, channel_size, kappa):
    """Quality Condition from effective rank, channel size and condition number."""
    if channel_size < 1:
        raise ValueError(f"channel size must be >= 1, got {channel_size}")
    if n_eff == 0:
        return 0.0
    ratio = n_eff / channel_size
    if kappa is None or kappa <= 1.0:
        return math.pi / 2
    return math.atan(ratio / (1.0 - 1.0 / kappa))


@dataclass
class SpectralSummary:
    """SVD digest of one layer endpoint."""

    layer_id: str
    side: Side
    channel_size: int
    singular_values: np.ndarray = field(repr=False)
    n_eff: int = 0
    rank_ratio: float = 0.0
    kappa: float | None = None
    qc: float = 0.0
    discarded_energy: float = 0.0

    def to_dict(self):
        return {
            "layer": self.layer_id,
            "side": self.side.value,
            "channel_size": self.channel_size,
            "n_eff": self.n_eff,
            "rank_ratio": self.rank_ratio,
            "kappa": self.kappa,
            "qc": self.qc,
            "discarded_energy": self.discarded_energy,
            "singular_values": [float(v) for v in self.singular_values],
        }


def layer_metric(tensor, side, tau=DEFAULT_TAU):
    """Score one endpoint: unfold along its channel mode, then SVD -> QC."""
    matrix = unfold(tensor, side.mode)
    sigmas = singular_values(matrix)
    n_eff = effective_rank(sigmas, tau)
    kappa = float(sigmas[0] / sigmas[n_eff - 1]) if n_eff >= 1 else None
    channel_size = matrix.shape[0]
    layer_id = getattr(tensor, "layer_id", "<matrix>")
    return SpectralSummary(
        layer_id=layer_id,
        side=side,
        channel_size=channel_size,
        singular_values=sigmas,
        n_eff=n_eff,
        rank_ratio=n_eff / channel_size,
        kappa=kappa,
        qc=qc_value(n_eff, channel_size, kappa),
        discarded_energy=float(np.sum(sigmas[n_eff:] ** 2)),
    )


@dataclass
class GroupMetricState:
    """Momentum-accumulated metric of one dependency group across trials."""

    group_id: str
    m_prev: float = 0.0
    m_curr: float = 0.0
    delta: float = 0.0
    best_m: float = -math.inf
    best_size: int | None = None
    best_trial: int | None = None


def group_momentum(state, layer_metrics, gamma, size=None, trial=None):
    """Advance a group's momentum metric with this trial's endpoint scores.

    m_t = gamma * m_{t-1} + mean(scores).  Best trackers update on strict
    improvement; `size` is the channel size the scores were measured at.
    """
    if not layer_metrics:
        raise ValueError(f"group {state.group_id}: empty metrics list")
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma must be in [0, 1), got {gamma}")
    mean = sum(layer_metrics) / len(layer_metrics)
    state.m_prev = state.m_curr
    state.m_curr = gamma * state.m_prev + mean
    state.delta = state.m_curr - state.m_prev
    if state.m_curr > state.best_m:
        state.best_m = state.m_curr
        state.best_size = size
        state.best_trial = trial
    return state


def cumulative_metric(deps, endpoint_metrics):
    """Mean endpoint metric over the whole dependency list.

    endpoint_metrics maps endpoint keys ("conv1.in") to per-endpoint scores;
    every endpoint of every group (searchable, fixed, and derived) must be
    present.
    """
    total, count = 0.0, 0
    for group in deps.all_groups():
        for ep in group.endpoints:
            if ep.key not in endpoint_metrics:
                raise ValueError(f"missing metric for endpoint {ep.key}")
            total += endpoint_metrics[ep.key]
            count += 1
    if count == 0:
        raise ValueError("dependency list has no endpoints")
    return total / count
