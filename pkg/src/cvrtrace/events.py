"""Click events, horizon grids, and partial post-click feedback trajectories.

A clicked sample either converts within the attribution window or it does
not; at replay time tau only the prefix of its post-click life that has
already elapsed is visible.  Everything in this module is immutable data
plus pure functions, so it is safe to call from anywhere.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

logger = logging.getLogger(__name__)

# Sentinel for "timestamp absent" in columnar storage.
NO_EVENT = -1


@dataclass(frozen=True)
class HorizonConfig:
    """Discretization of [0, d_max] into H cumulative observation windows.

    ``boundaries[h]`` is the right edge of window h in seconds since the
    click; the final boundary is the attribution window d_max.  A window is
    visible once its full extent has elapsed (elapsed >= boundary).
    """

    boundaries: tuple
    behavior_names: tuple

    def __post_init__(self):
        bounds = tuple(int(b) for b in self.boundaries)
        names = tuple(str(n) for n in self.behavior_names)
        object.__setattr__(self, "boundaries", bounds)
        object.__setattr__(self, "behavior_names", names)
        if not bounds:
            raise ValueError("need at least one horizon boundary")
        if bounds[0] <= 0:
            raise ValueError("horizon boundaries must be positive")
        if any(b2 <= b1 for b1, b2 in zip(bounds, bounds[1:])):
            raise ValueError("horizon boundaries must be strictly increasing")
        if not names:
            raise ValueError("need at least one tracked behavior")
        if len(set(names)) != len(names):
            raise ValueError("behavior names must be unique")

    @property
    def H(self) -> int:
        return len(self.boundaries)

    @property
    def K(self) -> int:
        return len(self.behavior_names)

    @property
    def d_max(self) -> int:
        return self.boundaries[-1]

    @property
    def purchase_index(self) -> Optional[int]:
        try:
            return self.behavior_names.index("purchase")
        except ValueError:
            return None

    def boundary_array(self) -> np.ndarray:
        return np.asarray(self.boundaries, dtype=np.int64)


# Horizon grids used by the two public benchmark configurations.
CRITEO_HORIZONS = HorizonConfig(
    boundaries=(360, 900, 3600, 86400, 604800, 2592000),  # 6min .. 30d
    behavior_names=("purchase",),
)
TAOBAO_HORIZONS = HorizonConfig(
    boundaries=(120, 600, 7200, 86400, 259200),  # 2min .. 3d
    behavior_names=("cart", "favorite", "purchase"),
)


@dataclass(frozen=True)
class LogSchema:
    """Field layout of a click log: feature arities and tracked behaviors."""

    numeric_dim: int
    cat_cardinalities: tuple
    behavior_names: tuple

    def __post_init__(self):
        object.__setattr__(self, "cat_cardinalities",
                           tuple(int(c) for c in self.cat_cardinalities))
        object.__setattr__(self, "behavior_names",
                           tuple(str(n) for n in self.behavior_names))
        if self.numeric_dim < 0:
            raise ValueError("numeric_dim must be >= 0")
        if any(c <= 0 for c in self.cat_cardinalities):
            raise ValueError("categorical cardinalities must be positive")

    @property
    def K(self) -> int:
        return len(self.behavior_names)

    @property
    def n_categorical(self) -> int:
        return len(self.cat_cardinalities)


@dataclass(frozen=True)
class FeatureVector:
    """Pre-click features: dense numeric values plus hashed category indices."""

    numeric: np.ndarray
    categorical: np.ndarray

    def __post_init__(self):
        num = np.asarray(self.numeric, dtype=np.float64).reshape(-1)
        cat = np.asarray(self.categorical, dtype=np.int64).reshape(-1)
        if not np.all(np.isfinite(num)):
            raise ValueError("numeric features must be finite")
        if cat.size and cat.min() < 0:
            raise ValueError("categorical indices must be non-negative")
        object.__setattr__(self, "numeric", num)
        object.__setattr__(self, "categorical", cat)


@dataclass(frozen=True)
class ClickEvent:
    """One post-click sample: features, click time, and feedback timestamps.

    ``conv_ts`` is None when the sample never converts; ``behavior_ts[k]`` is
    the first occurrence time of behavior k (None if it never occurs).
    """

    sample_id: int
    features: FeatureVector
    click_ts: int
    conv_ts: Optional[int]
    behavior_ts: tuple

    def __post_init__(self):
        if self.conv_ts is not None and self.conv_ts <= self.click_ts:
            raise ValueError(
                f"sample {self.sample_id}: conversion at {self.conv_ts} "
                f"not after click at {self.click_ts}")
        for k, ts in enumerate(self.behavior_ts):
            if ts is not None and ts <= self.click_ts:
                raise ValueError(
                    f"sample {self.sample_id}: behavior {k} at {ts} "
                    f"not after click at {self.click_ts}")


@dataclass(frozen=True)
class TrajectoryView:
    """Partial feedback trajectory: masked cumulative states plus visibility.

    ``states[h, k]`` is 1 when behavior k was observed within window h and
    window h itself is visible; ``mask`` is the prefix visibility vector and
    ``kappa`` the fraction of visible windows.
    """

    states: np.ndarray  # (H, K) in {0, 1}
    mask: np.ndarray    # (H,) in {0, 1}
    kappa: float

    def __post_init__(self):
        states = np.asarray(self.states, dtype=np.float64)
        mask = np.asarray(self.mask, dtype=np.float64).reshape(-1)
        if states.ndim != 2 or states.shape[0] != mask.shape[0]:
            raise ValueError("states must be (H, K) aligned with mask (H,)")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "kappa", float(self.kappa))

    @property
    def H(self) -> int:
        return self.mask.shape[0]

    @property
    def K(self) -> int:
        return self.states.shape[1]

    @property
    def prefix_len(self) -> int:
        return int(round(self.mask.sum()))

    def check(self):
        """Raise unless all structural invariants hold."""
        H = self.H
        k = self.prefix_len
        if not np.array_equal(self.mask, (np.arange(H) < k).astype(float)):
            raise ValueError("mask is not a prefix mask")
        if np.any(self.states[self.mask == 0.0] != 0.0):
            raise ValueError("states nonzero outside the visible prefix")
        vis = self.states[:k]
        if k > 1 and np.any(np.diff(vis, axis=0) < 0):
            raise ValueError("visible states must be cumulative in h")
        if self.kappa != k / H:
            raise ValueError("kappa does not equal visible fraction")


def ground_truth_label(e: ClickEvent, d_max: int) -> int:
    """Final conversion label: converted within d_max of the click."""
    if e.conv_ts is None:
        return 0
    return int(e.click_ts < e.conv_ts <= e.click_ts + d_max)


def observed_label(e: ClickEvent, tau: int) -> int:
    """Conversion status visible at time tau (false negatives possible)."""
    if tau < e.click_ts:
        raise ValueError(f"sample {e.sample_id} not clicked yet at tau={tau}")
    if e.conv_ts is None:
        return 0
    return int(e.click_ts < e.conv_ts <= tau)


def is_revealed(e: ClickEvent, tau: int, d_max: int) -> bool:
    """True once the final label is knowable: conversion seen or window expired."""
    return observed_label(e, tau) == 1 or tau > e.click_ts + d_max


def build_trajectory(e: ClickEvent, tau: int, cfg: HorizonConfig) -> TrajectoryView:
    """Construct the partial trajectory of ``e`` as visible at time tau.

    Window h is visible once the elapsed time reaches its boundary; a visible
    window reports each behavior that happened within the window's extent and
    no later than tau.  Behaviors beyond d_max never enter any window.
    """
    if tau < e.click_ts:
        raise ValueError(f"sample {e.sample_id} not clicked yet at tau={tau}")
    u = tau - e.click_ts
    bounds = cfg.boundary_array()
    mask = (u >= bounds).astype(np.float64)
    states = np.zeros((cfg.H, cfg.K), dtype=np.float64)
    for k, ts in enumerate(e.behavior_ts[:cfg.K]):
        if ts is None or ts > tau:
            continue
        states[:, k] = mask * (ts - e.click_ts <= bounds)
    kappa = float(mask.sum()) / cfg.H
    return TrajectoryView(states=states, mask=mask, kappa=kappa)


@dataclass
class EventLog:
    """Columnar store of click events, the unit the replay engine consumes."""

    sample_id: np.ndarray    # (n,) int64, unique
    click_ts: np.ndarray     # (n,) int64
    conv_ts: np.ndarray      # (n,) int64, NO_EVENT when absent
    behavior_ts: np.ndarray  # (n, K) int64, NO_EVENT when absent
    numeric: np.ndarray      # (n, D) float64
    categorical: np.ndarray  # (n, F) int64

    def __post_init__(self):
        self.sample_id = np.asarray(self.sample_id, dtype=np.int64)
        self.click_ts = np.asarray(self.click_ts, dtype=np.int64)
        self.conv_ts = np.asarray(self.conv_ts, dtype=np.int64)
        self.behavior_ts = np.atleast_2d(np.asarray(self.behavior_ts, dtype=np.int64))
        self.numeric = np.atleast_2d(np.asarray(self.numeric, dtype=np.float64))
        self.categorical = np.atleast_2d(np.asarray(self.categorical, dtype=np.int64))
        n = self.sample_id.shape[0]
        for name in ("click_ts", "conv_ts", "behavior_ts", "numeric", "categorical"):
            if getattr(self, name).shape[0] != n:
                raise ValueError(f"{name} does not have {n} rows")

    def __len__(self) -> int:
        return self.sample_id.shape[0]

    @property
    def K(self) -> int:
        return self.behavior_ts.shape[1]

    def event(self, i: int) -> ClickEvent:
        conv = self.conv_ts[i]
        beh = tuple(None if t == NO_EVENT else int(t) for t in self.behavior_ts[i])
        return ClickEvent(
            sample_id=int(self.sample_id[i]),
            features=FeatureVector(self.numeric[i], self.categorical[i]),
            click_ts=int(self.click_ts[i]),
            conv_ts=None if conv == NO_EVENT else int(conv),
            behavior_ts=beh,
        )

    def sorted_by_click(self) -> "EventLog":
        order = np.lexsort((self.sample_id, self.click_ts))
        return EventLog(
            sample_id=self.sample_id[order],
            click_ts=self.click_ts[order],
            conv_ts=self.conv_ts[order],
            behavior_ts=self.behavior_ts[order],
            numeric=self.numeric[order],
            categorical=self.categorical[order],
        )

    def is_sorted(self) -> bool:
        return bool(np.all(np.diff(self.click_ts) >= 0))

    def validate(self, schema: Optional[LogSchema] = None,
                 purchase_col: Optional[int] = None):
        """Raise ValueError on the first violated structural invariant."""
        if len(np.unique(self.sample_id)) != len(self):
            raise ValueError("sample ids are not unique")
        has_conv = self.conv_ts != NO_EVENT
        if np.any(self.conv_ts[has_conv] <= self.click_ts[has_conv]):
            raise ValueError("conversion timestamps must be after the click")
        has_beh = self.behavior_ts != NO_EVENT
        if np.any(self.behavior_ts[has_beh] <= self.click_ts[:, None].repeat(self.K, 1)[has_beh]):
            raise ValueError("behavior timestamps must be after the click")
        if not np.all(np.isfinite(self.numeric)):
            raise ValueError("numeric features must be finite")
        if purchase_col is not None:
            if not np.array_equal(self.behavior_ts[:, purchase_col], self.conv_ts):
                raise ValueError("purchase behavior must mirror the conversion timestamp")
        if schema is not None:
            if self.numeric.shape[1] != schema.numeric_dim:
                raise ValueError("numeric arity does not match schema")
            if self.categorical.shape[1] != schema.n_categorical:
                raise ValueError("categorical arity does not match schema")
            if self.K != schema.K:
                raise ValueError("behavior arity does not match schema")
            for f, card in enumerate(schema.cat_cardinalities):
                col = self.categorical[:, f]
                if col.size and (col.min() < 0 or col.max() >= card):
                    raise ValueError(f"categorical field {f} outside [0, {card})")


# ----------------------------------------------------------------------------
# Vectorized twins of the scalar operations, used by training and replay.
# Property tests pin them to the scalar definitions above.

def visible_prefix_len(u: np.ndarray, cfg: HorizonConfig) -> np.ndarray:
    """Number of visible windows for elapsed times ``u`` (>= boundary rule)."""
    return np.searchsorted(cfg.boundary_array(), np.asarray(u), side="right")


def observed_label_batch(log: EventLog, idx: np.ndarray, tau: int) -> np.ndarray:
    click = log.click_ts[idx]
    if np.any(tau < click):
        raise ValueError("tau precedes some click in the batch")
    conv = log.conv_ts[idx]
    return ((conv != NO_EVENT) & (click < conv) & (conv <= tau)).astype(np.int64)


def ground_truth_batch(log: EventLog, idx: np.ndarray, d_max: int) -> np.ndarray:
    click = log.click_ts[idx]
    conv = log.conv_ts[idx]
    return ((conv != NO_EVENT) & (click < conv) & (conv <= click + d_max)).astype(np.int64)


def revealed_batch(log: EventLog, idx: np.ndarray, tau: int, d_max: int) -> np.ndarray:
    click = log.click_ts[idx]
    return (observed_label_batch(log, idx, tau) == 1) | (tau > click + d_max)


def revealed_label_batch(log: EventLog, idx: np.ndarray, tau: int, d_max: int) -> np.ndarray:
    """Supervision for revealed samples: the observed label capped at the
    attribution window, so a conversion trickling in after expiry does not
    flip an already-expired negative."""
    click = log.click_ts[idx]
    conv = log.conv_ts[idx]
    cap = np.minimum(np.int64(tau), click + d_max)
    return ((conv != NO_EVENT) & (click < conv) & (conv <= cap)).astype(np.int64)


def trajectory_batch(log: EventLog, idx: np.ndarray, tau: int,
                     cfg: HorizonConfig):
    """Vectorized build_trajectory: returns (states, mask, kappa) arrays."""
    click = log.click_ts[idx]
    u = tau - click
    if np.any(u < 0):
        raise ValueError("tau precedes some click in the batch")
    bounds = cfg.boundary_array()
    mask = (u[:, None] >= bounds[None, :]).astype(np.float64)          # (m, H)
    beh = log.behavior_ts[idx][:, :cfg.K]                              # (m, K)
    present = (beh != NO_EVENT) & (beh <= tau)
    delay = beh - click[:, None]
    within = delay[:, None, :] <= bounds[None, :, None]                # (m, H, K)
    states = mask[:, :, None] * (within & present[:, None, :])
    kappa = mask.sum(axis=1) / cfg.H
    return states, mask, kappa


def full_state_batch(log: EventLog, idx: np.ndarray, cfg: HorizonConfig) -> np.ndarray:
    """Full-lifecycle cumulative states (every window visible), per sample.

    Equivalent to the trajectory at tau = click + d_max: behaviors later than
    the attribution window never appear.
    """
    click = log.click_ts[idx]
    bounds = cfg.boundary_array()
    beh = log.behavior_ts[idx][:, :cfg.K]
    present = beh != NO_EVENT
    delay = beh - click[:, None]
    within = delay[:, None, :] <= bounds[None, :, None]
    return (within & present[:, None, :]).astype(np.float64)
