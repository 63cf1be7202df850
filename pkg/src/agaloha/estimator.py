"""Shared Bayesian age tracker and the adaptive access scheme built on it.

Every device runs the same filter on the common ternary feedback: a joint
posterior over (local age, age gain) of an arbitrary device, kept on a
truncated grid indexed by ``(l, k)`` with ``w = l*D + offset`` and
``g = k*D`` (both ages move in lockstep inside a frame, so only frame-level
resolution is needed for the gain).  Each slot the devices pick the
(threshold, tx prob) pair that maximises the estimated expected one-slot
AoI reduction

    ear(threshold, p) = -1 + E[gain | transmit-eligible] * p * P(no other transmission),

then condition the posterior on the observed feedback.  Because everyone
sees the same feedback and runs the same deterministic computation, the
selections agree network-wide without any signalling.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, TextIO

import numpy as np

from ._util import binom_pmf
from .core import ChannelStatus, DeviceState, NetworkConfig, age_gain
from .policies import AccessParams
from .simkit import OracleView, Policy

__all__ = [
    "PosteriorGrid",
    "EarSelection",
    "init_posterior",
    "active_prob",
    "active_count_pmf",
    "success_prob",
    "estimate_ear",
    "approx_popt",
    "choose_params",
    "transition_likelihood",
    "bayes_update",
    "frame_boundary_update",
    "enhanced_decide",
    "SharedEstimator",
    "EnhancedPolicy",
]


@dataclass
class PosteriorGrid:
    """Posterior mass over (l, k) cells at within-frame offset ``offset``.

    ``mass[l, k]`` is the probability that an arbitrary device currently has
    local age ``l * frame_len + offset`` and age gain ``k * frame_len``.
    Cells that would fall outside the grid fold into the boundary row or
    column, so the nominal boundary ages under-state the truth; ``fallbacks``
    counts slots whose observed feedback had zero posterior likelihood and
    was absorbed by a pure predictive update.
    """

    mass: np.ndarray
    offset: int
    frame_len: int
    fallbacks: int = 0

    @property
    def l_max(self) -> int:
        return self.mass.shape[0] - 1

    @property
    def k_max(self) -> int:
        return self.mass.shape[1] - 1

    def total(self) -> float:
        return float(self.mass.sum())

    def to_csv(self, out: TextIO) -> None:
        out.write("l,k,mass\n")
        for l in range(self.mass.shape[0]):
            for k in range(self.mass.shape[1]):
                out.write(f"{l},{k},{float(self.mass[l, k])!r}\n")


@dataclass(frozen=True, eq=False)
class EarSelection:
    """One slot's shared parameter choice plus the quantities behind it."""

    params: AccessParams
    active_prob: float
    est_ear: float
    active_pmf: np.ndarray

    @property
    def is_sentinel(self) -> bool:
        return self.active_prob == 0.0


def init_posterior(
    cfg: NetworkConfig, l_max: int = 64, k_max: int = 64
) -> PosteriorGrid:
    """Point mass at (0, 0): empty buffers, zero gain, frame offset zero."""
    if l_max < 1 or k_max < 1:
        raise ValueError("grid caps must be >= 1")
    mass = np.zeros((l_max + 1, k_max + 1))
    mass[0, 0] = 1.0
    return PosteriorGrid(mass=mass, offset=0, frame_len=cfg.frame_len)


def _kmin(grid_or_k_max, frame_len: int, threshold: int) -> int:
    if threshold < 1:
        raise ValueError(f"threshold must be >= 1, got {threshold}")
    k_max = grid_or_k_max if isinstance(grid_or_k_max, int) else grid_or_k_max.k_max
    return min(-(-threshold // frame_len), k_max + 1)


def active_prob(grid: PosteriorGrid, threshold: int) -> float:
    """Posterior probability that a device's gain meets the threshold."""
    kmin = _kmin(grid, grid.frame_len, threshold)
    return float(grid.mass[:, kmin:].sum())


def active_count_pmf(active_probability: float, num_devices: int) -> np.ndarray:
    """Pmf of the number of *other* transmit-eligible devices, 0..N-1."""
    if not 0.0 <= active_probability <= 1.0:
        raise ValueError(f"active probability must be in [0, 1], got {active_probability}")
    return binom_pmf(num_devices - 1, active_probability)


def success_prob(xi: np.ndarray, tx_prob: float) -> float:
    """Probability that none of the other eligible devices transmits."""
    u = np.arange(len(xi))
    return float(np.dot(xi, (1.0 - tx_prob) ** u))


def estimate_ear(
    grid: PosteriorGrid, threshold: int, tx_prob: float, xi: np.ndarray
) -> float:
    """Estimated expected AoI reduction of one slot under (threshold, tx_prob).

    The AoI of every device grows by one each slot; a delivery from a device
    with gain g pays that back g-fold, discounted by its own transmit draw
    and by the chance some other eligible device talks over it.
    """
    kmin = _kmin(grid, grid.frame_len, threshold)
    col = grid.mass[:, kmin:].sum(axis=0)
    gain = float(np.dot(col, np.arange(kmin, grid.k_max + 1))) * grid.frame_len
    return -1.0 + gain * tx_prob * success_prob(xi, tx_prob)


def approx_popt(active_probability: float, num_devices: int) -> float:
    """Transmit probability targeting one expected transmission per slot.

    Closed form of ``1 / E[eligible transmitters]`` with the binomial mean
    summed exactly; capped at 1.
    """
    if not 0.0 <= active_probability <= 1.0:
        raise ValueError(f"active probability must be in [0, 1], got {active_probability}")
    if active_probability <= 0.0:
        return 1.0
    return min(1.0 / (num_devices * active_probability), 1.0)


def choose_params(
    grid: PosteriorGrid, cfg: NetworkConfig, stats: dict | None = None
) -> EarSelection:
    """Scan every threshold in {D, 2D, ..., k_max*D} and keep the best ear.

    The scan is exhaustive rather than a unimodal search; ``stats`` (when
    given) receives the number of local maxima seen, so multi-modal profiles
    are observable.  With no eligible mass anywhere a sentinel selection is
    returned whose threshold exceeds the grid, keeping every device silent.
    """
    n = cfg.num_devices
    d = grid.frame_len
    k_max = grid.k_max
    col = grid.mass.sum(axis=0)
    # suffix sums over k >= kmin for every candidate kmin = 1..k_max
    rho = np.cumsum(col[::-1])[::-1]
    gain = np.cumsum((col * np.arange(k_max + 1) * d)[::-1])[::-1]
    rho_c = rho[1:]
    gain_c = gain[1:]
    feasible = rho_c > 0.0
    if not feasible.any():
        if stats is not None:
            stats["local_maxima"] = 0
        sentinel = AccessParams(threshold=(k_max + 1) * d, tx_prob=1.0)
        return EarSelection(
            params=sentinel,
            active_prob=0.0,
            est_ear=-1.0,
            active_pmf=binom_pmf(n - 1, 0.0),
        )
    with np.errstate(divide="ignore", over="ignore"):
        p_opt = np.minimum(1.0 / (n * rho_c), 1.0)
    # pmf-weighted silence probability collapses to (1 - rho * p) ** (N - 1)
    ear = -1.0 + gain_c * p_opt * (1.0 - rho_c * p_opt) ** (n - 1)
    ear = np.where(feasible, ear, -np.inf)
    if stats is not None:
        finite = np.where(np.isfinite(ear), ear, -np.inf)
        if finite.size == 1:
            stats["local_maxima"] = int(np.isfinite(finite[0]))
        else:
            left = np.empty_like(finite)
            left[0], left[1:] = -np.inf, finite[:-1]
            right = np.empty_like(finite)
            right[-1], right[:-1] = -np.inf, finite[1:]
            stats["local_maxima"] = int(
                np.count_nonzero(np.isfinite(finite) & (finite > left) & (finite >= right))
            )
    # Exact ties happen when no belief mass sits between two candidate
    # thresholds (identical suffix sums); prefer the tightest eligibility rule,
    # which admits the same estimated reward with fewer spurious contenders.
    best = int(ear.size - 1 - np.argmax(ear[::-1]))
    threshold = (best + 1) * d
    tx_prob = float(p_opt[best])
    xi = binom_pmf(n - 1, float(rho_c[best]))
    return EarSelection(
        params=AccessParams(threshold=threshold, tx_prob=tx_prob),
        active_prob=float(rho_c[best]),
        est_ear=estimate_ear(grid, threshold, tx_prob, xi),
        active_pmf=xi,
    )


class _FeedbackScalars(NamedTuple):
    idle_active: float
    idle_inactive: float
    succ_active_stay: float
    succ_active_reset: float
    succ_inactive: float
    coll_active: float
    coll_inactive: float


def _feedback_scalars(xi: np.ndarray, p: float) -> _FeedbackScalars:
    """Per-cell feedback likelihoods; they depend only on eligibility.

    With u other eligible devices (pmf ``xi``) each transmitting w.p. p, the
    tagged device's own transmission is marginalised over when eligible.
    """
    n = len(xi)
    u = np.arange(n)
    pw = (1.0 - p) ** u  # (1-p)^u
    e_silent = float(np.dot(xi, pw))  # P(no other transmits)
    e_one = p * float(np.dot(xi[1:], u[1:] * pw[:-1])) if n > 1 else 0.0
    # collision among the others only (tagged silent or ineligible)
    pw_prev = np.empty(n)
    pw_prev[0] = 0.0
    pw_prev[1:] = pw[:-1]
    coll_others = np.clip(1.0 - pw - u * p * pw_prev, 0.0, None)
    coll_others[:2] = 0.0  # fewer than two others cannot collide by themselves
    e_coll_i = float(np.dot(xi, coll_others))
    # collision with the tagged device marginalised in (u+1 potential senders)
    coll_with = np.clip(1.0 - pw * (1.0 - p) - (u + 1) * p * pw, 0.0, None)
    coll_with[0] = 0.0  # a lone eligible device cannot collide
    e_coll_a = float(np.dot(xi, coll_with))
    return _FeedbackScalars(
        idle_active=(1.0 - p) * e_silent,
        idle_inactive=e_silent,
        succ_active_stay=(1.0 - p) * e_one,
        succ_active_reset=p * e_silent,
        succ_inactive=e_one,
        coll_active=e_coll_a,
        coll_inactive=e_coll_i,
    )


def transition_likelihood(
    w: int,
    g: int,
    threshold: int,
    p: float,
    xi: np.ndarray,
    observed: ChannelStatus,
) -> list[tuple[int, int, float]]:
    """Successor states and likelihoods of one cell under the feedback.

    The local age always advances; the gain either persists or (for an
    eligible cell that delivered) resets to zero.
    """
    s = _feedback_scalars(xi, p)
    eligible = g >= threshold
    if observed.kind == "idle":
        return [(w + 1, g, s.idle_active if eligible else s.idle_inactive)]
    if observed.kind == "success":
        if eligible:
            return [(w + 1, g, s.succ_active_stay), (w + 1, 0, s.succ_active_reset)]
        return [(w + 1, g, s.succ_inactive)]
    if eligible:
        return [(w + 1, g, s.coll_active)]
    return [(w + 1, g, s.coll_inactive)]


def _shift_slot(mass: np.ndarray, offset: int, frame_len: int) -> tuple[np.ndarray, int]:
    # advance w by one slot; crossing the frame boundary carries into l
    nu = offset + 1
    if nu < frame_len:
        return mass, nu
    out = np.zeros_like(mass)
    out[1:] = mass[:-1]
    out[-1] += mass[-1]
    return out, 0


def bayes_update(
    grid: PosteriorGrid, selection: EarSelection, observed: ChannelStatus
) -> PosteriorGrid:
    """Condition the posterior on one slot's feedback and advance the ages.

    A feedback with zero total likelihood (possible after boundary folding)
    falls back to the unconditioned predictive update and bumps the
    ``fallbacks`` diagnostic instead of aborting.
    """
    p = selection.params.tx_prob
    kmin = _kmin(grid, grid.frame_len, selection.params.threshold)
    s = _feedback_scalars(selection.active_pmf, p)
    mass = grid.mass
    out = np.empty_like(mass)
    if observed.kind == "idle":
        out[:, :kmin] = mass[:, :kmin] * s.idle_inactive
        out[:, kmin:] = mass[:, kmin:] * s.idle_active
    elif observed.kind == "success":
        out[:, :kmin] = mass[:, :kmin] * s.succ_inactive
        out[:, kmin:] = mass[:, kmin:] * s.succ_active_stay
        out[:, 0] += mass[:, kmin:].sum(axis=1) * s.succ_active_reset
    else:
        out[:, :kmin] = mass[:, :kmin] * s.coll_inactive
        out[:, kmin:] = mass[:, kmin:] * s.coll_active
    total = float(out.sum())
    if total <= 0.0:
        shifted, nu = _shift_slot(mass.copy(), grid.offset, grid.frame_len)
        return PosteriorGrid(shifted, nu, grid.frame_len, grid.fallbacks + 1)
    out /= total
    shifted, nu = _shift_slot(out, grid.offset, grid.frame_len)
    return PosteriorGrid(shifted, nu, grid.frame_len, grid.fallbacks)


def frame_boundary_update(grid: PosteriorGrid, gen_prob: float) -> PosteriorGrid:
    """Mix in the frame-start arrival: each cell (w, g) sends ``gen_prob`` of
    its mass to (0, w + g), the rest stays put."""
    if grid.offset != 0:
        raise ValueError(f"boundary update requires offset 0, got {grid.offset}")
    if not 0.0 < gen_prob <= 1.0:
        raise ValueError(f"gen_prob must be in (0, 1], got {gen_prob}")
    rows, cols = grid.mass.shape
    target = np.minimum(
        np.arange(rows)[:, None] + np.arange(cols)[None, :], cols - 1
    )
    moved = np.bincount(
        target.ravel(), weights=grid.mass.ravel(), minlength=cols
    )
    out = grid.mass * (1.0 - gen_prob)
    out[0] += gen_prob * moved
    return PosteriorGrid(out, 0, grid.frame_len, grid.fallbacks)


def enhanced_decide(
    state: DeviceState, selection: EarSelection, rng: np.random.Generator
) -> bool:
    """A device transmits w.p. the shared tx prob iff its gain meets the
    shared threshold."""
    if age_gain(state) < selection.params.threshold:
        return False
    return rng.random() < selection.params.tx_prob


class SharedEstimator:
    """The deterministic feedback-driven filter every device replicates."""

    def __init__(self, net: NetworkConfig, l_max: int = 64, k_max: int = 64):
        self.net = net
        self.grid = init_posterior(net, l_max, k_max)
        self.selection: EarSelection | None = None
        self.multimodal_slots = 0

    def begin_slot(self, t: int) -> EarSelection:
        if t > 0 and t % self.net.frame_len == 0:
            self.grid = frame_boundary_update(self.grid, self.net.gen_prob)
        stats: dict = {}
        self.selection = choose_params(self.grid, self.net, stats=stats)
        if stats.get("local_maxima", 0) > 1:
            self.multimodal_slots += 1
        return self.selection

    def end_slot(self, observed: ChannelStatus) -> None:
        if self.selection is None:
            raise RuntimeError("end_slot before begin_slot")
        self.grid = bayes_update(self.grid, self.selection, observed)

    @property
    def fallbacks(self) -> int:
        return self.grid.fallbacks


class EnhancedPolicy(Policy):
    """Adaptive scheme: shared estimator plus threshold/probability replay."""

    def __init__(
        self, l_max: int = 64, k_max: int = 64, record_selections: bool = False
    ):
        self.l_max = l_max
        self.k_max = k_max
        self.record_selections = record_selections
        self.estimator: SharedEstimator | None = None
        self.selections: list[AccessParams] = []

    def bind(self, net: NetworkConfig) -> None:
        self.estimator = SharedEstimator(net, self.l_max, self.k_max)
        self.selections = []
        self._sel: EarSelection | None = None

    def begin_slot(self, t: int, oracle: OracleView | None = None) -> None:
        self._sel = self.estimator.begin_slot(t)
        if self.record_selections:
            self.selections.append(self._sel.params)

    def decide(self, t, device_id, state, u):
        if age_gain(state) < self._sel.params.threshold:
            return False
        return u < self._sel.params.tx_prob

    def decide_all(self, t, local_age, aoi, u):
        params = self._sel.params
        return (aoi - local_age >= params.threshold) & (u < params.tx_prob)

    def observe(self, t: int, status: ChannelStatus) -> None:
        self.estimator.end_slot(status)

    def diagnostics(self) -> dict[str, int]:
        return {
            "bayes_fallbacks": self.estimator.fallbacks,
            "multimodal_slots": self.estimator.multimodal_slots,
        }
