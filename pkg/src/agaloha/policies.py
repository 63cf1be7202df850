"""Access policies: the basic gain-threshold scheme and benchmark schemes.

The decide functions are the single-device rules; the policy classes wrap
them for the simulation engine and carry the compiled fast-path parameters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .core import DeviceState, age_gain
from .simkit import OracleView, Policy

__all__ = [
    "BasicParams",
    "AccessParams",
    "basic_decide",
    "aloha_gamma1_decide",
    "aoi_threshold_decide",
    "ideal_adaptive_decide",
    "ideal_schedule_pick",
    "BasicPolicy",
    "AlohaGamma1Policy",
    "AoiThresholdPolicy",
    "IdealAdaptivePolicy",
    "IdealSchedulingPolicy",
]


@dataclass(frozen=True)
class BasicParams:
    """Fixed gain threshold and transmit probability of the basic scheme."""

    threshold: int
    tx_prob: float

    def __post_init__(self) -> None:
        if self.threshold < 1:
            raise ValueError(f"threshold must be >= 1, got {self.threshold}")
        if not 0.0 < self.tx_prob <= 1.0:
            raise ValueError(f"tx_prob must be in (0, 1], got {self.tx_prob}")


@dataclass(frozen=True)
class AccessParams:
    """Per-slot access parameters chosen by an adaptive scheme."""

    threshold: int
    tx_prob: float

    def __post_init__(self) -> None:
        if self.threshold < 1:
            raise ValueError(f"threshold must be >= 1, got {self.threshold}")
        if not 0.0 < self.tx_prob <= 1.0:
            raise ValueError(f"tx_prob must be in (0, 1], got {self.tx_prob}")


def basic_decide(state: DeviceState, params: BasicParams, rng: np.random.Generator) -> bool:
    """Transmit with probability ``tx_prob`` iff the age gain meets the threshold."""
    if age_gain(state) < params.threshold:
        return False
    return rng.random() < params.tx_prob


def aloha_gamma1_decide(state: DeviceState, tx_prob: float, rng: np.random.Generator) -> bool:
    """Classic slotted ALOHA over non-empty buffers (threshold fixed at 1)."""
    return basic_decide(state, BasicParams(1, tx_prob), rng)


def aoi_threshold_decide(
    state: DeviceState, aoi_threshold: int, tx_prob: float, rng: np.random.Generator
) -> bool:
    """Threshold on the receiver-side age instead of the age gain."""
    if state.aoi < aoi_threshold or age_gain(state) < 1:
        return False
    return rng.random() < tx_prob


def ideal_adaptive_decide(
    state: DeviceState, oracle_active_count: int, rng: np.random.Generator
) -> bool:
    """Genie-aided ALOHA: all non-empty buffers transmit w.p. 1/active-count."""
    if age_gain(state) < 1:
        return False
    return rng.random() < 1.0 / max(oracle_active_count, 1)


def ideal_schedule_pick(states: Sequence[DeviceState]) -> int | None:
    """Centralised pick: the device with the largest positive age gain.

    Ties resolve to the lowest device index; None when every buffer is empty.
    """
    best: int | None = None
    best_gain = 0
    for i, state in enumerate(states):
        g = age_gain(state)
        if g >= 1 and g > best_gain:
            best, best_gain = i, g
    return best


class BasicPolicy(Policy):
    """Fixed (threshold, tx_prob) gain-threshold access."""

    def __init__(self, params: BasicParams):
        self.params = params

    def decide(self, t: int, device_id: int, state: DeviceState, u: float) -> bool:
        if age_gain(state) < self.params.threshold:
            return False
        return u < self.params.tx_prob

    def decide_all(self, t, local_age, aoi, u):
        return (aoi - local_age >= self.params.threshold) & (u < self.params.tx_prob)

    def kernel_spec(self) -> dict:
        return {
            "mode": _kernels.MODE_GAIN_THRESHOLD,
            "threshold": self.params.threshold,
            "tx_prob": self.params.tx_prob,
        }


class AlohaGamma1Policy(BasicPolicy):
    def __init__(self, tx_prob: float):
        super().__init__(BasicParams(1, tx_prob))


class AoiThresholdPolicy(Policy):
    """Transmit w.p. ``tx_prob`` when the AoI is high and the buffer non-empty."""

    def __init__(self, aoi_threshold: int, tx_prob: float):
        if aoi_threshold < 1:
            raise ValueError(f"aoi_threshold must be >= 1, got {aoi_threshold}")
        if not 0.0 < tx_prob <= 1.0:
            raise ValueError(f"tx_prob must be in (0, 1], got {tx_prob}")
        self.aoi_threshold = aoi_threshold
        self.tx_prob = tx_prob

    def decide(self, t, device_id, state, u):
        if state.aoi < self.aoi_threshold or age_gain(state) < 1:
            return False
        return u < self.tx_prob

    def decide_all(self, t, local_age, aoi, u):
        active = (aoi >= self.aoi_threshold) & (aoi - local_age >= 1)
        return active & (u < self.tx_prob)

    def kernel_spec(self) -> dict:
        return {
            "mode": _kernels.MODE_AOI_THRESHOLD,
            "threshold": self.aoi_threshold,
            "tx_prob": self.tx_prob,
        }


class IdealAdaptivePolicy(Policy):
    """Oracle benchmark: equal-split ALOHA over the true active count."""

    uses_oracle = True

    def __init__(self) -> None:
        self._p = 1.0

    def begin_slot(self, t: int, oracle: OracleView | None = None) -> None:
        count = oracle.active_count() if oracle is not None else 0
        self._p = 1.0 / max(count, 1)

    def decide(self, t, device_id, state, u):
        if age_gain(state) < 1:
            return False
        return u < self._p

    def decide_all(self, t, local_age, aoi, u):
        return (aoi - local_age >= 1) & (u < self._p)

    def kernel_spec(self) -> dict:
        return {"mode": _kernels.MODE_IDEAL_ADAPTIVE, "threshold": 1, "tx_prob": 1.0}


class IdealSchedulingPolicy(Policy):
    """Oracle benchmark: schedule the max-gain device, collision-free."""

    uses_oracle = True

    def __init__(self) -> None:
        self._pick: int | None = None

    def begin_slot(self, t: int, oracle: OracleView | None = None) -> None:
        self._pick = None
        if oracle is None:
            return
        gains = oracle.age_gain
        idx = int(np.argmax(gains))
        if gains[idx] >= 1:
            self._pick = idx

    def decide(self, t, device_id, state, u):
        return device_id == self._pick

    def decide_all(self, t, local_age, aoi, u):
        out = np.zeros(local_age.shape[0], dtype=bool)
        if self._pick is not None:
            out[self._pick] = True
        return out

    def kernel_spec(self) -> dict:
        return {"mode": _kernels.MODE_IDEAL_SCHEDULING, "threshold": 1, "tx_prob": 1.0}
