"""Time structure, device-state dynamics, channel contention, and the AoI floor.

Time is slotted and grouped into frames of ``frame_len`` slots.  Status
updates arrive only at frame starts, each device independently with
probability ``gen_prob``, and a fresh update replaces any undelivered
older one.  A slot carries at most one successful transmission; every
device observes ternary feedback (idle / success / collision) at the end
of each slot.

Every other module builds on the types defined here.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

__all__ = [
    "NetworkConfig",
    "SlotIndex",
    "DeviceState",
    "ChannelStatus",
    "IDLE",
    "COLLISION",
    "IDLE_CODE",
    "SUCCESS_CODE",
    "COLLISION_CODE",
    "success",
    "status_from_code",
    "age_gain",
    "step_device",
    "resolve_channel",
    "aaoi_lower_bound",
]


@dataclass(frozen=True)
class NetworkConfig:
    """Static network parameters shared by simulator, estimator, and solver."""

    num_devices: int
    gen_prob: float
    frame_len: int

    def __post_init__(self) -> None:
        if self.num_devices < 1:
            raise ValueError(f"num_devices must be >= 1, got {self.num_devices}")
        if not 0.0 < self.gen_prob <= 1.0:
            raise ValueError(f"gen_prob must be in (0, 1], got {self.gen_prob}")
        if self.frame_len < 1:
            raise ValueError(f"frame_len must be >= 1, got {self.frame_len}")


@dataclass(frozen=True)
class SlotIndex:
    """A slot ``t`` decomposed as ``t = frame * frame_len + offset``."""

    t: int
    frame: int
    offset: int

    def __post_init__(self) -> None:
        if self.t < 0 or self.frame < 0 or self.offset < 0:
            raise ValueError("slot indices are non-negative")

    @classmethod
    def from_slot(cls, t: int, frame_len: int) -> "SlotIndex":
        if frame_len < 1:
            raise ValueError(f"frame_len must be >= 1, got {frame_len}")
        frame, offset = divmod(t, frame_len)
        return cls(t=t, frame=frame, offset=offset)

    @property
    def is_frame_start(self) -> bool:
        return self.offset == 0


@dataclass(frozen=True)
class DeviceState:
    """Per-device ages at the beginning of a slot.

    ``local_age`` is the age of the newest generated update (slots since its
    generation); ``aoi`` is the age of the newest *delivered* update at the
    receiver.  The buffered update is worth delivering exactly when the age
    gain ``aoi - local_age`` is positive.
    """

    local_age: int
    aoi: int

    def __post_init__(self) -> None:
        if self.local_age < 0:
            raise ValueError(f"local_age must be >= 0, got {self.local_age}")
        if self.aoi < self.local_age:
            raise ValueError(
                f"aoi must be >= local_age, got aoi={self.aoi} local_age={self.local_age}"
            )


def age_gain(state: DeviceState) -> int:
    """AoI drop the receiver would see if the buffered update got through now."""
    return state.aoi - state.local_age


def step_device(
    state: DeviceState, arrived: bool, delivered: bool, frame_start: bool
) -> DeviceState:
    """Advance a device across one slot boundary.

    Delivery is applied first, using the pre-arrival local age (the update
    delivered in the closing slot is the one that was buffered at its start);
    the arrival then resets the local age.  ``frame_start`` says whether the
    boundary being crossed begins a new frame; arrivals are rejected elsewhere.
    """
    if arrived and not frame_start:
        raise ValueError("arrivals occur only at frame starts")
    aoi = state.local_age + 1 if delivered else state.aoi + 1
    local_age = 0 if arrived else state.local_age + 1
    return DeviceState(local_age=local_age, aoi=aoi)


IDLE_CODE, SUCCESS_CODE, COLLISION_CODE = 0, 1, 2

_VALID_KINDS = ("idle", "success", "collision")


@dataclass(frozen=True)
class ChannelStatus:
    """Ternary slot feedback; ``winner`` is set only for a success."""

    kind: str
    winner: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in _VALID_KINDS:
            raise ValueError(f"unknown channel status {self.kind!r}")
        if (self.winner is not None) != (self.kind == "success"):
            raise ValueError("winner must be present exactly for a success")
        if self.winner is not None and self.winner < 0:
            raise ValueError(f"winner must be a device id, got {self.winner}")

    @property
    def code(self) -> int:
        return _VALID_KINDS.index(self.kind)


IDLE = ChannelStatus("idle")
COLLISION = ChannelStatus("collision")


def success(winner: int) -> ChannelStatus:
    return ChannelStatus("success", winner)


def status_from_code(code: int, winner: int = -1) -> ChannelStatus:
    if code == IDLE_CODE:
        return IDLE
    if code == SUCCESS_CODE:
        return success(winner)
    if code == COLLISION_CODE:
        return COLLISION
    raise ValueError(f"unknown status code {code}")


def resolve_channel(transmitters: Iterable[int]) -> ChannelStatus:
    """Collision-channel outcome for the set of transmitting device ids."""
    ids = list(transmitters)
    if len(ids) != len(set(ids)):
        raise ValueError("duplicate transmitter ids")
    if not ids:
        return IDLE
    if len(ids) == 1:
        return success(ids[0])
    return COLLISION


def aaoi_lower_bound(cfg: NetworkConfig) -> float:
    """Per-device AAoI floor from generation randomness alone.

    Inter-arrival times are ``frame_len``-slot frames with a geometric frame
    count, so even instant error-free delivery leaves a mean AoI of
    ``D / lam + (1 - D) / 2``.
    """
    return cfg.frame_len / cfg.gen_prob + (1.0 - cfg.frame_len) / 2.0
