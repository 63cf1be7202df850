"""Slot-level network simulator.

The engine owns the event order inside a slot: record ages, let the policy
decide, resolve the channel, report feedback to the policy, then apply
deliveries followed by frame-start arrivals.

Randomness is split into one stream per (replication, device) for arrivals
plus one stream per replication for policy decision draws, so changing the
access policy never perturbs the arrival sample paths.  Decision draws are
positional -- device ``n`` in slot ``t`` owns the uniform ``u[t, n]`` whether
or not it is consumed -- which makes trajectories bit-reproducible across
the compiled and interpreted engine paths.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from . import _kernels
from ._util import student_t_halfwidth
from .core import (
    COLLISION,
    IDLE,
    ChannelStatus,
    DeviceState,
    NetworkConfig,
    success,
)

__all__ = [
    "SimConfig",
    "EpisodeResult",
    "SimResult",
    "OracleView",
    "Policy",
    "run_episode",
    "run_experiment",
]

_SEED_MASK = (1 << 64) - 1
_CHUNK_SLOTS = 32768


@dataclass(frozen=True)
class SimConfig:
    """Experiment shape: network, horizon, warmup, replications, base seed.

    ``warmup_slots=None`` defaults to 10% of the horizon; warmup slots are
    excluded from all AAoI averages and slot tallies.
    """

    net: NetworkConfig
    horizon_slots: int
    warmup_slots: int | None = None
    replications: int = 1
    base_seed: int = 0

    def __post_init__(self) -> None:
        if self.horizon_slots < 1:
            raise ValueError(f"horizon_slots must be >= 1, got {self.horizon_slots}")
        if self.replications < 1:
            raise ValueError(f"replications must be >= 1, got {self.replications}")
        warmup = self.resolved_warmup
        if not 0 <= warmup < self.horizon_slots:
            raise ValueError(
                f"warmup_slots must lie in [0, horizon), got {warmup} of {self.horizon_slots}"
            )

    @property
    def resolved_warmup(self) -> int:
        if self.warmup_slots is None:
            return self.horizon_slots // 10
        return self.warmup_slots


@dataclass
class EpisodeResult:
    """Outcome of one replication."""

    per_device_aaoi: np.ndarray
    network_aaoi: float
    slot_counts: dict[str, int]
    diagnostics: dict[str, int]
    trace: np.ndarray | None = None


@dataclass
class SimResult:
    """Replication-aggregated outcome of :func:`run_experiment`."""

    per_device_aaoi: np.ndarray
    network_aaoi_mean: float
    network_aaoi_ci95_halfwidth: float
    slot_counts: dict[str, int]
    diagnostics: dict[str, int]
    replication_aaoi: np.ndarray


@dataclass(frozen=True)
class OracleView:
    """Global state snapshot, handed only to policies flagged ``uses_oracle``."""

    local_age: np.ndarray
    aoi: np.ndarray

    @property
    def age_gain(self) -> np.ndarray:
        return self.aoi - self.local_age

    def active_count(self) -> int:
        return int(np.count_nonzero(self.age_gain >= 1))

    def states(self) -> list[DeviceState]:
        return [
            DeviceState(int(w), int(h)) for w, h in zip(self.local_age, self.aoi)
        ]


class Policy:
    """Per-slot decision procedure driven by the engine.

    The engine calls ``bind`` once per episode, then per slot ``begin_slot``
    (with an :class:`OracleView` only when ``uses_oracle`` is set), the
    decision hook, and ``observe`` with the slot's channel feedback.  A policy
    builds any feedback summary it needs from the ``observe`` stream.
    """

    uses_oracle: bool = False

    def bind(self, net: NetworkConfig) -> None:
        pass

    def begin_slot(self, t: int, oracle: OracleView | None = None) -> None:
        pass

    def decide(self, t: int, device_id: int, state: DeviceState, u: float) -> bool:
        raise NotImplementedError

    def decide_all(
        self, t: int, local_age: np.ndarray, aoi: np.ndarray, u: np.ndarray
    ) -> np.ndarray:
        out = np.zeros(local_age.shape[0], dtype=bool)
        for n in range(local_age.shape[0]):
            state = DeviceState(int(local_age[n]), int(aoi[n]))
            out[n] = self.decide(t, n, state, float(u[n]))
        return out

    def observe(self, t: int, status: ChannelStatus) -> None:
        pass

    def kernel_spec(self) -> dict | None:
        """Parameters of a compiled fast path, or None to run interpreted."""
        return None

    def diagnostics(self) -> dict[str, int]:
        return {}


def _device_generators(
    base_seed: int, replication: int, num_devices: int
) -> tuple[list[np.random.Generator], np.random.Generator]:
    seed = base_seed & _SEED_MASK
    device = [
        np.random.default_rng(np.random.SeedSequence([seed, replication, d]))
        for d in range(num_devices)
    ]
    policy = np.random.default_rng(np.random.SeedSequence([seed, replication, num_devices]))
    return device, policy


def _chunk_bounds(horizon: int, frame_len: int) -> Iterator[tuple[int, int]]:
    step = max(frame_len, (_CHUNK_SLOTS // frame_len) * frame_len)
    t0 = 0
    while t0 < horizon:
        yield t0, min(step, horizon - t0)
        t0 += step


def _arrival_rows(
    gens: list[np.random.Generator], rows: int, num_devices: int
) -> np.ndarray:
    out = np.empty((rows, num_devices))
    for d, gen in enumerate(gens):
        out[:, d] = gen.random(rows)
    return out


def run_episode(
    cfg: SimConfig,
    policy: Policy,
    replication_index: int = 0,
    *,
    record_trace: bool = False,
    track_tagged_frames: bool = False,
) -> EpisodeResult:
    """Simulate one replication and return its AAoI statistics.

    ``track_tagged_frames`` adds frame-level success counts of device 0 to the
    diagnostics (compiled gain-threshold policies only); used to cross-check
    the analytic fixed point against simulation.
    """
    net = cfg.net
    if replication_index < 0:
        raise ValueError("replication_index must be >= 0")
    policy.bind(net)
    dev_gens, pol_gen = _device_generators(
        cfg.base_seed, replication_index, net.num_devices
    )
    spec = policy.kernel_spec()
    if spec is not None and not record_trace:
        return _kernel_episode(
            cfg, policy, spec, dev_gens, pol_gen, track_tagged_frames
        )
    if track_tagged_frames:
        raise ValueError("tagged-frame tracking needs a compiled gain-threshold policy")
    return _python_episode(cfg, policy, dev_gens, pol_gen, record_trace)


def _kernel_episode(cfg, policy, spec, dev_gens, pol_gen, track_tagged_frames):
    net = cfg.net
    n_dev, frame_len, lam = net.num_devices, net.frame_len, net.gen_prob
    horizon, warmup = cfg.horizon_slots, cfg.resolved_warmup
    if track_tagged_frames and spec["mode"] != _kernels.MODE_GAIN_THRESHOLD:
        raise ValueError("tagged-frame tracking needs a gain-threshold policy")

    w = np.zeros(n_dev, dtype=np.int64)
    h = np.zeros(n_dev, dtype=np.int64)
    h_sums = np.zeros(n_dev, dtype=np.int64)
    tallies = np.zeros(3, dtype=np.int64)
    frame_stats = np.zeros(3, dtype=np.int64)
    use_arrivals = lam < 1.0

    for t0, n_slots in _chunk_bounds(horizon, frame_len):
        pol_u = pol_gen.random((n_slots, n_dev))
        rows = (t0 + n_slots) // frame_len - t0 // frame_len
        if use_arrivals and rows > 0:
            arr_u = _arrival_rows(dev_gens, rows, n_dev)
        else:
            arr_u = np.empty((0, n_dev))
        _kernels.sim_chunk(
            w,
            h,
            spec["mode"],
            spec["threshold"],
            spec["tx_prob"],
            pol_u,
            arr_u,
            use_arrivals,
            lam,
            frame_len,
            t0,
            warmup,
            h_sums,
            tallies,
            frame_stats,
            track_tagged_frames,
        )

    measured = horizon - warmup
    per_device = h_sums / measured
    counts = {
        "idle": int(tallies[0]),
        "success": int(tallies[1]),
        "collision": int(tallies[2]),
    }
    diagnostics = dict(policy.diagnostics())
    if track_tagged_frames:
        diagnostics["tagged_active_frames"] = int(frame_stats[0])
        diagnostics["tagged_frame_successes"] = int(frame_stats[1])
    return EpisodeResult(
        per_device_aaoi=per_device,
        network_aaoi=float(per_device.mean()),
        slot_counts=counts,
        diagnostics=diagnostics,
    )


def _python_episode(cfg, policy, dev_gens, pol_gen, record_trace):
    net = cfg.net
    n_dev, frame_len, lam = net.num_devices, net.frame_len, net.gen_prob
    horizon, warmup = cfg.horizon_slots, cfg.resolved_warmup

    w = np.zeros(n_dev, dtype=np.int64)
    h = np.zeros(n_dev, dtype=np.int64)
    h_sums = np.zeros(n_dev, dtype=np.int64)
    tallies = np.zeros(3, dtype=np.int64)
    use_arrivals = lam < 1.0
    trace = np.empty((horizon, n_dev), dtype=np.int64) if record_trace else None

    for t0, n_slots in _chunk_bounds(horizon, frame_len):
        pol_u = pol_gen.random((n_slots, n_dev))
        rows = (t0 + n_slots) // frame_len - t0 // frame_len
        arr_u = _arrival_rows(dev_gens, rows, n_dev) if (use_arrivals and rows) else None
        first_frame = t0 // frame_len + 1
        for i in range(n_slots):
            t = t0 + i
            if record_trace:
                trace[t] = h
            if t >= warmup:
                h_sums += h

            oracle = OracleView(w, h) if policy.uses_oracle else None
            policy.begin_slot(t, oracle)
            tx = policy.decide_all(t, w, h, pol_u[i])
            ids = np.flatnonzero(tx)
            if ids.size == 0:
                status = IDLE
            elif ids.size == 1:
                status = success(int(ids[0]))
            else:
                status = COLLISION
            if t >= warmup:
                tallies[status.code] += 1
            policy.observe(t, status)

            if status.winner is not None:
                delivered_aoi = w[status.winner] + 1
                h += 1
                h[status.winner] = delivered_aoi
            else:
                h += 1
            tp1 = t + 1
            if tp1 % frame_len == 0:
                if use_arrivals:
                    arrived = arr_u[tp1 // frame_len - first_frame] < lam
                    w = np.where(arrived, 0, w + 1)
                else:
                    w[:] = 0
            else:
                w += 1

    measured = horizon - warmup
    per_device = h_sums / measured
    counts = {
        "idle": int(tallies[0]),
        "success": int(tallies[1]),
        "collision": int(tallies[2]),
    }
    return EpisodeResult(
        per_device_aaoi=per_device,
        network_aaoi=float(per_device.mean()),
        slot_counts=counts,
        diagnostics=dict(policy.diagnostics()),
        trace=trace,
    )


def run_experiment(
    cfg: SimConfig, policy_factory: Callable[[], Policy] | Policy
) -> SimResult:
    """Run all replications and aggregate.

    ``policy_factory`` is called once per replication so that stateful
    policies (the adaptive scheme in particular) start each episode fresh;
    passing a bare policy instance re-binds it instead.
    """
    reps = cfg.replications
    per_device = np.zeros((reps, cfg.net.num_devices))
    networks = np.zeros(reps)
    counts = {"idle": 0, "success": 0, "collision": 0}
    diagnostics: dict[str, int] = {}
    for r in range(reps):
        policy = policy_factory() if callable(policy_factory) else policy_factory
        episode = run_episode(cfg, policy, r)
        per_device[r] = episode.per_device_aaoi
        networks[r] = episode.network_aaoi
        for key in counts:
            counts[key] += episode.slot_counts[key]
        for key, value in episode.diagnostics.items():
            diagnostics[key] = diagnostics.get(key, 0) + value
    return SimResult(
        per_device_aaoi=per_device.mean(axis=0),
        network_aaoi_mean=float(networks.mean()),
        network_aaoi_ci95_halfwidth=student_t_halfwidth(networks),
        slot_counts=counts,
        diagnostics=diagnostics,
        replication_aaoi=networks,
    )
