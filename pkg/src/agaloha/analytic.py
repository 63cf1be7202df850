"""Markov model of the fixed-parameter gain-threshold scheme.

The model has two layers.  The outer layer follows one tagged device from
frame start to frame start: with ages scaled by the frame length ``D`` its
state is ``(l, k)`` (local age ``l*D``, age gain ``k*D``), and

    (l, k) -> (0, l+1)      w.p. lam * beta      (delivered, fresh arrival)
           -> (0, l+k+1)    w.p. lam * (1-beta)  (not delivered, fresh arrival)
           -> (l+1, 0)      w.p. (1-lam) * beta
           -> (l+1, k)      w.p. (1-lam) * (1-beta)

where ``beta``, the per-frame delivery probability, is zero for states below
the threshold index ``gamma`` and a single shared constant above it.  The
inner layer resolves one frame of contention between the tagged device and
``s`` other eligible devices, giving the per-slot delivery split ``alpha``
and, summed, ``beta``.  The two layers close through a scalar fixed point:
the stationary outer chain determines how many devices are eligible, which
determines ``beta``, which determines the outer chain.

The outer chain is skip-free downward in ``l``, so its stationary
distribution follows from the frame-start row ``pi[0, :]`` via geometric
factors; that row in turn satisfies a forward recursion solved in
O(trunc_k) time (see ``_kernels.entrance_row``).  This replaces a generic
power iteration and is what makes parameter searches affordable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from ._util import binom_pmf
from .core import NetworkConfig, aaoi_lower_bound
from .policies import BasicParams

__all__ = [
    "TAIL_GATE",
    "TruncationError",
    "FixedPointError",
    "ExternalChainSpec",
    "ExternalChainSolution",
    "InternalChainSolution",
    "spec_for_params",
    "external_transition",
    "steady_state",
    "boundary_tail_mass",
    "mixture_weights",
    "internal_transition_matrix",
    "slot_success_probs",
    "mixed_alpha",
    "stability_margin",
    "solve_fixed_point",
    "solve_auto",
    "frame_aaoi_terms",
    "network_aaoi",
    "dump_solution",
]

TAIL_GATE = 1e-4
# the near-zero start probes the all-eligible (cold start / congested) basin
_DEFAULT_STARTS = (1e-9,) + tuple(round(0.05 + 0.1 * i, 2) for i in range(10))


class TruncationError(RuntimeError):
    """The truncated grid holds too much boundary mass to be trusted."""

    def __init__(self, row_tail: float, col_tail: float, caps: tuple[int, int]):
        self.row_tail = row_tail
        self.col_tail = col_tail
        self.tail_mass = row_tail + col_tail
        self.caps = caps
        super().__init__(
            f"boundary mass {self.tail_mass:.3e} exceeds {TAIL_GATE:.0e} "
            f"at caps (trunc_l={caps[0]}, trunc_k={caps[1]})"
        )


class FixedPointError(RuntimeError):
    """No damped iteration start converged."""

    def __init__(self, diagnostics: list[tuple[float, float, float]]):
        self.diagnostics = diagnostics
        lines = ", ".join(f"start {b0:.2f} -> {b:.4f} (res {r:.1e})" for b0, b, r in diagnostics)
        super().__init__(f"no fixed point converged: {lines}")


@dataclass(frozen=True)
class ExternalChainSpec:
    """Outer-chain instance: network, threshold index, tx prob, truncation."""

    cfg: NetworkConfig
    gamma: int
    tx_prob: float
    trunc_l: int = 256
    trunc_k: int = 256

    def __post_init__(self) -> None:
        if self.gamma < 1:
            raise ValueError(f"gamma must be >= 1, got {self.gamma}")
        if not 0.0 < self.tx_prob <= 1.0:
            raise ValueError(f"tx_prob must be in (0, 1], got {self.tx_prob}")
        if self.trunc_k < self.gamma + 2:
            raise ValueError(
                f"trunc_k must be >= gamma + 2, got {self.trunc_k} with gamma {self.gamma}"
            )
        if self.trunc_l < 2:
            raise ValueError(f"trunc_l must be >= 2, got {self.trunc_l}")


def spec_for_params(
    cfg: NetworkConfig,
    params: BasicParams,
    trunc_l: int = 256,
    trunc_k: int = 256,
) -> ExternalChainSpec:
    """Outer-chain spec for a basic policy; thresholds round up to frames."""
    gamma = -(-params.threshold // cfg.frame_len)
    return ExternalChainSpec(
        cfg=cfg,
        gamma=gamma,
        tx_prob=params.tx_prob,
        trunc_l=trunc_l,
        trunc_k=max(trunc_k, gamma + 2),
    )


@dataclass
class InternalChainSolution:
    """Within-frame contention resolved for every possible competitor count."""

    phi: list[np.ndarray]  # phi[s][nu] = state distribution after nu slots
    alpha_by_s: np.ndarray  # (N, D): tagged delivery prob in slot nu given s others
    chi: np.ndarray  # (N,): competitor-count mixture at the fixed point


@dataclass
class ExternalChainSolution:
    pi: np.ndarray
    beta: float
    alpha: np.ndarray
    tail_mass: float
    fixed_points_found: list[float]
    chi: np.ndarray = field(default_factory=lambda: np.zeros(0))


def external_transition(
    l: int, k: int, lam: float, gamma: int, beta: float
) -> list[tuple[tuple[int, int], float]]:
    """Nonzero outer-chain transitions out of (l, k)."""
    if l < 0 or k < 0:
        raise ValueError("state indices are non-negative")
    if not 0.0 < lam <= 1.0:
        raise ValueError(f"lam must be in (0, 1], got {lam}")
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must be in [0, 1], got {beta}")
    if gamma < 1:
        raise ValueError(f"gamma must be >= 1, got {gamma}")
    b = beta if k >= gamma else 0.0
    moves = [
        ((0, l + 1), lam * b),
        ((0, l + k + 1), lam * (1.0 - b)),
        ((l + 1, 0), (1.0 - lam) * b),
        ((l + 1, k), (1.0 - lam) * (1.0 - b)),
    ]
    return [(state, prob) for state, prob in moves if prob > 0.0]


def boundary_tail_mass(pi: np.ndarray) -> tuple[float, float]:
    """Mass in the outermost two rows and columns (overlap counted once)."""
    row = float(pi[-2:].sum())
    col = float(pi[:, -2:].sum()) - float(pi[-2:, -2:].sum())
    return row, col


def _chain_totals(beta: float, lam: float, gamma: int) -> tuple[float, float, float]:
    """Exact untruncated totals in the entrance-row scale.

    The entrance row satisfies sum_{k >= gamma} x_k = 1, the below-threshold
    part X_low is a finite sum, and the l direction is geometric, so the
    full-chain mass splits in closed form:

        total = col0 + X_low / lam + 1 / (1 - q),  q = (1-lam)(1-beta)
        col0  = 1 / lam - 1 / (1 - q)              (the k = 0 column)

    Returns (total, eligible mass 1/(1-q), X_low).
    """
    q = (1.0 - lam) * (1.0 - beta)
    eligible = 1.0 / (1.0 - q)
    x_low = 0.0
    if gamma > 1:
        head = _kernels.entrance_row(beta, lam, gamma, gamma)
        x_low = float(head[1:gamma].sum())
    total = (1.0 / lam - eligible) + x_low / lam + eligible
    return total, eligible, x_low


def steady_state(spec: ExternalChainSpec, beta: float) -> np.ndarray:
    """Stationary distribution of the outer chain for a given ``beta``.

    Solved structurally: the frame-start row comes from the skip-free
    recursion and the l >= 1 rows follow by geometric decay, with the k = 0
    column in closed form.  The untruncated total mass is known exactly, so
    the mass lost to truncation is measured exactly; more than ``TAIL_GATE``
    of it (or of near-boundary mass) raises :class:`TruncationError`.
    """
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta must be in (0, 1], got {beta}")
    lam = spec.cfg.gen_prob
    gamma = spec.gamma
    cap_l, cap_k = spec.trunc_l, spec.trunc_k
    x = _kernels.entrance_row(beta, lam, gamma, cap_k)
    q = (1.0 - lam) * (1.0 - beta)
    full_total, _, _ = _chain_totals(beta, lam, gamma)
    # column loss: eligible mass beyond cap_k, summed over every row
    deficit_act = max(1.0 - float(x[gamma:].sum()), 0.0)
    col_loss = deficit_act / (1.0 - q) / full_total
    l = np.arange(cap_l + 1)
    pow_lam = (1.0 - lam) ** l
    pow_q = q**l
    pi = np.empty((cap_l + 1, cap_k + 1))
    pi[:, 0] = pow_lam * (1.0 - (1.0 - beta) ** l)
    if gamma > 1:
        pi[:, 1:gamma] = pow_lam[:, None] * x[None, 1:gamma]
    pi[:, gamma:] = pow_q[:, None] * x[None, gamma:]
    total = float(pi.sum())
    if total <= 0.0:
        raise TruncationError(0.0, 1.0, (cap_l, cap_k))
    row_loss = max(1.0 - total / full_total - col_loss, 0.0)
    if row_loss + col_loss > TAIL_GATE:
        raise TruncationError(row_loss, col_loss, (cap_l, cap_k))
    pi /= total
    row_tail, col_tail = boundary_tail_mass(pi)
    if row_tail + col_tail > TAIL_GATE:
        raise TruncationError(row_tail, col_tail, (cap_l, cap_k))
    return pi


def _active_fraction(beta: float, lam: float, gamma: int) -> float:
    # eligible-state probability of the untruncated chain, in closed form
    total, eligible, _ = _chain_totals(beta, lam, gamma)
    if total <= 0.0:
        return 1.0
    return eligible / total


def mixture_weights(pi: np.ndarray, gamma: int, num_devices: int) -> np.ndarray:
    """Binomial pmf of the number of *other* eligible devices under ``pi``."""
    q = float(pi[:, gamma:].sum())
    return binom_pmf(num_devices - 1, q)


def internal_transition_matrix(s: int, tx_prob: float) -> np.ndarray:
    """One-slot matrix of the within-frame chain: states 0..s count how many
    of the ``s`` other eligible devices already delivered; the last state
    absorbs the tagged device's own delivery."""
    if s < 0:
        raise ValueError(f"s must be >= 0, got {s}")
    if not 0.0 < tx_prob <= 1.0:
        raise ValueError(f"tx_prob must be in (0, 1], got {tx_prob}")
    p = tx_prob
    size = s + 2
    mat = np.zeros((size, size))
    for y in range(s + 1):
        rem = s - y  # other eligible devices still contending
        solo = p * (1.0 - p) ** rem
        mat[y, s + 1] = solo  # tagged delivers alone
        mat[y, y + 1 if y < s else y] += rem * solo  # someone else delivers
        mat[y, y] += 1.0 - (rem + 1) * solo
    mat[s + 1, s + 1] = 1.0
    return mat


def slot_success_probs(s: int, tx_prob: float, frame_len: int) -> np.ndarray:
    """Tagged-device delivery probability in each slot of one frame."""
    if frame_len < 1:
        raise ValueError(f"frame_len must be >= 1, got {frame_len}")
    mat = internal_transition_matrix(s, tx_prob)
    phi = np.zeros(s + 2)
    phi[0] = 1.0
    alpha = np.empty(frame_len)
    for nu in range(frame_len):
        nxt = phi @ mat
        alpha[nu] = nxt[s + 1] - phi[s + 1]
        phi = nxt
    return alpha


def _internal_tables(
    num_devices: int, tx_prob: float, frame_len: int
) -> tuple[list[np.ndarray], np.ndarray, np.ndarray]:
    phis: list[np.ndarray] = []
    alpha_by_s = np.empty((num_devices, frame_len))
    for s in range(num_devices):
        mat = internal_transition_matrix(s, tx_prob)
        phi = np.zeros((frame_len + 1, s + 2))
        phi[0, 0] = 1.0
        for nu in range(frame_len):
            phi[nu + 1] = phi[nu] @ mat
        alpha_by_s[s] = np.diff(phi[:, s + 1])
        phis.append(phi)
    frame_success = alpha_by_s.sum(axis=1)
    return phis, alpha_by_s, frame_success


def mixed_alpha(internal: InternalChainSolution) -> np.ndarray:
    """Per-slot delivery probabilities averaged over the competitor count."""
    return internal.chi @ internal.alpha_by_s


def _scalar_fixed_points(
    cfg: NetworkConfig,
    gamma: int,
    tx_prob: float,
    damping: float,
    tol: float,
    max_iter: int,
    starts: tuple[float, ...],
) -> tuple[list[float], np.ndarray]:
    """All fixed points of beta -> sum(alpha(beta)), plus the alpha table.

    Works entirely in closed form (no grid), so the result is independent
    of the truncation caps.
    """
    n, lam = cfg.num_devices, cfg.gen_prob
    _, alpha_by_s, frame_success = _internal_tables(n, tx_prob, cfg.frame_len)

    def beta_map(b: float) -> float:
        q_act = _active_fraction(b, lam, gamma)
        return float(np.dot(binom_pmf(n - 1, q_act), frame_success))

    candidates: list[float] = []
    diagnostics: list[tuple[float, float, float]] = []
    for b0 in starts:
        b = float(b0)
        residual = np.inf
        for _ in range(max_iter):
            f = beta_map(b)
            residual = abs(f - b)
            if residual < tol:
                break
            b = (1.0 - damping) * b + damping * f
        diagnostics.append((float(b0), b, residual))
        if residual < tol:
            candidates.append(b)
    if not candidates:
        raise FixedPointError(diagnostics)
    candidates.sort()
    merged = [candidates[0]]
    for b in candidates[1:]:
        if b - merged[-1] > 1e-6:
            merged.append(b)
    # polish to near machine precision; the coarse tol only gates discovery
    for i, b in enumerate(merged):
        for _ in range(200):
            f = beta_map(b)
            if abs(f - b) < 1e-14:
                break
            b = (1.0 - damping) * b + damping * f
        merged[i] = b
    return merged, alpha_by_s


def _assemble(
    spec: ExternalChainSpec, merged: list[float], alpha_by_s: np.ndarray
) -> ExternalChainSolution:
    selected = merged[-1]
    pi = steady_state(spec, selected)
    chi = mixture_weights(pi, spec.gamma, spec.cfg.num_devices)
    alpha = chi @ alpha_by_s
    row_tail, col_tail = boundary_tail_mass(pi)
    return ExternalChainSolution(
        pi=pi,
        beta=float(alpha.sum()),
        alpha=alpha,
        tail_mass=row_tail + col_tail,
        fixed_points_found=merged,
        chi=chi,
    )


def stability_margin(cfg: NetworkConfig, gamma: int, tx_prob: float, beta: float) -> float:
    """How far the map beta -> sum(alpha(beta)) clears the diagonal below
    its fixed point ``beta``, relative to ``beta``.

    The decoupled model is trustworthy only when the map rises cleanly to
    the fixed point.  Where it grazes the diagonal, the network has a
    metastable congested regime: simulations spend long stretches there and
    the stationary AAoI degrades far beyond the model value.  Negative
    margin means another crossing (true bistability).
    """
    n, lam = cfg.num_devices, cfg.gen_prob
    _, _, frame_success = _internal_tables(n, tx_prob, cfg.frame_len)
    grid = np.geomspace(1e-9, 0.7 * beta, 96)
    worst = np.inf
    for b in grid:
        q_act = _active_fraction(b, lam, gamma)
        f = float(np.dot(binom_pmf(n - 1, q_act), frame_success))
        worst = min(worst, f - b)
    return worst / beta


def solve_fixed_point(
    spec: ExternalChainSpec,
    *,
    damping: float = 0.5,
    tol: float = 1e-8,
    max_iter: int = 500,
    starts: tuple[float, ...] = _DEFAULT_STARTS,
) -> ExternalChainSolution:
    """Close the two layers: find ``beta`` with beta = sum(alpha(beta)).

    Damped iteration from several starts; converged values within 1e-6 of
    each other merge.  Multiple genuine fixed points can survive (bistable
    regimes); the returned solution uses the largest one, and the full list
    is reported so callers can cross-check against simulation.
    """
    merged, alpha_by_s = _scalar_fixed_points(
        spec.cfg, spec.gamma, spec.tx_prob, damping, tol, max_iter, starts
    )
    return _assemble(spec, merged, alpha_by_s)


# the entrance row decays like (1-beta)**k, so this many columns push the
# truncation loss below ~1e-6 of the total
def _cap_for_beta(beta: float, gamma: int) -> int:
    return gamma + 2 + math.ceil(14.0 / max(beta, 1e-9))


_MAX_GRID_CELLS = 1 << 24


def solve_auto(
    cfg: NetworkConfig,
    gamma: int,
    tx_prob: float,
    *,
    trunc_l: int = 256,
    trunc_k: int = 256,
    max_trunc_l: int = 4096,
    max_trunc_k: int = 1 << 20,
) -> tuple[ExternalChainSolution, ExternalChainSpec]:
    """Solve with truncation caps sized from the solution itself.

    The scalar fixed point does not depend on the caps, so it is found
    first; the grid is then built with enough columns for the (1-beta)-rate
    gain tail and enough rows for the (1-lam)-rate age tail, growing
    further only if the exact loss gate still trips.  Points whose tails
    cannot fit raise :class:`TruncationError`.
    """
    merged, alpha_by_s = _scalar_fixed_points(
        cfg, gamma, tx_prob, 0.5, 1e-8, 500, _DEFAULT_STARTS
    )
    beta = merged[-1]
    cap_k = max(trunc_k, gamma + 2, _cap_for_beta(beta, gamma))
    cap_l = max(trunc_l, 2 + math.ceil(14.0 / cfg.gen_prob))
    while True:
        if cap_k > max_trunc_k or cap_l > max_trunc_l:
            raise TruncationError(0.0, 1.0, (cap_l, cap_k))
        if (cap_l + 1) * (cap_k + 1) > _MAX_GRID_CELLS:
            raise TruncationError(0.0, 1.0, (cap_l, cap_k))
        spec = ExternalChainSpec(
            cfg=cfg, gamma=gamma, tx_prob=tx_prob, trunc_l=cap_l, trunc_k=cap_k
        )
        try:
            return _assemble(spec, merged, alpha_by_s), spec
        except TruncationError as err:
            if err.col_tail >= err.row_tail:
                cap_k *= 2
            else:
                cap_l *= 2


def frame_aaoi_terms(l: int, k: int, frame_len: int) -> tuple[np.ndarray, float]:
    """Mean AoI over one frame from state (l, k): per delivery slot, and
    without a delivery.

    A delivery in slot ``nu`` freezes the benefit ``k*frame_len`` after
    ``nu + 1`` slots of extra growth; the (frame_len - 1)/2 term is the
    within-frame average of the linear slope.
    """
    if l < 0 or k < 0:
        raise ValueError("state indices are non-negative")
    d = frame_len
    nu = np.arange(d)
    per_slot = l * d + k * (nu + 1.0) + (d - 1.0) / 2.0
    no_delivery = (l + k) * d + (d - 1.0) / 2.0
    return per_slot, float(no_delivery)


def network_aaoi(solution: ExternalChainSolution, spec: ExternalChainSpec) -> float:
    """Average AoI under the stationary outer chain.

    Eligible states deliver in slot ``nu`` w.p. ``alpha[nu]``; states below
    the threshold never deliver inside the frame.
    """
    if solution.tail_mass > TAIL_GATE:
        raise TruncationError(solution.tail_mass, 0.0, (spec.trunc_l, spec.trunc_k))
    d = spec.cfg.frame_len
    gamma = spec.gamma
    pi = solution.pi
    alpha = solution.alpha
    beta = float(alpha.sum())
    a1 = float(np.dot(alpha, np.arange(1, d + 1)))
    l = np.arange(pi.shape[0])
    k = np.arange(pi.shape[1])
    e_l = float(pi.sum(axis=1) @ l)
    col = pi.sum(axis=0) * k
    e_k_eligible = float(col[gamma:].sum())
    e_k_below = float(col[:gamma].sum())
    return (
        d * e_l
        + (d - 1.0) / 2.0
        + (a1 + (1.0 - beta) * d) * e_k_eligible
        + d * e_k_below
    )


def dump_solution(solution: ExternalChainSolution, directory) -> None:
    """Write pi and alpha as CSV files into ``directory``."""
    import os

    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "pi.csv"), "w") as out:
        out.write("l,k,mass\n")
        for l in range(solution.pi.shape[0]):
            for k in range(solution.pi.shape[1]):
                value = float(solution.pi[l, k])
                if value > 0.0:
                    out.write(f"{l},{k},{value!r}\n")
    with open(os.path.join(directory, "alpha.csv"), "w") as out:
        out.write("nu,alpha\n")
        for nu, value in enumerate(solution.alpha):
            out.write(f"{nu},{float(value)!r}\n")


def sanity_floor(cfg: NetworkConfig) -> float:
    """Re-export of the closed-form AAoI floor for solver-side checks."""
    return aaoi_lower_bound(cfg)
