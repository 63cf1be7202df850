"""Compiled inner loops for the slot-level simulator.

The kernel consumes pre-generated uniforms: ``pol_u[i, n]`` is the decision
draw for device ``n`` in the chunk's i-th slot, ``arr_u[f, n]`` the arrival
draw for the f-th frame start inside the chunk.  Keeping the randomness
positional makes trajectories reproducible and lets different policies share
the same arrival sample paths.
"""

from __future__ import annotations

import numpy as np
from numba import njit

MODE_GAIN_THRESHOLD = 0
MODE_AOI_THRESHOLD = 1
MODE_IDEAL_ADAPTIVE = 2
MODE_IDEAL_SCHEDULING = 3


@njit(cache=True)
def sim_chunk(
    w,
    h,
    mode,
    threshold,
    tx_prob,
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
    track_frames,
):
    n_slots = pol_u.shape[0]
    n_dev = w.shape[0]
    first_frame = t0 // frame_len + 1

    for i in range(n_slots):
        t = t0 + i
        measured = t >= warmup
        if measured:
            for n in range(n_dev):
                h_sums[n] += h[n]

        if track_frames and t % frame_len == 0:
            if h[0] - w[0] >= threshold:
                frame_stats[0] += 1
                frame_stats[2] = 1  # tagged device counts this frame
            else:
                frame_stats[2] = 0

        tx_count = 0
        winner = -1
        if mode == MODE_IDEAL_SCHEDULING:
            best_gain = 0
            for n in range(n_dev):
                g = h[n] - w[n]
                if g >= 1 and g > best_gain:
                    best_gain = g
                    winner = n
            if winner >= 0:
                tx_count = 1
        else:
            p = tx_prob
            if mode == MODE_IDEAL_ADAPTIVE:
                cnt = 0
                for n in range(n_dev):
                    if h[n] - w[n] >= 1:
                        cnt += 1
                p = 1.0 / cnt if cnt >= 1 else 1.0
            for n in range(n_dev):
                g = h[n] - w[n]
                if mode == MODE_AOI_THRESHOLD:
                    active = h[n] >= threshold and g >= 1
                elif mode == MODE_IDEAL_ADAPTIVE:
                    active = g >= 1
                else:
                    active = g >= threshold
                if active and pol_u[i, n] < p:
                    tx_count += 1
                    winner = n

        if tx_count == 0:
            status = 0
        elif tx_count == 1:
            status = 1
        else:
            status = 2
        if measured:
            tallies[status] += 1
        if track_frames and status == 1 and winner == 0 and frame_stats[2] == 1:
            frame_stats[1] += 1

        for n in range(n_dev):
            if status == 1 and n == winner:
                h[n] = w[n] + 1
            else:
                h[n] += 1
        tp1 = t + 1
        if tp1 % frame_len == 0:
            if use_arrivals:
                f = tp1 // frame_len - first_frame
                for n in range(n_dev):
                    if arr_u[f, n] < lam:
                        w[n] = 0
                    else:
                        w[n] += 1
            else:
                for n in range(n_dev):
                    w[n] = 0
        else:
            for n in range(n_dev):
                w[n] += 1


@njit(cache=True)
def entrance_row(beta, lam, gamma, k_cap):
    """Stationary frame-start row pi[0, k] of the tagged-device chain, up to scale.

    The chain is skip-free downward in the local-age index, so with the
    active-row mass normalised to one the whole row follows from a forward
    recursion with running geometric sums.
    """
    x = np.zeros(k_cap + 1)
    q = (1.0 - lam) * (1.0 - beta)
    one_l = 1.0 - lam
    one_b = 1.0 - beta
    s_low = 0.0  # sum over inactive columns 1..gamma-1, decayed by (1-lam)
    s_act = 0.0  # sum over active columns >= gamma, decayed by q
    qk = 1.0  # q ** (k-1)
    lk = 1.0  # (1-lam) ** (k-1)
    bk = 1.0  # (1-beta) ** (k-1)
    for k in range(1, k_cap + 1):
        x[k] = lam * (beta * qk + lk * (1.0 - bk) + s_low + (1.0 - beta) * s_act)
        s_low = one_l * s_low
        s_act = q * s_act
        if k < gamma:
            s_low += x[k]
        else:
            s_act += x[k]
        qk *= q
        lk *= one_l
        bk *= one_b
    return x
