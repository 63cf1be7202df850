"""Offline tuning of the static threshold and transmission probability."""

import math
import warnings

import numpy as np
import pytest

import agaloha.search as search_mod
from agaloha.core import NetworkConfig
from agaloha.search import SearchSpec, make_objective, optimize_basic, optimize_p_given_gamma


def test_single_device_prefers_certain_transmission():
    spec = SearchSpec(cfg=NetworkConfig(1, 1.0, 1))
    evaluate = make_objective(spec)
    p_star, val, _ = optimize_p_given_gamma(evaluate, 1)
    assert p_star == 1.0
    assert val == pytest.approx(1.0, abs=1e-9)
    result = optimize_basic(spec)
    assert result.params.threshold == 1
    assert result.params.tx_prob == 1.0
    assert result.aaoi == pytest.approx(1.0, abs=1e-9)


def test_tuned_p_matches_grid_scan():
    spec = SearchSpec(cfg=NetworkConfig(100, 1.0, 1))
    evaluate = make_objective(spec)
    p_star, val, _ = optimize_p_given_gamma(evaluate, 1)
    grid = np.linspace(1e-3, 1.0, 200)
    values = [evaluate(1, float(p)) for p in grid]
    best = int(np.argmin(values))
    assert math.isfinite(val)
    assert abs(p_star - grid[best]) <= 2.0 * spec.p_tolerance


def test_tuned_point_is_locally_best():
    spec = SearchSpec(cfg=NetworkConfig(20, 0.5, 2))
    result = optimize_basic(spec)
    evaluate = make_objective(spec)
    gamma = result.params.threshold // 2
    tol = spec.p_tolerance
    for nudge in (-5.0 * tol, 5.0 * tol):
        p = result.params.tx_prob + nudge
        if 0.0 < p <= 1.0:
            assert result.aaoi <= evaluate(gamma, p) + 1e-12


def test_search_is_deterministic_and_self_consistent():
    spec = SearchSpec(cfg=NetworkConfig(5, 0.3, 2))
    first = optimize_basic(spec)
    second = optimize_basic(spec)
    assert first.params == second.params
    assert first.aaoi == second.aaoi
    assert first.evaluations == second.evaluations
    evaluate = make_objective(spec)
    gamma = first.params.threshold // spec.cfg.frame_len
    assert abs(evaluate(gamma, first.params.tx_prob) - first.aaoi) <= 1e-12


def test_thresholds_stay_on_frame_multiples():
    spec = SearchSpec(cfg=NetworkConfig(4, 0.5, 3))
    result = optimize_basic(spec)
    assert result.params.threshold % 3 == 0
    assert [gamma for gamma, _, _ in result.per_gamma] == list(
        range(1, len(result.per_gamma) + 1)
    )
    assert result.evaluations == len(result.trace)
    assert not result.budget_exhausted


def test_ties_break_toward_smaller_gamma_then_smaller_p(monkeypatch):
    seen = []

    def flat_objective(spec):
        def evaluate(gamma, p):
            seen.append((gamma, p))
            return 5.0

        return evaluate

    monkeypatch.setattr(search_mod, "make_objective", flat_objective)
    spec = SearchSpec(cfg=NetworkConfig(7, 0.5, 2), patience=5)
    result = optimize_basic(spec)
    assert result.params.threshold == 2  # gamma 1 kept through five stalled rounds
    assert result.params.tx_prob == min(p for gamma, p in seen if gamma == 1)
    assert len(result.per_gamma) == 1 + spec.patience
    assert result.aaoi == 5.0


def test_budget_exhaustion_warns_and_returns_best_so_far():
    spec = SearchSpec(cfg=NetworkConfig(3, 1.0, 1), budget=40)
    with pytest.warns(RuntimeWarning, match="budget"):
        result = optimize_basic(spec)
    assert result.budget_exhausted
    assert math.isfinite(result.aaoi)
    assert result.evaluations <= 40


def test_pattern_refinement_never_hurts_and_is_deterministic():
    cfg = NetworkConfig(5, 0.3, 2)
    plain = optimize_basic(SearchSpec(cfg=cfg))
    refined = optimize_basic(SearchSpec(cfg=cfg, hooke_jeeves=True))
    again = optimize_basic(SearchSpec(cfg=cfg, hooke_jeeves=True))
    assert refined.aaoi <= plain.aaoi + 1e-12
    assert refined.params == again.params
    assert refined.aaoi == again.aaoi


def test_spec_validation():
    with pytest.raises(ValueError):
        SearchSpec(cfg=NetworkConfig(2, 1.0, 1), objective="annealing")
    with pytest.raises(ValueError):
        SearchSpec(cfg=NetworkConfig(2, 1.0, 1), objective="simulation")
    with pytest.raises(ValueError):
        SearchSpec(cfg=NetworkConfig(2, 1.0, 1), gamma_min=0)
    with pytest.raises(ValueError):
        SearchSpec(cfg=NetworkConfig(2, 1.0, 1), p_tolerance=0.0)
    with pytest.raises(ValueError):
        SearchSpec(cfg=NetworkConfig(2, 1.0, 1), budget=4)


def test_simulation_objective_uses_common_random_numbers():
    from agaloha.simkit import SimConfig

    cfg = NetworkConfig(3, 1.0, 1)
    template = SimConfig(cfg, horizon_slots=4000, warmup_slots=400, replications=2)
    spec = SearchSpec(
        cfg=cfg, objective="simulation", sim_template=template, p_tolerance=5e-3
    )
    evaluate = make_objective(spec)
    assert evaluate(1, 0.4) == evaluate(1, 0.4)  # deterministic objective
    with warnings.catch_warnings():
        warnings.simplefilter("error")  # no budget warning expected
        p_star, val, _ = optimize_p_given_gamma(evaluate, 1, p_tolerance=5e-3)
    assert 0.0 < p_star <= 1.0
    assert val == evaluate(1, p_star)
