"""Experiment harness: scenario sweeps, CSV emission, plot data.

A scenario is a JSON document:

    {
      "name": "smoke",
      "grid": {"N": [1], "lambda": [1.0], "D": [1, 2]},
      "schemes": ["basic", "lower-bound"],
      "sim": {"horizon_slots": 2000, "replications": 10,
              "warmup_slots": 200, "base_seed": 7},
      "search": {"p_tolerance": 1e-3, "budget": 4000,
                 "gamma_max": 512, "patience": 5},
      "params": {"basic": {"threshold": 1, "tx_prob": 1.0}},
      "estimator": {"l_max": 64, "k_max": 64},
      "aoi_grid": {"thresholds": [10, 20], "tx_probs": [0.5, 1.0]}
    }

Only ``name``, ``grid``, ``schemes``, and ``sim`` are required.  ``params``
pins a scheme's (threshold, tx_prob) and skips the offline search;
``aoi_grid`` overrides the pilot grid of the AoI-threshold baseline.
Thresholds in the output CSV are reported in slots regardless of scheme.

Every run writes one CSV of results (columns fixed, one row per applicable
grid point x scheme, rows in deterministic order) plus, on request,
tab-separated plot-data files, one per (D, N), with lambda on the x axis.
The same config and seed reproduce the same CSV bytes except for the
leading timestamp comment and the wall_ms column.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

from . import __version__ as _pkg_version
from .analytic import FixedPointError, TruncationError, network_aaoi, solve_auto
from .core import NetworkConfig, aaoi_lower_bound
from .estimator import EnhancedPolicy
from .policies import (
    AlohaGamma1Policy,
    AoiThresholdPolicy,
    BasicParams,
    BasicPolicy,
    IdealAdaptivePolicy,
    IdealSchedulingPolicy,
)
from .search import SearchSpec, make_objective, optimize_basic, optimize_p_given_gamma
from .simkit import SimConfig, run_episode, run_experiment

__all__ = [
    "CSV_COLUMNS",
    "SCHEMES",
    "ScenarioError",
    "Scenario",
    "BUILTIN_SCENARIOS",
    "load_scenario",
    "scenario_from_dict",
    "run_scenario",
    "write_rows_csv",
    "emit_plotdata",
]

CSV_COLUMNS = (
    "scenario",
    "scheme",
    "N",
    "lambda",
    "D",
    "gamma",
    "p",
    "aaoi_mean",
    "aaoi_ci95",
    "lower_bound",
    "episodes",
    "slots_per_episode",
    "seed",
    "wall_ms",
    "error",
)

SCHEMES = (
    "basic",
    "enhanced",
    "aloha-gamma1",
    "aoi-threshold",
    "ideal-adaptive",
    "ideal-scheduling",
    "lower-bound",
    "analytic-basic",
)


class ScenarioError(ValueError):
    """Config file failed to parse or validate."""


@dataclass(frozen=True)
class Scenario:
    name: str
    n_values: tuple[int, ...]
    lam_values: tuple[float, ...]
    d_values: tuple[int, ...]
    schemes: tuple[str, ...]
    horizon_slots: int
    replications: int = 10
    warmup_slots: Optional[int] = None
    base_seed: int = 0
    p_tolerance: float = 1e-3
    budget: int = 20000
    gamma_max: int = 512
    patience: int = 5
    pinned: tuple[tuple[str, int, float], ...] = ()
    est_l_max: int = 64
    est_k_max: int = 64
    aoi_thresholds: Optional[tuple[int, ...]] = None
    aoi_tx_probs: Optional[tuple[float, ...]] = None

    def __post_init__(self) -> None:
        if not self.name:
            raise ScenarioError("scenario name must be nonempty")
        if not self.schemes:
            raise ScenarioError("schemes must be nonempty")
        for scheme in self.schemes:
            if scheme not in SCHEMES:
                raise ScenarioError(f"unknown scheme {scheme!r}")
        if not (self.n_values and self.lam_values and self.d_values):
            raise ScenarioError("grid lists must be nonempty")
        for n in self.n_values:
            for lam in self.lam_values:
                for d in self.d_values:
                    try:
                        NetworkConfig(num_devices=n, gen_prob=lam, frame_len=d)
                    except ValueError as err:
                        raise ScenarioError(str(err)) from err
        if self.horizon_slots < 1 or self.replications < 1:
            raise ScenarioError("sim sizes must be positive")
        for scheme, threshold, p in self.pinned:
            if scheme not in SCHEMES:
                raise ScenarioError(f"params pins unknown scheme {scheme!r}")
            BasicParams(threshold=threshold, tx_prob=p)

    def pinned_params(self, scheme: str) -> Optional[BasicParams]:
        for name, threshold, p in self.pinned:
            if name == scheme:
                return BasicParams(threshold=threshold, tx_prob=p)
        return None

    def sim_config(self, cfg: NetworkConfig) -> SimConfig:
        return SimConfig(
            net=cfg,
            horizon_slots=self.horizon_slots,
            warmup_slots=self.warmup_slots,
            replications=self.replications,
            base_seed=self.base_seed,
        )

    def search_spec(self, cfg: NetworkConfig) -> SearchSpec:
        return SearchSpec(
            cfg=cfg,
            objective="analytic",
            gamma_max=self.gamma_max,
            patience=self.patience,
            p_tolerance=self.p_tolerance,
            budget=self.budget,
        )


def scenario_from_dict(doc: dict) -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("config root must be a JSON object")
    try:
        grid = doc["grid"]
        sim = doc.get("sim", {})
        search = doc.get("search", {})
        pinned = tuple(
            (scheme, int(entry["threshold"]), float(entry["tx_prob"]))
            for scheme, entry in sorted(doc.get("params", {}).items())
        )
        est = doc.get("estimator", {})
        aoi = doc.get("aoi_grid", {})
        return Scenario(
            name=str(doc["name"]),
            n_values=tuple(int(v) for v in grid["N"]),
            lam_values=tuple(float(v) for v in grid["lambda"]),
            d_values=tuple(int(v) for v in grid["D"]),
            schemes=tuple(str(s) for s in doc["schemes"]),
            horizon_slots=int(sim.get("horizon_slots", 100_000)),
            replications=int(sim.get("replications", 10)),
            warmup_slots=(
                int(sim["warmup_slots"]) if sim.get("warmup_slots") is not None else None
            ),
            base_seed=int(sim.get("base_seed", 0)),
            p_tolerance=float(search.get("p_tolerance", 1e-3)),
            budget=int(search.get("budget", 20000)),
            gamma_max=int(search.get("gamma_max", 512)),
            patience=int(search.get("patience", 5)),
            pinned=pinned,
            est_l_max=int(est.get("l_max", 64)),
            est_k_max=int(est.get("k_max", 64)),
            aoi_thresholds=(
                tuple(int(v) for v in aoi["thresholds"]) if "thresholds" in aoi else None
            ),
            aoi_tx_probs=(
                tuple(float(v) for v in aoi["tx_probs"]) if "tx_probs" in aoi else None
            ),
        )
    except ScenarioError:
        raise
    except (KeyError, TypeError, ValueError) as err:
        raise ScenarioError(f"bad scenario config: {err}") from err


def load_scenario(path: str) -> Scenario:
    try:
        with open(path) as handle:
            doc = json.load(handle)
    except OSError as err:
        raise ScenarioError(f"cannot read {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ScenarioError(f"cannot parse {path}: {err}") from err
    return scenario_from_dict(doc)


BUILTIN_SCENARIOS: dict[str, dict] = {
    "smoke": {
        "name": "smoke",
        "grid": {"N": [1], "lambda": [1.0], "D": [1, 2]},
        "schemes": ["basic", "lower-bound"],
        "sim": {"horizon_slots": 2000, "replications": 10, "warmup_slots": 200},
        "params": {"basic": {"threshold": 1, "tx_prob": 1.0}},
    },
    "fig4-desk": {
        "name": "fig4-desk",
        "grid": {"N": [10, 30, 100], "lambda": [0.1, 0.3, 0.5, 1.0], "D": [1, 10]},
        "schemes": [
            "basic",
            "analytic-basic",
            "aloha-gamma1",
            "aoi-threshold",
            "lower-bound",
        ],
        "sim": {"horizon_slots": 100_000, "replications": 10},
    },
    "fig5-desk": {
        "name": "fig5-desk",
        "grid": {"N": [5, 30], "lambda": [0.05, 0.1, 0.3, 1.0], "D": [1, 10]},
        "schemes": [
            "enhanced",
            "ideal-adaptive",
            "ideal-scheduling",
            "lower-bound",
        ],
        "sim": {"horizon_slots": 100_000, "replications": 10},
    },
    "fig6-desk": {
        "name": "fig6-desk",
        "grid": {"N": [10, 30], "lambda": [0.3, 1.0], "D": [1, 10]},
        "schemes": ["basic", "enhanced", "lower-bound"],
        "sim": {"horizon_slots": 100_000, "replications": 10},
    },
}


def _applicable(scheme: str, frame_len: int) -> bool:
    # the AoI-threshold baseline is defined for single-slot frames only
    return scheme != "aoi-threshold" or frame_len == 1


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return repr(value)
    return str(value)


def _aoi_pilot_grid(scenario: Scenario, cfg: NetworkConfig) -> tuple[list[int], list[float]]:
    if scenario.aoi_thresholds is not None:
        thresholds = sorted(set(scenario.aoi_thresholds))
    else:
        n, lam = cfg.num_devices, cfg.gen_prob
        raw = [c * n for c in (1.0, 1.5, 2.0, 2.5, 3.0)]
        raw += [c / lam for c in (0.8, 1.0, 1.2)]
        thresholds = sorted({max(1, round(v)) for v in raw})
    if scenario.aoi_tx_probs is not None:
        probs = sorted(set(scenario.aoi_tx_probs))
    else:
        probs = [0.2, 0.4, 0.6, 0.8, 1.0]
    return thresholds, probs


def _aoi_threshold_params(scenario: Scenario, cfg: NetworkConfig) -> BasicParams:
    """Pilot-grid tuning for the AoI-threshold baseline (no model exists)."""
    pinned = scenario.pinned_params("aoi-threshold")
    if pinned is not None:
        return pinned
    thresholds, probs = _aoi_pilot_grid(scenario, cfg)
    pilot = SimConfig(
        net=cfg,
        horizon_slots=max(20_000, 200 * cfg.num_devices),
        warmup_slots=None,
        replications=2,
        base_seed=scenario.base_seed,
    )
    best: Optional[BasicParams] = None
    best_val = math.inf
    for threshold in thresholds:
        for p in probs:
            params = BasicParams(threshold=threshold, tx_prob=p)
            result = run_experiment(
                pilot, lambda: AoiThresholdPolicy(params.threshold, params.tx_prob)
            )
            if result.network_aaoi_mean < best_val:
                best_val = result.network_aaoi_mean
                best = params
    assert best is not None
    return best


def _basic_search_params(
    scenario: Scenario, cfg: NetworkConfig, scheme: str
) -> tuple[BasicParams, float]:
    """(params, analytic AAoI) for the fixed-parameter schemes."""
    pinned = scenario.pinned_params(scheme)
    spec = scenario.search_spec(cfg)
    if scheme == "aloha-gamma1":
        if pinned is not None:
            params = BasicParams(threshold=cfg.frame_len, tx_prob=pinned.tx_prob)
        else:
            p_star, _, _ = optimize_p_given_gamma(
                make_objective(spec), 1, p_tolerance=spec.p_tolerance
            )
            params = BasicParams(threshold=cfg.frame_len, tx_prob=p_star)
    elif pinned is not None:
        params = pinned
    else:
        params = optimize_basic(spec).params
    gamma = -(-params.threshold // cfg.frame_len)
    try:
        solution, chain_spec = solve_auto(cfg, gamma, params.tx_prob)
        analytic = network_aaoi(solution, chain_spec)
    except (TruncationError, FixedPointError):
        analytic = math.nan
    return params, analytic


def compute_row(scenario: Scenario, point: tuple[int, float, int], scheme: str) -> dict:
    """One CSV row: resolve parameters, run the model and/or simulation."""
    n, lam, d = point
    cfg = NetworkConfig(num_devices=n, gen_prob=lam, frame_len=d)
    row = {
        "scenario": scenario.name,
        "scheme": scheme,
        "N": n,
        "lambda": lam,
        "D": d,
        "gamma": None,
        "p": None,
        "aaoi_mean": None,
        "aaoi_ci95": None,
        "lower_bound": aaoi_lower_bound(cfg),
        "episodes": 0,
        "slots_per_episode": 0,
        "seed": scenario.base_seed,
        "wall_ms": 0,
        "error": "",
    }
    started = time.perf_counter()
    try:
        if scheme == "lower-bound":
            row["aaoi_mean"] = aaoi_lower_bound(cfg)
            row["aaoi_ci95"] = 0.0
        elif scheme == "analytic-basic":
            params, analytic = _basic_search_params(scenario, cfg, "basic")
            row["gamma"] = params.threshold
            row["p"] = params.tx_prob
            row["aaoi_mean"] = analytic
            row["aaoi_ci95"] = 0.0
            if math.isnan(analytic):
                raise TruncationError(1.0, 0.0, (0, 0))
        else:
            sim_cfg = scenario.sim_config(cfg)
            if scheme in ("basic", "aloha-gamma1"):
                params, _ = _basic_search_params(scenario, cfg, scheme)
                row["gamma"] = params.threshold
                row["p"] = params.tx_prob
                if scheme == "basic":
                    factory = lambda: BasicPolicy(params)  # noqa: E731
                else:
                    factory = lambda: AlohaGamma1Policy(params.tx_prob)  # noqa: E731
            elif scheme == "aoi-threshold":
                params = _aoi_threshold_params(scenario, cfg)
                row["gamma"] = params.threshold
                row["p"] = params.tx_prob
                factory = lambda: AoiThresholdPolicy(  # noqa: E731
                params.threshold, params.tx_prob
            )
            elif scheme == "enhanced":
                factory = lambda: EnhancedPolicy(  # noqa: E731
                    l_max=scenario.est_l_max, k_max=scenario.est_k_max
                )
            elif scheme == "ideal-adaptive":
                factory = IdealAdaptivePolicy
            elif scheme == "ideal-scheduling":
                factory = IdealSchedulingPolicy
            else:
                raise ScenarioError(f"unknown scheme {scheme!r}")
            result = run_experiment(sim_cfg, factory)
            row["aaoi_mean"] = result.network_aaoi_mean
            row["aaoi_ci95"] = result.network_aaoi_ci95_halfwidth
            row["episodes"] = sim_cfg.replications
            row["slots_per_episode"] = sim_cfg.horizon_slots
    except Exception as err:  # noqa: BLE001 - errors land in the CSV
        row["error"] = f"{type(err).__name__}: {err}"
        row["aaoi_mean"] = None
        row["aaoi_ci95"] = None
    row["wall_ms"] = round((time.perf_counter() - started) * 1000.0)
    return row


def _row_task(args: tuple[Scenario, tuple[int, float, int], str]) -> dict:
    return compute_row(*args)


def scenario_tasks(scenario: Scenario) -> list[tuple[Scenario, tuple[int, float, int], str]]:
    tasks = []
    for d in scenario.d_values:
        for n in scenario.n_values:
            for lam in scenario.lam_values:
                for scheme in scenario.schemes:
                    if _applicable(scheme, d):
                        tasks.append((scenario, (n, lam, d), scheme))
    return tasks


def run_scenario(
    scenario: Scenario,
    out_dir: str,
    *,
    seed: Optional[int] = None,
    threads: int = 1,
    validate_sim: bool = False,
) -> tuple[list[dict], str]:
    """Run every applicable (point, scheme) pair; returns (rows, csv_path)."""
    if seed is not None:
        scenario = replace(scenario, base_seed=seed)
    tasks = scenario_tasks(scenario)
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_row_task, tasks, chunksize=1))
    else:
        rows = [_row_task(task) for task in tasks]
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"{scenario.name}.csv")
    write_rows_csv(rows, csv_path)
    if validate_sim:
        for line in validation_report(scenario, rows):
            print(line)
    return rows, csv_path


def write_rows_csv(rows: list[dict], path: str) -> None:
    stamp = time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime())
    with open(path, "w", newline="") as handle:
        handle.write(f"# generated {stamp}Z agaloha {_pkg_version}\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row[col]) for col in CSV_COLUMNS])


def validation_report(scenario: Scenario, rows: list[dict]) -> list[str]:
    """Tagged-device cross-check: per-frame delivery rate vs the model."""
    lines = []
    for row in rows:
        if row["scheme"] not in ("basic", "aloha-gamma1") or row["error"]:
            continue
        cfg = NetworkConfig(
            num_devices=row["N"], gen_prob=row["lambda"], frame_len=row["D"]
        )
        params = BasicParams(threshold=row["gamma"], tx_prob=row["p"])
        gamma = -(-params.threshold // cfg.frame_len)
        try:
            solution, _ = solve_auto(cfg, gamma, params.tx_prob)
        except (TruncationError, FixedPointError) as err:
            lines.append(f"validate {row['scheme']} N={cfg.num_devices}: model failed: {err}")
            continue
        sim_cfg = scenario.sim_config(cfg)
        episode = run_episode(sim_cfg, BasicPolicy(params), 0, track_tagged_frames=True)
        frames = episode.diagnostics.get("tagged_active_frames", 0)
        successes = episode.diagnostics.get("tagged_frame_successes", 0)
        if frames == 0:
            continue
        beta_hat = successes / frames
        sigma = math.sqrt(max(solution.beta * (1.0 - solution.beta), 1e-12) / frames)
        z = (beta_hat - solution.beta) / sigma if sigma > 0 else 0.0
        lines.append(
            f"validate {row['scheme']} N={cfg.num_devices} lambda={cfg.gen_prob} "
            f"D={cfg.frame_len}: beta_sim={beta_hat:.5f} beta_model={solution.beta:.5f} "
            f"z={z:+.2f}"
        )
    return lines


def emit_plotdata(rows: list[dict], out_dir: str) -> list[str]:
    """One TSV per (D, N): lambda column, then mean/ci pairs per scheme."""
    os.makedirs(out_dir, exist_ok=True)
    groups: dict[tuple[int, int], list[dict]] = {}
    for row in rows:
        if row["error"]:
            continue
        groups.setdefault((row["D"], row["N"]), []).append(row)
    paths = []
    for (d, n), group in sorted(groups.items()):
        schemes = sorted({row["scheme"] for row in group})
        lams = sorted({row["lambda"] for row in group})
        cells: dict[tuple[float, str], dict] = {
            (row["lambda"], row["scheme"]): row for row in group
        }
        buf = io.StringIO()
        header = ["lambda"]
        for scheme in schemes:
            header += [f"{scheme}_mean", f"{scheme}_ci"]
        buf.write("\t".join(header) + "\n")
        for lam in lams:
            parts = [_fmt(lam)]
            for scheme in schemes:
                row = cells.get((lam, scheme))
                if row is None:
                    parts += ["", ""]
                else:
                    parts += [_fmt(row["aaoi_mean"]), _fmt(row["aaoi_ci95"])]
            buf.write("\t".join(parts) + "\n")
        path = os.path.join(out_dir, f"plot_D{d}_N{n}.tsv")
        with open(path, "w", newline="") as handle:
            handle.write(buf.getvalue())
        paths.append(path)
    return paths
