"""Time the Bellman stage backends on a scenario-sized receding-horizon solve and a long-term solve.

Usage: python3 benchmarks/bench_dp.py [--repeat N] [--horizon K]
"""

from __future__ import annotations

import argparse
import time
from pathlib import Path

import numpy as np

from ecodrive.harness.config import load_scenario
from ecodrive.harness.simulate import local_soc_axis, long_term_grid
from ecodrive.ocp import _kernel_py, kernel
from ecodrive.ocp.dp import GapContext, HorizonProblem, solve_long_term, solve_receding_horizon
from ecodrive.ocp.grid import Grid3, uniform_axis
from ecodrive.powertrain import VehicleState, load_plant
from ecodrive.predictor.forecast import constant_velocity_forecast
from ecodrive.route_world import load_route

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "scenario_1.json"


def _best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--horizon", type=int, default=20)
    args = parser.parse_args(argv)

    cfg = load_scenario(CONFIG)
    route, plant, solver = load_route(cfg.route), load_plant(cfg.plant), cfg.solver
    lt_grid = long_term_grid(solver, plant)
    controls = solver.controls
    start = 100   # 1 km in, ahead of the second signal
    state = VehicleState(10.0, cfg.initial_soc, 300.0)
    fc = constant_velocity_forecast(9.0, 20.0, 1.0, state.t)
    gap = GapContext(fc, 40.0, state.t, cfg.gap, 0.0, fc.start_time + fc.horizon)
    prob = HorizonProblem(route, plant, start, args.horizon, state, solver.gamma, gap)
    grid = Grid3(lt_grid.v, local_soc_axis(state.soc, solver, plant),
                 state.t + uniform_axis(0.0, solver.t_span, solver.t_step))

    backends = [("python", _kernel_py)]
    if kernel.BACKEND == "cython":
        from ecodrive.ocp import _dpkernel
        backends.insert(0, ("cython", _dpkernel))
    default = kernel._impl
    print(f"receding horizon: {args.horizon} stages, grid {grid.shape}, "
          f"{len(controls.candidates(plant, 10.0, route.distance_step)[0])} candidates per velocity")
    print(f"long term: {route.n_steps} stages, grid {lt_grid.shape[:2]}")
    results = {}
    try:
        for name, impl in backends:
            kernel._impl = impl
            solve_lt = lambda: solve_long_term(route, plant, lt_grid, solver.gamma, cfg.target_soc,
                                               controls, solver.soc_penalty)
            t_lt, lt_table = _best_of(solve_lt, args.repeat)
            t_rh, sol = _best_of(lambda: solve_receding_horizon(prob, lt_table, grid, controls, solver.t_step,
                                                                with_prediction=False), args.repeat)
            results[name] = (t_rh, t_lt, sol.tables[0])
            print(f"{name:>7}: receding horizon {t_rh:7.3f} s   long term {t_lt:7.3f} s")
    finally:
        kernel._impl = default
    if len(results) == 2:
        (a_rh, a_lt, a_tab), (b_rh, b_lt, b_tab) = results["cython"], results["python"]
        print(f"speed-up: receding horizon x{b_rh / a_rh:.1f}, long term x{b_lt / a_lt:.1f}; "
              f"tables bit-identical: {np.array_equal(a_tab, b_tab, equal_nan=True)}")


if __name__ == "__main__":
    main()
