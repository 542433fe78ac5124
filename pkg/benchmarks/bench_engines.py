#!/usr/bin/env python3
"""Benchmark the compiled engine kernels against the pure-Python fallback.

Runs the two hot kernels (characteristic flow, linearized frame propagation)
over a bundle of round-sphere rays with both backends and reports wall time,
steps, and the worst endpoint disagreement.

Usage: python benchmarks/bench_engines.py [--rays 60] [--tol 1e-10]
"""

import argparse
import math
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from loci_lab import conformal  # noqa: E402
from loci_lab._engine import backends  # noqa: E402


def ray_bundle(params, n, count):
    rng = np.random.default_rng(7)
    starts = []
    for _ in range(count):
        z = np.zeros(n)
        z[1:] = rng.uniform(-1.5, 1.5, n - 1)
        p = np.zeros(n)
        p[0] = 2.0 / (1.0 + float(z @ z))
        starts.append(np.concatenate([z, p, [0.0]]))
    return starts


def run_flow(engine, params, starts, t_end, tol):
    out = []
    steps = 0
    t0 = time.perf_counter()
    for y0 in starts:
        ts, ys, coef, status, nfev = engine.integrate_flow(
            params, 0.5, y0, 0.0, t_end, tol, tol * 1e-3)
        steps += len(ts) - 1
        out.append((ts, ys, coef, ys[-1]))
    return time.perf_counter() - t0, steps, out


def run_frames(engine, params, n, flows, t_end, tol):
    Y0 = np.vstack([np.zeros((n, n)), np.eye(n)]).ravel()
    t0 = time.perf_counter()
    steps = 0
    ends = []
    for ts, ys, coef, _ in flows:
        r = engine.integrate_frame(params, ts, ys, coef, 1.0, Y0,
                                   0.0, min(t_end, ts[-1]), tol, tol * 1e-3)
        steps += len(r[0]) - 1
        ends.append(r[1][-1])
    return time.perf_counter() - t0, steps, ends


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--rays", type=int, default=60)
    ap.add_argument("--dim", type=int, default=2)
    ap.add_argument("--t-end", type=float, default=3.0)
    ap.add_argument("--tol", type=float, default=1e-10)
    args = ap.parse_args()

    engines = backends()
    if "compiled" not in engines:
        print("compiled engine not built; benchmarking python only")
    params = conformal.pack_params(conformal.KIND_SPHERE, args.dim)
    starts = ray_bundle(params, args.dim, args.rays)

    results = {}
    for name, eng in engines.items():
        tf, sf, flows = run_flow(eng, params, starts, args.t_end, args.tol)
        tr, sr, ends = run_frames(eng, params, args.dim, flows,
                                  args.t_end - 0.2, args.tol)
        results[name] = {"flow_s": tf, "flow_steps": sf, "frame_s": tr,
                         "frame_steps": sr,
                         "flow_ends": np.array([f[3] for f in flows]),
                         "frame_ends": np.array(ends)}
        print(f"{name:>9}: flow {tf:8.3f}s ({sf} steps)   "
              f"frames {tr:8.3f}s ({sr} steps)")

    if len(results) == 2:
        a, b = results["compiled"], results["python"]
        print(f"{'speedup':>9}: flow {b['flow_s'] / a['flow_s']:8.1f}x"
              f"            frames {b['frame_s'] / a['frame_s']:8.1f}x")
        d_flow = float(np.max(np.abs(a["flow_ends"] - b["flow_ends"])))
        d_frame = float(np.max(np.abs(a["frame_ends"] - b["frame_ends"])))
        print(f"{'parity':>9}: flow endpoints {d_flow:.2e}   "
              f"frame endpoints {d_frame:.2e}")


if __name__ == "__main__":
    main()
