#!/usr/bin/env python3
"""Compare the naive scalar nest interpreter against the vectorized simulator.

The interpreter is the semantic oracle (one Python-level iteration per compute
point); the simulator batches each scratchpad tile into numpy array ops.  This
script shows why the vectorized path is the one the pipeline runs on real
workloads, and double-checks that both agree.

Usage: python scripts/bench_evaluator.py [edge]
"""

import sys
import time

import numpy as np

from swsched.graph import LayerGraph, LayerSpec, lower_graph
from swsched.interp import interpret_nest
from swsched.machine import MachineConfig
from swsched.sim import run_reference, simulate

from pathlib import Path
sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
from helpers import build_matmul, random_arrays  # noqa: E402


def main() -> int:
    edge = int(sys.argv[1]) if len(sys.argv) > 1 else 48

    # scalar oracle on the raw nest
    scope, nest, _ = build_matmul(edge, edge, edge)
    arrays = random_arrays(scope, np.random.default_rng(0), dtype="float32")
    t0 = time.perf_counter()
    interpret_nest(nest, arrays)
    t_scalar = time.perf_counter() - t0

    # scheduled pipeline + vectorized simulator on the same shapes
    g = LayerGraph(inputs=[("A", (edge, edge)), ("B", (edge, edge))],
                   layers=[LayerSpec("mm", "matmul", ["A", "B"])])
    plan = lower_graph(g, MachineConfig())
    sim_arrays = {"A": arrays["A"].reshape(edge, edge),
                  "B": arrays["B"].reshape(edge, edge)}
    t0 = time.perf_counter()
    outs, stats = simulate(plan, sim_arrays)
    t_vec = time.perf_counter() - t0

    ref = run_reference(g, sim_arrays)
    got = outs["mm.out"]
    err_vec = np.abs(got - ref["mm.out"].reshape(-1)).max()
    err_scalar = np.abs(arrays["C"].astype(np.float64)
                        - ref["mm.out"].reshape(-1)).max()

    macs = edge ** 3
    print(f"matmul {edge}^3 ({macs:,} multiply-accumulates)")
    print(f"  scalar interpreter : {t_scalar:8.3f}s  "
          f"({macs / max(t_scalar, 1e-9) / 1e6:8.2f} M mac/s)  "
          f"max err {err_scalar:.2e}")
    print(f"  vectorized machine : {t_vec:8.3f}s  "
          f"({macs / max(t_vec, 1e-9) / 1e6:8.2f} M mac/s)  "
          f"max err {err_vec:.2e}")
    print(f"  speedup            : {t_scalar / max(t_vec, 1e-9):8.1f}x")
    print(f"  simulated DMA      : {stats.total['dma_get_count']} gets, "
          f"{stats.total['dma_put_count']} puts, "
          f"{stats.total['dma_bytes']} bytes")
    return 0


if __name__ == "__main__":
    sys.exit(main())
