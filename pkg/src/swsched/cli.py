"""Driver: compile workloads to C source trees, simulate plans, explain the
scheduling decisions.

Exit codes: 0 ok, 1 usage or parse error, 2 infeasible plan or machine fault,
3 verification failure.  SWSCHED_LOG controls log verbosity (debug/info/...).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .blob import BlobError, read_blob
from .codegen import emit_program, write_tree
from .dma import describe_descriptors
from .graph import GraphError
from .ir import ELEM_KINDS, SchedError
from .machine import MachineConfig
from .planner import InfeasiblePlanError
from .serialize import plan_from_json, plan_to_json
from .sim import SimError, run_reference, simulate
from .workload import WorkloadError, graph_from_workload, resolve_workload

log = logging.getLogger("swsched.cli")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFEASIBLE = 2
EXIT_VERIFY = 3


def _setup_logging() -> None:
    level = os.environ.get("SWSCHED_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(name)s: %(message)s")


def _machine_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--ldm-bytes", type=int, help="scratchpad capacity per PE")
    p.add_argument("--num-pes", type=int, help="compute elements per core group")
    p.add_argument("--init-chunk", type=int, help="initial buffer chunk (elements)")


def _apply_machine(machine: MachineConfig, args) -> MachineConfig:
    kw = {}
    if args.ldm_bytes:
        kw["ldm_bytes"] = args.ldm_bytes
    if args.num_pes:
        kw["num_pes"] = args.num_pes
    if args.init_chunk:
        kw["init_chunk"] = args.init_chunk
    if not kw:
        return machine
    return MachineConfig(
        ldm_bytes=kw.get("ldm_bytes", machine.ldm_bytes),
        num_pes=kw.get("num_pes", machine.num_pes),
        init_chunk=kw.get("init_chunk", machine.init_chunk),
        reserve_bytes=machine.reserve_bytes)


def _load_spec(path: str):
    """A workload document, or a plan document produced by `compile`."""
    if os.path.exists(path):
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        if isinstance(doc, dict) and doc.get("format", "").startswith("swsched-plan"):
            return "plan", doc
        from .workload import validate_workload
        return "workload", validate_workload(doc)
    return "workload", resolve_workload(path)


def _build(doc, args):
    from .graph import lower_graph
    graph, machine, sched = graph_from_workload(doc)
    machine = _apply_machine(machine, args)
    plan = lower_graph(graph, machine, sched)
    plan.meta["workload"] = doc
    return graph, machine, plan


def _plan_graph(plan):
    wdoc = plan.meta.get("workload")
    if wdoc is None:
        return None
    graph, _, _ = graph_from_workload(wdoc)
    return graph


def _gather_arrays(graph, plan, args):
    from .graph import init_arrays
    seed = args.seed
    zero = bool(getattr(args, "zero_init", False))
    arrays = init_arrays(graph, seed=seed if seed is not None else 0, zero=zero)
    if getattr(args, "input", None):
        dtype = ELEM_KINDS[plan.elem_name].np_name
        for name, payload in read_blob(args.input).items():
            arrays[name] = np.frombuffer(payload, dtype=dtype)
    return arrays


# --------------------------------------------------------------------------- #
# commands
# --------------------------------------------------------------------------- #

def cmd_compile(args) -> int:
    kind, doc = _load_spec(args.workload)
    if kind == "plan":
        print("compile expects a workload, not a plan document", file=sys.stderr)
        return EXIT_USAGE
    graph, machine, plan = _build(doc, args)
    tree = emit_program(plan)
    names = write_tree(tree, args.out_dir)
    with open(os.path.join(args.out_dir, "plan.json"), "w", encoding="utf-8") as fh:
        json.dump(plan_to_json(plan), fh, indent=1)
    total = plan.total_static()
    print(f"wrote {len(names)} source files + plan.json to {args.out_dir}")
    print(f"layers: {len(plan.layers)}  arena: {plan.memory.arena_bytes} bytes  "
          f"predicted DMA: {total['dma_get_count']} gets, "
          f"{total['dma_put_count']} puts, {total['dma_bytes']} bytes")
    if args.trace:
        print(json.dumps(_trace_doc(plan), indent=1))
    if args.dump_dma:
        print(json.dumps(_dma_doc(plan), indent=1))
    return EXIT_OK


def cmd_simulate(args) -> int:
    kind, doc = _load_spec(args.workload)
    if kind == "plan":
        plan = plan_from_json(doc)
        graph = _plan_graph(plan)
    else:
        graph, _, plan = _build(doc, args)
    if graph is None:
        print("plan document carries no workload; cannot build inputs",
              file=sys.stderr)
        return EXIT_USAGE
    arrays = _gather_arrays(graph, plan, args)
    outputs, stats = simulate(plan, arrays)
    for name, arr in outputs.items():
        head = ", ".join(f"{v:.6g}" for v in np.asarray(arr).reshape(-1)[:4])
        print(f"{name}: {arr.size} elements [{head}, ...]")
    print(f"dma: {stats.total['dma_get_count']} gets, "
          f"{stats.total['dma_put_count']} puts, {stats.total['dma_bytes']} bytes; "
          f"scalar ops: {stats.total['scalar_mem_ops']}; "
          f"ldm high water: {max(stats.ldm_high_water)} bytes")
    if args.stats:
        with open(args.stats, "w", encoding="utf-8") as fh:
            json.dump(stats.to_json(), fh, indent=1)
        print(f"stats written to {args.stats}")
    if args.out:
        from .blob import write_blob
        write_blob(args.out, {n: np.asarray(a) for n, a in outputs.items()})
        print(f"outputs written to {args.out}")
    if args.check:
        ref = run_reference(graph, arrays)
        worst = 0.0
        for name, got in outputs.items():
            want = np.asarray(ref[name], np.float64).reshape(-1)
            denom = max(float(np.abs(want).max()), 1e-30)
            worst = max(worst, float(np.abs(got - want).max() / denom))
        print(f"max relative error vs reference: {worst:.3e} (tol {args.tol:g})")
        if worst > args.tol:
            print("verification FAILED", file=sys.stderr)
            return EXIT_VERIFY
    return EXIT_OK


def _trace_doc(plan) -> list:
    out = []
    for layer in plan.layers:
        for k in layer.kernels:
            out.append({"kernel": k.name, "trace": k.plan_trace,
                        "buffer": k.buffer, "footprint_bytes": k.footprint_bytes})
    return out


def _order_doc(plan) -> list:
    out = []
    for layer in plan.layers:
        for k in layer.kernels:
            if k.order_info:
                out.append({"kernel": k.name, **k.order_info})
    return out


def _dma_doc(plan) -> list:
    out = []
    for layer in plan.layers:
        for k in layer.kernels:
            out.append({"kernel": k.name, "descriptors": describe_descriptors(k),
                        "static": k.static})
    return out


def cmd_explain(args) -> int:
    kind, doc = _load_spec(args.workload)
    if kind == "plan":
        plan = plan_from_json(doc)
    else:
        _, _, plan = _build(doc, args)
    wants_json = args.trace or args.explain_order or args.dump_dma
    for layer in plan.layers:
        for k in layer.kernels:
            print(f"== kernel {k.name}")
            part = k.partition
            if part.var_name:
                print(f"   partition: {part.var_name} into {part.num_pes} chunks "
                      f"of {part.chunk}")
            else:
                print("   partition: none (single PE)")
            print(f"   buffer: {k.buffer}  footprint {k.footprint_bytes}B")
            for ev in k.plan_trace:
                print(f"   [{ev['step']:>6}] {ev['var'] or '-':>8} -> "
                      f"{ev['usage_bytes']}B  {ev['decision']}")
            if k.order_info:
                print(f"   order: {k.order_info['order']} "
                      f"(total DMA execs {k.order_info['total_dma_execs']})")
                for step in k.order_info.get("steps", []):
                    print(f"     after {step['prefix']}: {step['candidates']} "
                          f"-> {step['chosen']}")
            for op in k.dmas:
                extra = " accumulate" if op.accumulate else ""
                print(f"   dma {op.kind:>4} {op.tensor} at level {op.level}{extra}")
    if wants_json:
        doc_out = {}
        if args.trace:
            doc_out["trace"] = _trace_doc(plan)
        if args.explain_order:
            doc_out["order"] = _order_doc(plan)
        if args.dump_dma:
            doc_out["dma"] = _dma_doc(plan)
        print(json.dumps(doc_out, indent=1))
    return EXIT_OK


# --------------------------------------------------------------------------- #
# entry point
# --------------------------------------------------------------------------- #

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swsched",
        description="Ahead-of-time tensor compiler and core-group simulator")
    sub = parser.add_subparsers(dest="cmd", required=True)

    pc = sub.add_parser("compile", help="plan a workload and emit the C tree")
    pc.add_argument("workload", help="workload JSON path or bundled name")
    pc.add_argument("out_dir", help="output directory for sources + plan.json")
    _machine_flags(pc)
    pc.add_argument("--trace", action="store_true", help="print the planning trace")
    pc.add_argument("--dump-dma", action="store_true", help="print DMA descriptors")
    pc.set_defaults(fn=cmd_compile)

    ps = sub.add_parser("simulate", help="run a workload or plan on the simulator")
    ps.add_argument("workload", help="workload/plan JSON path or bundled name")
    _machine_flags(ps)
    ps.add_argument("--input", help="CGW1 blob with inputs and/or parameters")
    ps.add_argument("--stats", metavar="PATH", help="write stats JSON here")
    ps.add_argument("--out", metavar="PATH", help="write outputs as a CGW1 blob")
    ps.add_argument("--check", action="store_true",
                    help="also run the reference oracle and compare")
    ps.add_argument("--tol", type=float, default=1e-4,
                    help="relative tolerance for --check (default 1e-4)")
    ps.add_argument("--seed", type=int, default=None,
                    help="seed for generated parameters/inputs (default 0)")
    ps.add_argument("--zero-init", action="store_true",
                    help="zero parameters/inputs instead of random values")
    ps.set_defaults(fn=cmd_simulate)

    pe = sub.add_parser("explain", help="show planning, ordering and DMA traces")
    pe.add_argument("workload", help="workload/plan JSON path or bundled name")
    _machine_flags(pe)
    pe.add_argument("--trace", action="store_true", help="JSON planning trace")
    pe.add_argument("--explain-order", action="store_true",
                    help="JSON ordering costs (all permutations when <=6 loops)")
    pe.add_argument("--dump-dma", action="store_true", help="JSON DMA descriptors")
    pe.set_defaults(fn=cmd_explain)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.fn(args)
    except json.JSONDecodeError as exc:
        print(f"{args.workload}: JSON parse error at line {exc.lineno}, "
              f"column {exc.colno}: {exc.msg}", file=sys.stderr)
        return EXIT_USAGE
    except (WorkloadError, BlobError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InfeasiblePlanError, SimError, SchedError, GraphError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
