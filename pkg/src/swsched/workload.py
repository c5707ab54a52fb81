"""Workload JSON ingestion: strict validation against the published schema,
plus bundled example workloads.

Shapes in workload files are numpy-style (outermost dimension first).
"""

from __future__ import annotations

import json
from importlib import resources

from .graph import LAYER_KINDS, LayerGraph, LayerSpec
from .ir import ELEM_KINDS
from .machine import MachineConfig


class WorkloadError(ValueError):
    pass


_TOP_KEYS = {"name", "elem", "machine", "inputs", "layers", "schedule"}
_MACHINE_KEYS = {"ldm_bytes", "num_pes", "init_chunk", "reserve_bytes"}
_INPUT_KEYS = {"name", "shape"}
_LAYER_KEYS = {"name", "kind", "inputs", "attrs"}
_SCHEDULE_KEYS = {"buffer", "order", "no_buffer"}

_ATTR_KEYS = {
    "conv2d": ({"channels", "kernel"}, {"stride", "pad", "epilogue"}),
    "dense": ({"units"}, {"epilogue"}),
    "maxpool": ({"kernel"}, {"stride"}),
    "flatten": (set(), set()),
    "relu": (set(), set()),
    "add": (set(), set()),
    "mul": (set(), set()),
    "matmul": (set(), set()),
}

_EPILOGUES = {"none", "relu", "bias+relu"}


def _reject_unknown(obj: dict, allowed: set, where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise WorkloadError(f"{where}: unknown fields {sorted(unknown)}")


def _positive_int(value, where: str) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or value < 1:
        raise WorkloadError(f"{where}: expected a positive integer, got {value!r}")
    return value


def validate_workload(doc: dict) -> dict:
    """Validate a workload document; returns it unchanged.  Unknown fields are
    rejected everywhere."""
    if not isinstance(doc, dict):
        raise WorkloadError("workload must be a JSON object")
    _reject_unknown(doc, _TOP_KEYS, "workload")
    for key in ("inputs", "layers"):
        if key not in doc or not isinstance(doc[key], list):
            raise WorkloadError(f"workload: missing list field {key!r}")
    if "elem" in doc and doc["elem"] not in ELEM_KINDS:
        raise WorkloadError(f"workload: unknown elem {doc['elem']!r}")
    if "machine" in doc:
        if not isinstance(doc["machine"], dict):
            raise WorkloadError("machine: expected an object")
        _reject_unknown(doc["machine"], _MACHINE_KEYS, "machine")
        for k, v in doc["machine"].items():
            if k == "reserve_bytes":
                if not isinstance(v, int) or v < 0:
                    raise WorkloadError("machine.reserve_bytes: expected >= 0")
            else:
                _positive_int(v, f"machine.{k}")
    names = set()
    for inp in doc["inputs"]:
        if not isinstance(inp, dict):
            raise WorkloadError("inputs: expected objects")
        _reject_unknown(inp, _INPUT_KEYS, f"input {inp}")
        if "name" not in inp or "shape" not in inp:
            raise WorkloadError("inputs: need name and shape")
        if not isinstance(inp["shape"], list) or not inp["shape"]:
            raise WorkloadError(f"input {inp['name']}: shape must be a non-empty list")
        for e in inp["shape"]:
            _positive_int(e, f"input {inp['name']} shape")
        if inp["name"] in names:
            raise WorkloadError(f"duplicate name {inp['name']!r}")
        names.add(inp["name"])
    for layer in doc["layers"]:
        if not isinstance(layer, dict):
            raise WorkloadError("layers: expected objects")
        _reject_unknown(layer, _LAYER_KEYS, f"layer {layer.get('name')}")
        for key in ("name", "kind", "inputs"):
            if key not in layer:
                raise WorkloadError(f"layer: missing field {key!r}")
        if layer["name"] in names:
            raise WorkloadError(f"duplicate name {layer['name']!r}")
        names.add(layer["name"])
        kind = layer["kind"]
        if kind not in LAYER_KINDS:
            raise WorkloadError(f"layer {layer['name']}: unknown kind {kind!r}")
        required, optional = _ATTR_KEYS[kind]
        attrs = layer.get("attrs", {})
        if not isinstance(attrs, dict):
            raise WorkloadError(f"layer {layer['name']}: attrs must be an object")
        _reject_unknown(attrs, required | optional, f"layer {layer['name']} attrs")
        missing = required - set(attrs)
        if missing:
            raise WorkloadError(f"layer {layer['name']}: missing attrs {sorted(missing)}")
        for k, v in attrs.items():
            if k == "epilogue":
                if v not in _EPILOGUES:
                    raise WorkloadError(f"layer {layer['name']}: bad epilogue {v!r}")
            elif k == "pad":
                if not isinstance(v, int) or v < 0:
                    raise WorkloadError(f"layer {layer['name']}: pad must be >= 0")
            else:
                _positive_int(v, f"layer {layer['name']}.{k}")
        n_in = len(layer["inputs"])
        expect = 2 if kind in ("add", "mul", "matmul") else 1
        if n_in != expect:
            raise WorkloadError(
                f"layer {layer['name']}: kind {kind} takes {expect} input(s), got {n_in}")
    if "schedule" in doc:
        if not isinstance(doc["schedule"], dict):
            raise WorkloadError("schedule: expected an object")
        layer_names = {l["name"] for l in doc["layers"]}
        for lname, sched in doc["schedule"].items():
            if lname not in layer_names:
                raise WorkloadError(f"schedule: unknown layer {lname!r}")
            _reject_unknown(sched, _SCHEDULE_KEYS, f"schedule.{lname}")
            if "buffer" in sched:
                for var, b in sched["buffer"].items():
                    _positive_int(b, f"schedule.{lname}.buffer.{var}")
    return doc


def graph_from_workload(doc: dict) -> tuple[LayerGraph, MachineConfig, dict]:
    """Build (LayerGraph, MachineConfig, schedule overrides) from a validated
    workload document."""
    validate_workload(doc)
    elem = ELEM_KINDS[doc.get("elem", "f32")]
    graph = LayerGraph(
        inputs=[(i["name"], tuple(i["shape"])) for i in doc["inputs"]],
        layers=[LayerSpec(l["name"], l["kind"], list(l["inputs"]),
                          dict(l.get("attrs", {})))
                for l in doc["layers"]],
        elem=elem,
    )
    machine = MachineConfig(**doc.get("machine", {}))
    return graph, machine, dict(doc.get("schedule", {}))


def load_workload_file(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return validate_workload(json.load(fh))


def bundled_workload_names() -> list[str]:
    files = resources.files("swsched").joinpath("workloads")
    return sorted(p.name[:-5] for p in files.iterdir() if p.name.endswith(".json"))


def load_bundled_workload(name: str) -> dict:
    path = resources.files("swsched").joinpath("workloads", f"{name}.json")
    if not path.is_file():
        raise WorkloadError(
            f"no bundled workload {name!r}; available: {bundled_workload_names()}")
    return validate_workload(json.loads(path.read_text(encoding="utf-8")))


def resolve_workload(spec: str) -> dict:
    """Load a workload from a file path, falling back to the bundled set."""
    import os
    if os.path.exists(spec):
        return load_workload_file(spec)
    name = spec[:-5] if spec.endswith(".json") else spec
    return load_bundled_workload(name)
