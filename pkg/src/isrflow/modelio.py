"""Versioned model files and small CSV/JSON writers.

A model file is a JSON container holding the run-config snapshot, every
weight matrix, the permutations and activation assignments, plus a digest
of the training history.  Floats serialize via ``repr`` (shortest exact
round-trip), so ``load(save(m))`` reproduces outputs bitwise.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from .coupling import CouplingBlock, InvertibleStack, PermutationLayer
from .eql import EqlNetwork
from .flows import CisrModel, FlowModel, IsrModel

FORMAT = "isrflow-model"
VERSION = 1


def eql_to_dict(net):
    layers = []
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        layers.append({
            "w": w.tolist(),
            "b": b.tolist(),
            "activations": list(net.activations[i]) if i < len(net.activations) else None,
        })
    return {"exp_clamp": net.exp_clamp, "layers": layers}


def eql_from_dict(d):
    weights = [np.asarray(l["w"], dtype=np.float64) for l in d["layers"]]
    biases = [np.asarray(l["b"], dtype=np.float64) for l in d["layers"]]
    acts = [tuple(l["activations"]) for l in d["layers"] if l["activations"] is not None]
    return EqlNetwork(weights, biases, acts, exp_clamp=d["exp_clamp"])


def stack_to_dict(stack):
    layers = []
    for layer in stack.layers:
        if isinstance(layer, PermutationLayer):
            layers.append({"type": "permutation", "perm": [int(i) for i in layer.perm]})
        else:
            layers.append({
                "type": "coupling",
                "d1": layer.d1,
                "d2": layer.d2,
                "clamp": layer.clamp,
                "subnets": {k: eql_to_dict(v) for k, v in layer.subnets().items()},
            })
    return {
        "width": stack.width,
        "pad_count": stack.pad_count,
        "pad_weight": stack.pad_weight,
        "cond_dim": stack.cond_dim,
        "layers": layers,
    }


def stack_from_dict(d):
    layers = []
    for l in d["layers"]:
        if l["type"] == "permutation":
            layers.append(PermutationLayer(np.asarray(l["perm"], dtype=np.intp)))
        else:
            nets = {k: eql_from_dict(v) for k, v in l["subnets"].items()}
            layers.append(CouplingBlock(
                nets["s1"], nets["t1"], nets["s2"], nets["t2"],
                l["d1"], l["d2"], clamp=l["clamp"],
            ))
    return InvertibleStack(d["width"], layers, pad_count=d["pad_count"],
                           pad_weight=d["pad_weight"], cond_dim=d["cond_dim"])


def history_digest(history):
    if history is None or not history.records:
        return {"epochs": 0, "final_loss": None, "sha256": None}
    payload = ",".join(repr(r.loss) for r in history.records).encode()
    return {
        "epochs": len(history.records),
        "final_loss": history.records[-1].loss,
        "sha256": hashlib.sha256(payload).hexdigest(),
    }


def save_model(model, path, config=None, history=None):
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "kind": model.kind,
        "stack": stack_to_dict(model.stack),
        "config": config or {},
        "history": history_digest(history),
    }
    if model.kind == "isr":
        doc["d_y"] = model.d_y
        doc["d_z"] = model.d_z
        doc["sigma2"] = model.sigma2
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path):
    """Returns (model, config snapshot dict)."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != FORMAT:
        raise ValueError(f"{path} is not an isrflow model file")
    if doc.get("version") != VERSION:
        raise ValueError(f"unsupported model version {doc.get('version')}")
    stack = stack_from_dict(doc["stack"])
    kind = doc["kind"]
    if kind == "flow":
        model = FlowModel(stack)
    elif kind == "isr":
        model = IsrModel(stack, d_y=doc["d_y"], sigma2=doc["sigma2"], d_z=doc["d_z"])
    elif kind == "cisr":
        model = CisrModel(stack)
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    return model, doc.get("config", {})


def write_csv(path, header, rows):
    """Plain CSV: header row, '.' decimals, repr floats, newline-terminated."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def write_samples_csv(path, samples, prefix="x"):
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if samples.size == 0 and samples.shape[1] == 0:
        raise ValueError("cannot infer column count from an empty array")
    header = [f"{prefix}{i + 1}" for i in range(samples.shape[1])]
    write_csv(path, header, samples)


def read_samples_csv(path):
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    return header, np.asarray([[float(v) for v in r] for r in rows], dtype=np.float64).reshape(len(rows), len(header))


def write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
