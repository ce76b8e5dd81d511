"""Binary checkpoints (``.npz``) with a JSON header.

Layout, format version 1:

``header``          uint8 bytes of a UTF-8 JSON object holding ``format``,
                    ``version``, ``spec`` (NetworkSpec dict), ``n_layers`` and
                    free-form ``meta`` (resolved config, seed, code version)
``layer{i}.weight`` float64 array, shape (n, m, e)
``layer{i}.bias``   float64 array, shape (m,)
``extra.{name}``    optional float64 arrays, e.g. standardization statistics

Arrays are stored raw, so a save/load round trip is bit-exact.
"""
from __future__ import annotations

import json

import numpy as np

from .mk_layer import ExtendedKernel
from .model import ModelParams, NetworkSpec

FORMAT = "majority-kernels-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: ModelParams, spec: NetworkSpec, meta=None, extras=None):
    header = {
        "format": FORMAT,
        "version": VERSION,
        "spec": spec.to_dict(),
        "n_layers": len(params.layers),
        "meta": meta or {},
    }
    arrays = {"header": np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)}
    for i, layer in enumerate(params.layers):
        arrays[f"layer{i}.weight"] = layer.weights
        arrays[f"layer{i}.bias"] = layer.bias
    for name, arr in (extras or {}).items():
        arrays[f"extra.{name}"] = np.asarray(arr)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple:
    """Returns ``(params, spec, meta, extras)``."""
    try:
        data = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    with data:
        if "header" not in data:
            raise CheckpointError(f"{path}: missing header")
        header = json.loads(bytes(data["header"]).decode())
        if header.get("format") != FORMAT:
            raise CheckpointError(f"{path}: not a {FORMAT} file")
        if header.get("version") != VERSION:
            raise CheckpointError(f"{path}: unsupported version {header.get('version')}")
        layers = [
            ExtendedKernel(data[f"layer{i}.weight"], data[f"layer{i}.bias"])
            for i in range(header["n_layers"])
        ]
        extras = {k[len("extra.") :]: data[k] for k in data.files if k.startswith("extra.")}
    params = ModelParams(layers)
    spec = NetworkSpec.from_dict(header["spec"])
    if [(l.n, l.m) for l in layers] != spec.layer_dims or params.expansion != spec.expansion:
        raise CheckpointError(f"{path}: stored arrays do not match the declared network spec")
    return params, spec, header["meta"], extras
