"""Self-describing binary checkpoints for networks and fitted models.

Byte layout (all integers little-endian):

    offset 0   8 bytes   magic b"DLMCKPT\\0"
    offset 8   uint32    format version (currently 1)
    offset 12  uint32    header length H
    offset 16  H bytes   UTF-8 JSON header (sorted keys)
    offset 16+H          raw little-endian float64 arrays, concatenated in
                         the order given by header["arrays"]
                         (list of {"name": str, "length": int})

The header carries the network architecture fields, diffusion mode, z0,
conditioning scales, and grid metadata, so a checkpoint can be loaded
without any side information. Optimizer state (Adam moments and the update
counter) rides along so training can resume with continued numbering.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict

import numpy as np

from .inference import AdamState, VariationalModel
from .nn import MLPModel, MLPSpec
from .sde import TimeGrid

MAGIC = b"DLMCKPT\0"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def _pack(header: dict, arrays: list[tuple[str, np.ndarray]]) -> bytes:
    header = dict(header)
    header["arrays"] = [{"name": n, "length": int(a.size)} for n, a in arrays]
    hjson = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    blob = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays)
    return MAGIC + struct.pack("<II", VERSION, len(hjson)) + hjson + blob


def _unpack(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if len(data) < 16 or data[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, hlen = struct.unpack("<II", data[8:16])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    try:
        header = json.loads(data[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt checkpoint header: {e}") from e
    pos = 16 + hlen
    arrays = {}
    for entry in header.get("arrays", []):
        n = int(entry["length"]) * 8
        chunk = data[pos : pos + n]
        if len(chunk) != n:
            raise CheckpointError(f"truncated checkpoint (array {entry['name']!r})")
        arrays[entry["name"]] = np.frombuffer(chunk, dtype="<f8").astype(np.float64)
        pos += n
    if pos != len(data):
        raise CheckpointError("trailing bytes after declared arrays")
    return header, arrays


def _spec_dict(spec: MLPSpec) -> dict:
    return asdict(spec)


def _spec_from(d: dict) -> MLPSpec:
    return MLPSpec(**d)


def save_mlp(path, model: MLPModel) -> None:
    data = _pack({"kind": "mlp", "spec": _spec_dict(model.spec)}, [("params", model.params)])
    with open(path, "wb") as f:
        f.write(data)


def load_mlp(path) -> MLPModel:
    with open(path, "rb") as f:
        header, arrays = _unpack(f.read())
    if header.get("kind") != "mlp":
        raise CheckpointError(f"expected an mlp checkpoint, got {header.get('kind')!r}")
    return MLPModel(_spec_from(header["spec"]), arrays["params"])


def save_model(
    path,
    model: VariationalModel,
    grid: TimeGrid,
    adam: AdamState | None = None,
    meta: dict | None = None,
) -> None:
    header = {
        "kind": "variational_model",
        "nets": {
            "prior": _spec_dict(model.prior.spec),
            "control": _spec_dict(model.control.spec),
            "sigma": _spec_dict(model.sigma.spec) if model.sigma is not None else None,
        },
        "eta": model.eta,
        "z0": model.z0,
        "z_scale": model.z_scale,
        "t_scale": model.t_scale,
        "z_loc": model.z_loc,
        "t_loc": model.t_loc,
        "drift_scale": model.drift_scale,
        "sigma_scale": model.sigma_scale,
        "sigma_shift": model.sigma_shift,
        "count_scale": model.count_scale,
        "context_mode": model.context_mode,
        "grid": {"horizon": grid.horizon, "steps": grid.steps},
        "update_count": int(adam.t) if adam is not None else 0,
        "meta": meta or {},
    }
    arrays = [("prior.params", model.prior.params), ("control.params", model.control.params)]
    if model.sigma is not None:
        arrays.append(("sigma.params", model.sigma.params))
    if adam is not None:
        arrays += [("adam.m", adam.m), ("adam.v", adam.v)]
    with open(path, "wb") as f:
        f.write(_pack(header, arrays))


def load_model(path) -> tuple[VariationalModel, TimeGrid, AdamState | None, dict]:
    with open(path, "rb") as f:
        header, arrays = _unpack(f.read())
    if header.get("kind") != "variational_model":
        raise CheckpointError(f"expected a model checkpoint, got {header.get('kind')!r}")
    nets = header["nets"]
    sigma = None
    if nets.get("sigma") is not None:
        sigma = MLPModel(_spec_from(nets["sigma"]), arrays["sigma.params"])
    model = VariationalModel(
        prior=MLPModel(_spec_from(nets["prior"]), arrays["prior.params"]),
        control=MLPModel(_spec_from(nets["control"]), arrays["control.params"]),
        eta=header["eta"],
        sigma=sigma,
        z0=header["z0"],
        z_scale=header["z_scale"],
        t_scale=header["t_scale"],
        z_loc=header["z_loc"],
        t_loc=header["t_loc"],
        drift_scale=header["drift_scale"],
        sigma_scale=header["sigma_scale"],
        sigma_shift=header["sigma_shift"],
        count_scale=header["count_scale"],
        context_mode=header["context_mode"],
    )
    grid = TimeGrid(header["grid"]["horizon"], header["grid"]["steps"])
    adam = None
    if "adam.m" in arrays:
        adam = AdamState(arrays["adam.m"], arrays["adam.v"], int(header.get("update_count", 0)))
    return model, grid, adam, header.get("meta", {})
