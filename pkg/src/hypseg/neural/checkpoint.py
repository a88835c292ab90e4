"""Binary checkpoint: b"HSXK", u32 version, u32 JSON length, JSON blob,
then float64 little-endian arrays in parameter declaration order, followed
by the Adam first and second moments when present."""
import json
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError
from .unet import AdamState, UNetConfig, build_unet

MAGIC = b"HSXK"
VERSION = 1


def save_checkpoint(path, model, extra=None):
    names = list(model.params)
    has_adam = bool(model.adam.m) and all(k in model.adam.m for k in names)
    meta = {
        "unet": model.cfg.to_dict(),
        "params": [[k, list(model.params[k].shape)] for k in names],
        "adam_step": int(model.adam.step),
        "has_adam_state": has_adam,
        "extra": extra or {},
    }
    blob = json.dumps(meta, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(blob)), blob]
    parts += [np.ascontiguousarray(model.params[k], dtype="<f8").tobytes() for k in names]
    if has_adam:
        parts += [np.ascontiguousarray(model.adam.m[k], dtype="<f8").tobytes() for k in names]
        parts += [np.ascontiguousarray(model.adam.v[k], dtype="<f8").tobytes() for k in names]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


def load_checkpoint(path):
    """Returns (model, extra-dict)."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    version, n = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    meta = json.loads(raw[12:12 + n])
    model = build_unet(UNetConfig.from_dict(meta["unet"]), seed=0)
    off = 12 + n

    def take(shape):
        nonlocal off
        count = int(np.prod(shape))
        if off + 8 * count > len(raw):
            raise FormatError(f"{path}: truncated parameter block")
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(shape).astype(np.float64)
        off += 8 * count
        return arr

    entries = meta["params"]
    if [k for k, _ in entries] != list(model.params):
        raise FormatError(f"{path}: parameter layout does not match its config")
    model.set_params({k: take(tuple(shape)) for k, shape in entries})
    adam = AdamState(step=int(meta["adam_step"]))
    if meta.get("has_adam_state"):
        adam.m = {k: take(tuple(shape)) for k, shape in entries}
        adam.v = {k: take(tuple(shape)) for k, shape in entries}
    model.adam = adam
    return model, meta.get("extra", {})
