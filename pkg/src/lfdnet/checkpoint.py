"""Binary checkpoint format for the classifier.

Layout (all integers little-endian):

  offset 0   magic  b"LFDN"
  +4         format version, u32 (currently 1)
  +8         architecture block: u64 byte length + canonical JSON
             (sorted keys, compact separators) of the ArchSpec
  then       parameter records:  u32 count, then records
  then       state records (batch-norm running stats): u32 count + records
  then       optimizer flag u8; when 1: u64 step count, f64 lr/beta1/beta2/eps,
             u32 count + records (first-moment and second-moment arrays)
  then       metadata block: u64 byte length + canonical JSON with the epoch
             counter, metrics history, and class label names

  record  := u16 name length + UTF-8 name
             + u8 dtype tag (0 = little-endian float32, 1 = float64)
             + u8 ndim + u32 dims[ndim]
             + raw array bytes (C order)

Loading rebuilds the network from the embedded spec and restores every
array bitwise, so a round trip reproduces forward passes exactly.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError
from .model import ArchSpec, Network, build

MAGIC = b"LFDN"
FORMAT_VERSION = 1
_DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAG_FOR = {np.dtype("float32"): 0, np.dtype("float64"): 1}


@dataclass
class CheckpointMeta:
    epoch: int = 0
    history: list = field(default_factory=list)
    class_labels: list = field(default_factory=list)
    adam: dict | None = None
    extra: dict = field(default_factory=dict)


def _write_record(out: bytearray, name: str, arr: np.ndarray) -> None:
    nb = name.encode("utf-8")
    out += struct.pack("<H", len(nb))
    out += nb
    tag = _TAG_FOR.get(arr.dtype)
    if tag is None:
        raise CheckpointError(f"unsupported parameter dtype {arr.dtype} for {name!r}")
    out += struct.pack("<BB", tag, arr.ndim)
    out += struct.pack(f"<{arr.ndim}I", *arr.shape)
    out += np.ascontiguousarray(arr).astype(_DTYPE_TAGS[tag], copy=False).tobytes()


def _write_records(out: bytearray, records: dict) -> None:
    out += struct.pack("<I", len(records))
    for name in records:
        _write_record(out, name, records[name])


def checkpoint_bytes(net: Network, meta: CheckpointMeta) -> bytes:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", FORMAT_VERSION)
    arch = net.spec.to_json().encode("utf-8")
    out += struct.pack("<Q", len(arch))
    out += arch
    _write_records(out, net.named_params())
    _write_records(out, net.named_state())
    adam = meta.adam
    if adam is None:
        out += struct.pack("<B", 0)
    else:
        out += struct.pack("<B", 1)
        out += struct.pack("<Q", adam["t"])
        out += struct.pack("<dddd", adam["lr"], adam["beta1"], adam["beta2"], adam["eps"])
        arrays = {}
        for name, arr in adam["m"].items():
            arrays[f"{name}.m"] = arr
        for name, arr in adam["v"].items():
            arrays[f"{name}.v"] = arr
        _write_records(out, arrays)
    blob = json.dumps(
        {
            "class_labels": list(meta.class_labels),
            "epoch": meta.epoch,
            "extra": meta.extra,
            "history": meta.history,
        },
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    out += struct.pack("<Q", len(blob))
    out += blob
    return bytes(out)


def save_checkpoint(path, net: Network, meta: CheckpointMeta) -> None:
    data = checkpoint_bytes(net, meta)
    with open(path, "wb") as fh:
        fh.write(data)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _read_records(r: _Reader) -> dict:
    (count,) = r.unpack("<I")
    records = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        tag, ndim = r.unpack("<BB")
        if tag not in _DTYPE_TAGS:
            raise CheckpointError(f"unknown dtype tag {tag} in checkpoint")
        shape = r.unpack(f"<{ndim}I")
        dtype = _DTYPE_TAGS[tag]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if ndim else dtype.itemsize
        arr = np.frombuffer(r.take(nbytes), dtype=dtype).reshape(shape).copy()
        records[name] = arr
    return records


def _assign(target: dict, source: dict, kind: str) -> None:
    if set(target) != set(source):
        missing = sorted(set(target) ^ set(source))
        raise CheckpointError(f"checkpoint {kind} records do not match network: {missing}")
    for name, arr in target.items():
        if source[name].shape != arr.shape:
            raise CheckpointError(
                f"shape mismatch for {name!r}: checkpoint {source[name].shape}, "
                f"network {arr.shape}"
            )
        arr[...] = source[name]


def load_checkpoint(path, expect_arch: ArchSpec | None = None):
    """Read a checkpoint and rebuild its network.

    Returns ``(net, meta)``.  When ``expect_arch`` is given, the embedded
    spec must match it exactly.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointError("bad checkpoint: magic mismatch")
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (arch_len,) = r.unpack("<Q")
    try:
        spec = ArchSpec.from_json(r.take(arch_len).decode("utf-8"))
    except (ValueError, TypeError, KeyError) as exc:
        raise CheckpointError(f"unreadable architecture block: {exc}") from exc
    if expect_arch is not None and spec != expect_arch:
        raise CheckpointError("architecture spec mismatch")
    params = _read_records(r)
    state = _read_records(r)
    dtype = params[next(iter(params))].dtype if params else np.dtype("float32")
    net = build(spec, seed=0, dtype=dtype)
    _assign(net.named_params(), params, "parameter")
    _assign(net.named_state(), state, "state")
    (opt_flag,) = r.unpack("<B")
    adam = None
    if opt_flag == 1:
        (t,) = r.unpack("<Q")
        lr, beta1, beta2, eps = r.unpack("<dddd")
        arrays = _read_records(r)
        m = {}
        v = {}
        for name, arr in arrays.items():
            if name.endswith(".m"):
                m[name[:-2]] = arr
            elif name.endswith(".v"):
                v[name[:-2]] = arr
            else:
                raise CheckpointError(f"unexpected optimizer record {name!r}")
        adam = {"t": t, "lr": lr, "beta1": beta1, "beta2": beta2, "eps": eps, "m": m, "v": v}
    elif opt_flag != 0:
        raise CheckpointError(f"bad optimizer flag {opt_flag}")
    (meta_len,) = r.unpack("<Q")
    try:
        blob = json.loads(r.take(meta_len).decode("utf-8"))
    except ValueError as exc:
        raise CheckpointError(f"unreadable metadata block: {exc}") from exc
    meta = CheckpointMeta(
        epoch=blob.get("epoch", 0),
        history=blob.get("history", []),
        class_labels=blob.get("class_labels", []),
        adam=adam,
        extra=blob.get("extra", {}),
    )
    return net, meta
