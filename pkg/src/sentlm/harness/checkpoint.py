"""Binary checkpoints: a JSON header followed by little-endian float32 tensors.

Layout::

    b"SENTLMCK"              8-byte magic
    uint32 (LE)              header length in bytes
    header                   UTF-8 JSON
    payload                  tensors in header order, '<f4', C order

The header records the format version, config hash, block ordering tag, step,
whether the weights are the EMA shadow, the model kind and its config, an
optional vocabulary, the tensor table and a sha256 of the payload.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..baseline import BaselineConfig, TokenLM
from ..errors import CheckpointError
from ..nn import Module
from ..numerics import precision
from ..sllm import SllmConfig, SllmModel
from ..svae import SvaeConfig, SvaeModel
from ..text import Vocabulary

MAGIC = b"SENTLMCK"
FORMAT_VERSION = 1
BLOCK_ORDER = "pre-norm/gelu"
_DTYPE = np.dtype("<f4")


@dataclass
class Checkpoint:
    model: Module
    header: dict
    vocab: Vocabulary | None = None

    @property
    def kind(self) -> str:
        return self.header["kind"]

    @property
    def step(self) -> int:
        return self.header["step"]


def model_kind(model: Module) -> str:
    if isinstance(model, SllmModel):
        return "sllm"
    if isinstance(model, SvaeModel):
        return "svae"
    if isinstance(model, TokenLM):
        return "baseline"
    raise CheckpointError(f"cannot checkpoint {type(model).__name__}")


def _configs(model: Module) -> dict:
    kind = model_kind(model)
    if kind == "sllm":
        return {"model": asdict(model.cfg), "svae": asdict(model.svae.cfg), "svae_frozen": model.svae_frozen}
    return {"model": asdict(model.cfg)}


def build_model(kind: str, configs: dict) -> Module:
    """An uninitialised-in-spirit model of the right shape (weights get overwritten)."""
    if kind == "svae":
        return SvaeModel(SvaeConfig(**configs["model"]), 0)
    if kind == "baseline":
        return TokenLM(BaselineConfig(**configs["model"]), 0)
    if kind == "sllm":
        svae = SvaeModel(SvaeConfig(**configs["svae"]), 0)
        return SllmModel(SllmConfig(**configs["model"]), svae, 0, freeze_svae=configs.get("svae_frozen", False))
    raise CheckpointError(f"unknown model kind {kind!r}")


def save_checkpoint(model: Module, path, *, config_hash: str = "", step: int = 0, ema: bool = False,
                    vocab: Vocabulary | None = None, extra: dict | None = None) -> Path:
    path = Path(path)
    named = model.named_parameters()
    table, chunks, offset = [], [], 0
    for name, p in named:
        buf = np.ascontiguousarray(p.data, dtype=_DTYPE).tobytes()
        table.append({"name": name, "shape": list(p.data.shape), "offset": offset, "nbytes": len(buf)})
        chunks.append(buf)
        offset += len(buf)
    payload = b"".join(chunks)
    header = {
        "format_version": FORMAT_VERSION,
        "config_hash": config_hash,
        "block_order": BLOCK_ORDER,
        "step": int(step),
        "ema": bool(ema),
        "kind": model_kind(model),
        "configs": _configs(model),
        "vocab": vocab.token_of if vocab is not None else None,
        "tensors": table,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(payload)
    tmp.replace(path)
    return path


def read_header(path) -> tuple[dict, bytes]:
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if len(raw) < len(MAGIC) + 4 or raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    (n,) = struct.unpack("<I", raw[len(MAGIC) : len(MAGIC) + 4])
    start = len(MAGIC) + 4
    if start + n > len(raw):
        raise CheckpointError("corrupt checkpoint: header truncated")
    try:
        header = json.loads(raw[start : start + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt checkpoint header: {e}") from e
    return header, raw[start + n :]


def load_checkpoint(path, expect_hash: str | None = None, override_hash: bool = False) -> Checkpoint:
    """Rebuild the model and copy the stored tensors in bit for bit.

    With ``expect_hash`` set, a differing stored config hash is an error
    unless ``override_hash`` is true.
    """
    header, payload = read_header(path)
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {version} is not supported (expected {FORMAT_VERSION})")
    if header.get("block_order") != BLOCK_ORDER:
        raise CheckpointError(f"checkpoint block ordering {header.get('block_order')!r} differs from {BLOCK_ORDER!r}")
    if expect_hash is not None and header.get("config_hash") != expect_hash and not override_hash:
        raise CheckpointError("checkpoint config hash does not match the requested run config")
    table = header["tensors"]
    expected = sum(t["nbytes"] for t in table)
    if len(payload) != expected:
        raise CheckpointError(f"corrupt payload: {len(payload)} bytes, header lists {expected}")
    if hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
        raise CheckpointError("corrupt payload: checksum mismatch")

    with precision(np.float32):
        model = build_model(header["kind"], header["configs"])
    params = dict(model.named_parameters())
    stored = {t["name"] for t in table}
    if len(stored) != len(table):
        raise CheckpointError("checkpoint lists a tensor more than once")
    if stored != set(params):
        missing, unexpected = set(params) - stored, stored - set(params)
        raise CheckpointError(f"tensor set mismatch; missing {sorted(missing)}, unexpected {sorted(unexpected)}")
    for t in table:
        p = params[t["name"]]
        shape = tuple(t["shape"])
        if shape != p.data.shape or t["nbytes"] != int(np.prod(shape, dtype=np.int64)) * _DTYPE.itemsize:
            raise CheckpointError(f"corrupt payload: tensor {t['name']} has shape {shape}, model wants {p.data.shape}")
        arr = np.frombuffer(payload, dtype=_DTYPE, count=int(np.prod(shape, dtype=np.int64)), offset=t["offset"])
        p.data = arr.reshape(shape).astype(np.float32)
    vocab = Vocabulary(header["vocab"]) if header.get("vocab") else None
    return Checkpoint(model, header, vocab)
