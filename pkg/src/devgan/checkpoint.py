"""Single-file binary checkpoints.

Layout (all integers little-endian)::

    8   bytes  magic "DEVGAN01"
    u32        config length L, then L bytes of UTF-8 key=value config text
    u64 x 3    completed epochs, steps done in the current epoch, global step
    u32        number of network blocks
    per network:
      u16 + bytes   network name
      u32           number of parameters
      per parameter:
        u16 + bytes name
        u8          ndim, then u32 per dimension
        u64         Adam step count
        f64 x n     values, then Adam first moment, then Adam second moment
    u64        checksum: 8-byte BLAKE2b digest of every preceding byte

Loading validates the checksum before anything else is decoded, so a
corrupt file never yields partial state.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .networks import NetworkParams, build_network, model_networks
from .tensor import ParamTensor

MAGIC = b"DEVGAN01"


class CheckpointError(ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


class MissingNetworkError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


@dataclass
class TrainingState:
    config: TrainConfig
    models: dict[str, NetworkParams]
    epoch: int = 0
    step_in_epoch: int = 0
    global_step: int = 0


def _checksum(payload: bytes) -> bytes:
    return hashlib.blake2b(payload, digest_size=8).digest()


def _name(s: str) -> bytes:
    raw = s.encode()
    return struct.pack("<H", len(raw)) + raw


def encode_state(state: TrainingState) -> bytes:
    cfg = state.config.to_text().encode()
    out = [MAGIC, struct.pack("<I", len(cfg)), cfg,
           struct.pack("<QQQ", state.epoch, state.step_in_epoch, state.global_step),
           struct.pack("<I", len(state.models))]
    for name, net in state.models.items():
        out += [_name(name), struct.pack("<I", len(net.params))]
        for p in net.params:
            out += [_name(p.name), struct.pack("<B", p.data.ndim),
                    struct.pack(f"<{p.data.ndim}I", *p.shape), struct.pack("<Q", p.step_count)]
            for arr in (p.data, p.moment1, p.moment2):
                out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    payload = b"".join(out)
    return payload + _checksum(payload)


def save_checkpoint(state: TrainingState, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_state(state))
    tmp.replace(path)


class _Reader:
    def __init__(self, buf: bytes) -> None:
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint truncated")
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def name(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode()


def decode_state(buf: bytes) -> TrainingState:
    if buf[:8] != MAGIC:
        raise BadMagicError(f"not a checkpoint (magic {buf[:8]!r}, expected {MAGIC!r})")
    if len(buf) < 16 or _checksum(buf[:-8]) != buf[-8:]:
        raise ChecksumError("checkpoint checksum mismatch")
    r = _Reader(buf[:-8])
    r.take(8)
    (cfg_len,) = r.unpack("<I")
    config = TrainConfig.from_text(r.take(cfg_len).decode(), "<checkpoint config>")
    epoch, step_in_epoch, global_step = r.unpack("<QQQ")
    (n_nets,) = r.unpack("<I")
    blocks: dict[str, list[ParamTensor]] = {}
    for _ in range(n_nets):
        net_name = r.name()
        (n_params,) = r.unpack("<I")
        params = []
        for _ in range(n_params):
            pname = r.name()
            (ndim,) = r.unpack("<B")
            shape = r.unpack(f"<{ndim}I")
            (steps,) = r.unpack("<Q")
            count = int(np.prod(shape, dtype=np.int64))
            arrays = [np.frombuffer(r.take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)
                      for _ in range(3)]
            p = ParamTensor(pname, arrays[0])
            p.moment1, p.moment2, p.step_count = arrays[1], arrays[2], steps
            params.append(p)
        blocks[net_name] = params

    models = {}
    for net_name in model_networks(config.model):
        if net_name not in blocks:
            raise MissingNetworkError(f"checkpoint lacks network {net_name!r} required by model {config.model!r}")
        template = build_network(net_name, config.arch, 0)
        loaded = blocks[net_name]
        expected = [(p.name, p.shape) for p in template.params]
        got = [(p.name, p.shape) for p in loaded]
        if expected != got:
            raise CheckpointShapeError(
                f"network {net_name!r} parameters do not match the embedded config "
                f"(first difference: {next((e, g) for e, g in zip(expected + [None], got + [None]) if e != g)})"
            )
        models[net_name] = NetworkParams(net_name, loaded, config.arch)
    return TrainingState(config, models, epoch, step_in_epoch, global_step)


def load_checkpoint(path) -> TrainingState:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    return decode_state(path.read_bytes())
