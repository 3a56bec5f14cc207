"""Binary ensemble checkpoints.

Layout (all integers little-endian):

    bytes 0..3    magic "PLMX"
    u32           format version (currently 1)
    32 bytes      sha256 of the effective configuration text
    u64           seed
    u64           first stream id
    u64           number of trajectories
    u64           nodal values per trajectory
    f64           checkpoint time
    u64           steps taken so far
    then          n_traj * n_nodes f64 nodal values, trajectory-major

Resume reconstructs each trajectory's stream from (seed, stream id) and skips
the draws consumed by the recorded steps, so a resumed run reproduces an
uninterrupted one bit for bit.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"PLMX"
VERSION = 1
_HEADER = struct.Struct("<4sI32sQQQQdQ")


class CheckpointError(RuntimeError):
    pass


@dataclass(frozen=True)
class Checkpoint:
    config_hash: bytes
    seed: int
    first_stream: int
    t: float
    step_count: int
    states: np.ndarray  # (n_traj, n_nodes)


def config_hash(effective_text: str) -> bytes:
    return hashlib.sha256(effective_text.encode("utf-8")).digest()


def write_checkpoint(path: str, ckpt: Checkpoint) -> None:
    states = np.ascontiguousarray(ckpt.states, dtype="<f8")
    if states.ndim != 2:
        raise CheckpointError("checkpoint states must be a (n_traj, n_nodes) array")
    header = _HEADER.pack(
        MAGIC,
        VERSION,
        ckpt.config_hash,
        ckpt.seed % (1 << 64),
        ckpt.first_stream % (1 << 64),
        states.shape[0],
        states.shape[1],
        ckpt.t,
        ckpt.step_count,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(states.tobytes())


def read_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        if len(raw) < _HEADER.size:
            raise CheckpointError("checkpoint header truncated")
        magic, version, chash, seed, first_stream, n_traj, n_nodes, t, steps = (
            _HEADER.unpack(raw)
        )
        if magic != MAGIC:
            raise CheckpointError(f"bad checkpoint magic {magic!r}")
        if version != VERSION:
            raise CheckpointError(
                f"checkpoint version mismatch: file has {version}, reader expects {VERSION}"
            )
        body = fh.read(n_traj * n_nodes * 8)
        if len(body) != n_traj * n_nodes * 8:
            raise CheckpointError("checkpoint body truncated")
        states = np.frombuffer(body, dtype="<f8").reshape(n_traj, n_nodes).copy()
    return Checkpoint(
        config_hash=chash,
        seed=seed,
        first_stream=first_stream,
        t=t,
        step_count=steps,
        states=states,
    )
