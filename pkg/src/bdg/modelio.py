"""``.bdgm`` model files.

Layout (all integers little-endian)::

    b"BDGMODL1"
    u32 manifest length
    manifest (UTF-8 JSON, sorted keys)
    parameter blob
    u32 CRC32 of everything above

The blob is layer-major float64 for networks (``W0, b0, W1, b1, ...``; PPO
stores the policy network then the value network) or, for Q-tables, one
record per state in sorted key order: ``key_dim`` int64 cells followed by
``n_actions`` float64 values.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import numpy as np

from .errors import BadMagic, ChecksumMismatch, TruncatedFile, VersionUnsupported
from .rl.agents import AGENTS, BaseAgent, DQNAgent, PPOAgent, QLearningAgent
from .rl.mlp import Mlp
from .rl.qtable import QTable

MAGIC = b"BDGMODL1"
FORMAT_VERSION = 1
_F64 = np.dtype("<f8")
_I64 = np.dtype("<i8")


def created_at() -> str:
    """Timestamp for manifests; honours ``SOURCE_DATE_EPOCH`` and defaults to the epoch."""
    epoch = int(os.environ.get("SOURCE_DATE_EPOCH", "0"))
    return datetime.fromtimestamp(epoch, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _jsonable(value: Any) -> Any:
    if isinstance(value, tuple):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


def describe(agent: BaseAgent) -> dict[str, Any]:
    """Algorithm-specific manifest fields (shapes and hyperparameters)."""
    info: dict[str, Any] = {
        "algorithm": agent.algorithm,
        "n_features": int(agent.n_features_in_),
        "n_actions": int(agent.n_actions_),
        "params": {k: _jsonable(v) for k, v in sorted(agent.get_params().items())},
    }
    if isinstance(agent, DQNAgent):
        info["layers"] = [agent.net_.sizes]
    elif isinstance(agent, PPOAgent):
        info["layers"] = [agent.policy_net_.sizes, agent.value_net_.sizes]
    elif isinstance(agent, QLearningAgent):
        info["discretization"] = {"bin_width": agent.bin_width, "key_dim": int(agent.n_features_in_)}
        info["entries"] = len(agent.q_table_)
    return info


def _blob(agent: BaseAgent) -> bytes:
    if isinstance(agent, DQNAgent):
        return agent.net_.flat.astype(_F64).tobytes()
    if isinstance(agent, PPOAgent):
        return agent.policy_net_.flat.astype(_F64).tobytes() + agent.value_net_.flat.astype(_F64).tobytes()
    if isinstance(agent, QLearningAgent):
        parts = []
        for key in sorted(agent.q_table_.values):
            parts.append(np.asarray(key, dtype=_I64).tobytes())
            parts.append(agent.q_table_.values[key].astype(_F64).tobytes())
        return b"".join(parts)
    raise TypeError(f"cannot serialise {type(agent).__name__}")


def _blob_size(manifest: dict[str, Any]) -> int:
    alg = manifest["algorithm"]
    if alg in ("dqn", "ppo"):
        return 8 * sum(Mlp.n_params(sizes) for sizes in manifest["layers"])
    if alg == "qtable":
        return manifest["entries"] * 8 * (manifest["discretization"]["key_dim"] + manifest["n_actions"])
    raise VersionUnsupported(f"unknown algorithm {alg!r} in manifest")


def encode(agent: BaseAgent, manifest: dict[str, Any]) -> bytes:
    full = {"format_version": FORMAT_VERSION, **manifest, **describe(agent)}
    head = json.dumps(full, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = MAGIC + struct.pack("<I", len(head)) + head + _blob(agent)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def decode(data: bytes) -> tuple[BaseAgent, dict[str, Any]]:
    if len(data) < len(MAGIC):
        if MAGIC.startswith(data):
            raise TruncatedFile("file ends inside the magic header")
        raise BadMagic("not a bdg model file")
    if data[: len(MAGIC)] != MAGIC:
        raise BadMagic(f"bad magic {data[:8]!r}")
    pos = len(MAGIC)
    if len(data) < pos + 4:
        raise TruncatedFile("file ends before the manifest length")
    (mlen,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if len(data) < pos + mlen:
        raise TruncatedFile("file ends inside the manifest")
    try:
        manifest = json.loads(data[pos : pos + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ChecksumMismatch(f"manifest is corrupt: {exc}") from None
    pos += mlen
    if manifest.get("format_version") != FORMAT_VERSION:
        raise VersionUnsupported(f"format_version {manifest.get('format_version')!r} (supported: {FORMAT_VERSION})")
    try:
        size = _blob_size(manifest)
    except (KeyError, TypeError) as exc:
        raise ChecksumMismatch(f"manifest is missing {exc}") from None
    end = pos + size
    if len(data) < end + 4:
        raise TruncatedFile(f"expected {end + 4} bytes, file has {len(data)}")
    if len(data) > end + 4:
        raise ChecksumMismatch("trailing bytes after checksum")
    (crc,) = struct.unpack_from("<I", data, end)
    if zlib.crc32(data[:end]) & 0xFFFFFFFF != crc:
        raise ChecksumMismatch("CRC32 does not match contents")
    return _rebuild(manifest, data[pos:end]), manifest


def _rebuild(manifest: dict[str, Any], blob: bytes) -> BaseAgent:
    params = dict(manifest["params"])
    if "hidden" in params:
        params["hidden"] = tuple(params["hidden"])
    agent = AGENTS[manifest["algorithm"]](**params)
    agent.n_features_in_ = manifest["n_features"]
    agent.n_actions_ = manifest["n_actions"]
    if isinstance(agent, QLearningAgent):
        k = manifest["discretization"]["key_dim"]
        rec = np.dtype([("key", _I64, (k,)), ("q", _F64, (agent.n_actions_,))])
        table = QTable(agent.n_actions_)
        for row in np.frombuffer(blob, dtype=rec):
            table.values[tuple(int(v) for v in row["key"])] = row["q"].astype(np.float64)
        agent.q_table_ = table
        return agent
    flat = np.frombuffer(blob, dtype=_F64).astype(np.float64)
    nets = []
    pos = 0
    for sizes in manifest["layers"]:
        n = Mlp.n_params(sizes)
        nets.append(Mlp(sizes, flat[pos : pos + n].copy()))
        pos += n
    if isinstance(agent, PPOAgent):
        agent.policy_net_, agent.value_net_ = nets
    else:
        (agent.net_,) = nets
    return agent


def atomic_write(path: str | Path, data: bytes) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_model(agent: BaseAgent, manifest: dict[str, Any], path: str | Path) -> None:
    atomic_write(path, encode(agent, manifest))


def load_model(path: str | Path) -> tuple[BaseAgent, dict[str, Any]]:
    return decode(Path(path).read_bytes())
