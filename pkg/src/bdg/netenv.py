"""Environment contract over newline-delimited JSON on TCP.

One JSON object per line, UTF-8, ``"t"`` is the message type.  The client
(the framework) drives the clock: every request gets exactly one reply and
nothing is pipelined::

    -> {"t":"hello","v":1}
    <- {"t":"hello_ack","v":1,"actions":2,"channels":["bird_y", ...]}
    -> {"t":"reset","config":{"parameters":{...}},"seed":7}
    <- {"t":"obs","obs":{"bird_y":256.0, ...}}
    -> {"t":"step","action":1}
    <- {"t":"transition","obs":{...},"events":["pipe_passed"],"done":false,"tick":1}
    -> {"t":"bye"}
    <- {"t":"bye"}

Errors come back as ``{"t":"error","message":...,"code":...}`` and leave the
connection open.  Rewards never cross the wire.
"""

from __future__ import annotations

import json
import logging
import select
import socket
import socketserver
import threading
from typing import Any, Callable

from .env import Env, EnvConfig, Observation, Transition
from .errors import (
    BdgError,
    ConnectTimeout,
    EnvError,
    MalformedReply,
    ProtocolViolation,
    RemoteError,
    RequestTimeout,
    VersionMismatch,
)

PROTOCOL_VERSION = 1
MAX_MESSAGE = 1 << 20
DEFAULT_TIMEOUT_MS = 5000

log = logging.getLogger("bdg.netenv")


def encode(msg: dict[str, Any]) -> bytes:
    line = json.dumps(msg, separators=(",", ":"), ensure_ascii=False).encode("utf-8") + b"\n"
    if len(line) > MAX_MESSAGE:
        raise ValueError("message exceeds 1 MiB")
    return line


class LineReader:
    """Splits a socket's byte stream into lines, bounded by ``MAX_MESSAGE``."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.buf = bytearray()

    def readline(self) -> bytes | None:
        while True:
            nl = self.buf.find(b"\n")
            if nl >= 0:
                line = bytes(self.buf[:nl])
                del self.buf[: nl + 1]
                return line
            if len(self.buf) > MAX_MESSAGE:
                raise ValueError("message exceeds 1 MiB")
            chunk = self.sock.recv(65536)
            if not chunk:
                return None
            self.buf.extend(chunk)

    def pending(self) -> bool:
        """True if unread bytes are buffered or already waiting on the socket."""
        if self.buf:
            return True
        ready, _, _ = select.select([self.sock], [], [], 0)
        if not ready:
            return False
        try:
            peeked = self.sock.recv(1, socket.MSG_PEEK)
        except OSError:
            return False
        return bool(peeked)


# --- server -----------------------------------------------------------------


def _error(message: str, code: str = "Error") -> dict[str, Any]:
    return {"t": "error", "message": message, "code": code}


class EnvSession:
    """Server-side state for one connection."""

    def __init__(self, env: Env):
        self.env = env
        self.greeted = False
        self.has_episode = False

    def handle(self, msg: Any) -> dict[str, Any]:
        if not isinstance(msg, dict) or not isinstance(msg.get("t"), str):
            return _error("message must be a JSON object with a string field 't'", "BadRequest")
        kind = msg["t"]
        if kind == "hello":
            if msg.get("v") != PROTOCOL_VERSION:
                return _error(f"unsupported protocol version {msg.get('v')!r}", "VersionMismatch")
            self.greeted = True
            return {"t": "hello_ack", "v": PROTOCOL_VERSION, "actions": self.env.n_actions, "channels": list(self.env.channels)}
        if kind == "bye":
            return {"t": "bye"}
        if kind not in ("reset", "step"):
            return _error(f"unknown message type {kind!r}", "UnknownType")
        if not self.greeted:
            return _error("handshake required before reset/step", "NoHandshake")
        try:
            if kind == "reset":
                return self._reset(msg)
            return self._step(msg)
        except EnvError as exc:
            return _error(str(exc), type(exc).__name__)

    def _reset(self, msg: dict[str, Any]) -> dict[str, Any]:
        raw = msg.get("config", {})
        seed = msg.get("seed", 0)
        if not isinstance(raw, dict) or isinstance(seed, bool) or not isinstance(seed, int):
            return _error("reset needs an object 'config' and an integer 'seed'", "BadRequest")
        env_id = raw.get("env_id", self.env.env_id)
        params = raw.get("parameters", {})
        if not isinstance(params, dict):
            return _error("config.parameters must be an object", "BadRequest")
        config = EnvConfig(env_id, params, raw.get("episode_cap"))
        obs = self.env.reset(config, seed)
        self.has_episode = True
        return {"t": "obs", "obs": obs}

    def _step(self, msg: dict[str, Any]) -> dict[str, Any]:
        if not self.has_episode:
            return _error("reset required before step", "NoEpisode")
        action = msg.get("action")
        tr = self.env.step(action)  # type: ignore[arg-type]
        return {"t": "transition", "obs": tr.obs, "events": list(tr.events), "done": tr.done, "tick": tr.tick}


class _Handler(socketserver.BaseRequestHandler):
    server: "EnvServer"

    def handle(self) -> None:
        session = EnvSession(self.server.env_factory())
        reader = LineReader(self.request)
        while True:
            try:
                line = reader.readline()
            except (ValueError, OSError) as exc:
                try:
                    self.request.sendall(encode(_error(str(exc), "TooLarge")))
                except OSError:
                    pass
                return
            if line is None:
                return
            try:
                msg = json.loads(line.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                reply = _error(f"malformed JSON: {exc}", "BadRequest")
            else:
                try:
                    reply = session.handle(msg)
                except Exception as exc:  # keep serving; report the fault
                    log.exception("handler failure")
                    reply = _error(f"internal error: {exc}", "Internal")
            try:
                self.request.sendall(encode(reply))
            except OSError:
                return
            if reply["t"] == "bye":
                return


class EnvServer(socketserver.ThreadingTCPServer):
    """Reference server: one environment instance per connection."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, env_factory: Callable[[], Env], host: str = "127.0.0.1", port: int = 0):
        self.env_factory = env_factory
        super().__init__((host, port), _Handler)

    @property
    def address(self) -> tuple[str, int]:
        host, port = self.server_address[:2]
        return str(host), int(port)

    def start(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, name="bdg-env-server", daemon=True)
        thread.start()
        return thread


# --- client -----------------------------------------------------------------


class RemoteEnv:
    """Client adapter with the same ``reset``/``step`` surface as :class:`Env`."""

    def __init__(self, sock: socket.socket, address: tuple[str, int], env_id: str, timeout_ms: int):
        self.sock = sock
        self.address = address
        self.env_id = env_id
        self.timeout_ms = timeout_ms
        self.reader = LineReader(sock)
        self.version = 0
        self.n_actions = 0
        self.channels: tuple[str, ...] = ()
        self.done = True
        self.broken = False

    def _request(self, msg: dict[str, Any], expect: str, timeout_cls: type[BdgError] = RequestTimeout) -> dict[str, Any]:
        if self.broken:
            raise ProtocolViolation("session is unusable after an earlier failure")
        try:
            if self.reader.pending():
                raise ProtocolViolation("unsolicited data from server (reply without request)")
            self.sock.sendall(encode(msg))
            line = self.reader.readline()
        except socket.timeout:
            self.close()
            raise timeout_cls(f"no reply to {msg['t']!r} within {self.timeout_ms} ms") from None
        except ProtocolViolation:
            self.close()
            raise
        except (OSError, ValueError) as exc:
            self.close()
            raise MalformedReply(f"connection failed: {exc}") from None
        if line is None:
            self.close()
            raise MalformedReply("server closed the connection")
        try:
            reply = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            self.close()
            raise MalformedReply(f"reply is not JSON: {exc}") from None
        if not isinstance(reply, dict) or "t" not in reply:
            self.close()
            raise MalformedReply(f"reply lacks a 't' field: {line[:200]!r}")
        if self.reader.buf:
            self.close()
            raise ProtocolViolation(f"more than one reply to {msg['t']!r}")
        if reply["t"] == "error":
            err = RemoteError(str(reply.get("message", "remote error")))
            err.code = reply.get("code")  # type: ignore[attr-defined]
            raise err
        if reply["t"] != expect:
            self.close()
            raise ProtocolViolation(f"expected {expect!r} reply to {msg['t']!r}, got {reply['t']!r}")
        return reply

    def _obs(self, raw: Any) -> Observation:
        if not isinstance(raw, dict):
            raise MalformedReply("obs must be an object")
        out: Observation = {}
        for name in self.channels:
            if name not in raw:
                raise MalformedReply(f"reply is missing declared channel {name!r}")
            value = raw[name]
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise MalformedReply(f"channel {name!r} is not a number")
            out[name] = value
        return out

    def reset(self, config: EnvConfig, seed: int = 0) -> Observation:
        payload = {"parameters": dict(config.parameters)}
        if config.env_id:
            payload["env_id"] = config.env_id
        if config.episode_cap is not None:
            payload["episode_cap"] = config.episode_cap
        reply = self._request({"t": "reset", "config": payload, "seed": seed}, "obs")
        obs = self._obs(reply.get("obs"))
        self.done = False
        return obs

    def step(self, action: int) -> Transition:
        reply = self._request({"t": "step", "action": int(action)}, "transition")
        events = reply.get("events", [])
        done, tick = reply.get("done"), reply.get("tick")
        if not isinstance(events, list) or not all(isinstance(e, str) for e in events):
            raise MalformedReply("events must be a list of strings")
        if not isinstance(done, bool) or isinstance(tick, bool) or not isinstance(tick, int):
            raise MalformedReply("transition needs boolean 'done' and integer 'tick'")
        self.done = done
        return Transition(self._obs(reply.get("obs")), tuple(events), done, tick)

    def close(self) -> None:
        self.broken = True
        try:
            self.sock.close()
        except OSError:
            pass

    def bye(self) -> None:
        if not self.broken:
            try:
                self._request({"t": "bye"}, "bye")
            finally:
                self.close()

    def __enter__(self) -> "RemoteEnv":
        return self

    def __exit__(self, *exc: Any) -> None:
        if exc[0] is None:
            self.bye()
        else:
            self.close()


RemoteEnvSession = RemoteEnv


def handshake(address: tuple[str, int], timeout_ms: int = DEFAULT_TIMEOUT_MS, env_id: str = "") -> RemoteEnv:
    """Connect and negotiate; the returned session is ready for ``reset``."""
    try:
        sock = socket.create_connection(address, timeout=timeout_ms / 1000)
    except socket.timeout:
        raise ConnectTimeout(f"could not connect to {address} within {timeout_ms} ms") from None
    sock.settimeout(timeout_ms / 1000)
    session = RemoteEnv(sock, address, env_id, timeout_ms)
    try:
        reply = session._request({"t": "hello", "v": PROTOCOL_VERSION}, "hello_ack", ConnectTimeout)
    except RemoteError as exc:
        session.close()
        if getattr(exc, "code", None) == "VersionMismatch":
            raise VersionMismatch(str(exc)) from None
        raise
    if reply.get("v") != PROTOCOL_VERSION:
        session.close()
        raise VersionMismatch(f"server speaks protocol v{reply.get('v')}, client speaks v{PROTOCOL_VERSION}")
    actions, channels = reply.get("actions"), reply.get("channels")
    if isinstance(actions, bool) or not isinstance(actions, int) or actions < 2:
        session.close()
        raise MalformedReply(f"hello_ack has bad 'actions': {actions!r}")
    if not isinstance(channels, list) or not all(isinstance(c, str) for c in channels):
        session.close()
        raise MalformedReply("hello_ack 'channels' must be a list of strings")
    session.version = PROTOCOL_VERSION
    session.n_actions = actions
    session.channels = tuple(channels)
    return session


def serve(env_factory: Callable[[], Env], host: str = "127.0.0.1", port: int = 7777) -> None:
    with EnvServer(env_factory, host, port) as server:
        log.info("serving %s on %s:%d", env_factory, *server.address)
        server.serve_forever()
