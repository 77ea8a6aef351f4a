import json
import struct
import zlib

import numpy as np
import pytest

from bdg.env import ChainEnv, EnvConfig, FeatureSpec, RewardSpec
from bdg.errors import BadMagic, ChecksumMismatch, TruncatedFile, VersionUnsupported
from bdg.modelio import MAGIC, atomic_write, created_at, decode, encode, load_model, save_model
from bdg.rl import DQNAgent, PPOAgent, QLearningAgent, TrainingTask

TASK = TrainingTask(ChainEnv, EnvConfig("chain", episode_cap=20), FeatureSpec.of(("position", 1.0, 0.0)), RewardSpec({"goal": 1.0}))
MANIFEST = {"fingerprint": "abc", "seed": 1}


@pytest.fixture(scope="module", params=["dqn", "ppo", "qtable"])
def agent(request):
    make = {
        "dqn": lambda: DQNAgent(hidden=(8, 8), budget=300, learning_starts=50, probe_interval=300),
        "ppo": lambda: PPOAgent(hidden=(8,), n_steps=64, budget=128, probe_interval=128),
        "qtable": lambda: QLearningAgent(budget=300, probe_interval=300),
    }[request.param]
    return make().fit(TASK)


def params_of(agent) -> list[np.ndarray]:
    if isinstance(agent, DQNAgent):
        return [agent.net_.flat]
    if isinstance(agent, PPOAgent):
        return [agent.policy_net_.flat, agent.value_net_.flat]
    return [np.array(sorted(agent.q_table_.values)).ravel(), np.concatenate([agent.q_table_.values[k] for k in sorted(agent.q_table_.values)])]


class TestRoundTrip:
    def test_bit_identical(self, agent, tmp_path):
        path = tmp_path / "m.bdgm"
        save_model(agent, MANIFEST, path)
        loaded, manifest = load_model(path)
        for a, b in zip(params_of(agent), params_of(loaded)):
            assert a.tobytes() == b.tobytes()
        assert manifest["fingerprint"] == "abc" and manifest["format_version"] == 1
        assert manifest["algorithm"] == agent.algorithm
        X = np.arange(4.0)[:, None]
        assert np.array_equal(agent.predict(X), loaded.predict(X))

    def test_encoding_is_deterministic(self, agent):
        assert encode(agent, MANIFEST) == encode(agent, MANIFEST)

    def test_layout(self, agent):
        data = encode(agent, MANIFEST)
        assert data[:8] == b"BDGMODL1"
        (mlen,) = struct.unpack_from("<I", data, 8)
        assert json.loads(data[12 : 12 + mlen])["fingerprint"] == "abc"
        assert struct.unpack("<I", data[-4:])[0] == zlib.crc32(data[:-4])

    def test_mlp_blob_is_layer_major_le_float64(self):
        agent = DQNAgent(hidden=(3,), budget=10, learning_starts=100, probe_interval=10).fit(TASK)
        data = encode(agent, {})
        (mlen,) = struct.unpack_from("<I", data, 8)
        blob = data[12 + mlen : -4]
        w0 = np.frombuffer(blob[: 8 * 3], dtype="<f8")
        assert np.array_equal(w0, agent.net_.weights[0].ravel())


class TestCorruption:
    @pytest.fixture
    def data(self, agent):
        return encode(agent, MANIFEST)

    def test_bad_magic(self, data):
        with pytest.raises(BadMagic):
            decode(b"XXXXXXXX" + data[8:])

    def test_short_garbage(self):
        with pytest.raises(BadMagic):
            decode(b"XY")

    def test_truncated_everywhere(self, data):
        for cut in (0, 4, 8, 10, 20, len(data) // 2, len(data) - 1):
            with pytest.raises(TruncatedFile):
                decode(data[:cut])

    def test_flipped_byte(self, data):
        broken = bytearray(data)
        broken[-10] ^= 0xFF
        with pytest.raises(ChecksumMismatch):
            decode(bytes(broken))

    def test_trailing_bytes(self, data):
        with pytest.raises(ChecksumMismatch):
            decode(data + b"\0")

    def test_future_version(self, agent):
        data = encode(agent, {"format_version": 2})
        with pytest.raises(VersionUnsupported):
            decode(data)


class TestFiles:
    def test_atomic_write_replaces(self, tmp_path):
        path = tmp_path / "sub" / "f.bin"
        atomic_write(path, b"one")
        atomic_write(path, b"two")
        assert path.read_bytes() == b"two"
        assert [p.name for p in path.parent.iterdir()] == ["f.bin"]

    def test_created_at_default_and_override(self, monkeypatch):
        monkeypatch.delenv("SOURCE_DATE_EPOCH", raising=False)
        assert created_at() == "1970-01-01T00:00:00Z"
        monkeypatch.setenv("SOURCE_DATE_EPOCH", "86400")
        assert created_at() == "1970-01-02T00:00:00Z"

    def test_magic_constant(self):
        assert MAGIC == b"BDGMODL1" and len(MAGIC) == 8
