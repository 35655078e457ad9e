import pytest

from dptext.config import AppConfig, load_app_config
from dptext.errors import ConfigError


FULL_CONFIG = """
[paths]
vocab = v.txt
embeddings = e.txt
merges = m.txt
runs_dir = my-runs

[mechanism]
kind = topk
epsilon_em = 2.5
epsilon_lap = 1.5
laplace_sensitivity = 3.0
scoring_mode = paper-final
top_k = 40

[remote]
base_url = https://api.example/v1/chat
model_name = big-model
temperature = 0.7
max_output_tokens = 150
api_key_env_var = MY_KEY
timeout_s = 12
max_concurrent = 2

[restore]
base_url = http://localhost:8000/v1/chat
model_name = small-model

[attack]
k = 250
chunk_size = 32

[run]
seed = 99
n_docs = 4
"""


class TestLoadAppConfig:
    def test_defaults_without_file(self):
        cfg = load_app_config(None)
        assert cfg.mechanism.kind == "rantext"
        assert cfg.attack_k == 250
        assert cfg.seed is None

    def test_full_file(self, tmp_path):
        path = tmp_path / "cfg.ini"
        path.write_text(FULL_CONFIG)
        cfg = load_app_config(path)
        assert cfg.vocab_path == "v.txt"
        assert cfg.runs_dir == "my-runs"
        assert cfg.mechanism.kind == "topk"
        assert cfg.mechanism.epsilon_em == 2.5
        assert cfg.mechanism.epsilon_lap == 1.5
        assert cfg.mechanism.laplace_sensitivity == 3.0
        assert cfg.mechanism.scoring_mode == "paper-final"
        assert cfg.mechanism.top_k == 40
        assert cfg.remote.base_url == "https://api.example/v1/chat"
        assert cfg.remote.temperature == 0.7
        assert cfg.remote.api_key_env_var == "MY_KEY"
        assert cfg.remote.max_concurrent == 2
        assert cfg.restore.model_name == "small-model"
        # restoration endpoints default to greedy decoding
        assert cfg.restore.temperature == 0.0
        assert cfg.attack_k == 250
        assert cfg.attack_chunk_size == 32
        assert cfg.seed == 99
        assert cfg.n_docs == 4

    def test_remote_defaults_to_sampling_temperature(self, tmp_path):
        path = tmp_path / "cfg.ini"
        path.write_text("[remote]\nbase_url = https://x/api\nmodel_name = m\n")
        cfg = load_app_config(path)
        assert cfg.remote.temperature == 0.5

    def test_zero_epsilon_survives_parsing(self, tmp_path):
        path = tmp_path / "cfg.ini"
        path.write_text("[mechanism]\nepsilon_em = 0.0\nepsilon_lap = 1.0\n")
        cfg = load_app_config(path)
        assert cfg.mechanism.epsilon_em == 0.0

    def test_missing_file_is_config_error(self):
        with pytest.raises(ConfigError, match="not found"):
            load_app_config("/nonexistent/cfg.ini")

    def test_invalid_number_is_config_error(self, tmp_path):
        path = tmp_path / "cfg.ini"
        path.write_text("[mechanism]\nepsilon_em = lots\n")
        with pytest.raises(ConfigError, match="epsilon_em"):
            load_app_config(path)

    def test_invalid_mechanism_value_is_config_error(self, tmp_path):
        path = tmp_path / "cfg.ini"
        path.write_text("[mechanism]\nkind = quantum\n")
        with pytest.raises(ConfigError):
            load_app_config(path)

    def test_inline_comments_ignored(self, tmp_path):
        path = tmp_path / "cfg.ini"
        path.write_text("[run]\nseed = 5  # fixed for the demo\n")
        assert load_app_config(path).seed == 5


class TestAppConfig:
    def test_resolved_seed_is_sticky(self):
        cfg = AppConfig()
        first = cfg.resolved_seed()
        assert cfg.resolved_seed() == first
        assert 0 <= first < 2**63

    def test_configured_seed_returned(self):
        cfg = AppConfig(seed=123)
        assert cfg.resolved_seed() == 123

    def test_require_paths_messages(self, tmp_path):
        cfg = AppConfig()
        with pytest.raises(ConfigError, match="no vocab file configured"):
            cfg.require_paths("vocab")
        cfg.vocab_path = str(tmp_path / "missing.txt")
        with pytest.raises(ConfigError, match="not found"):
            cfg.require_paths("vocab")
