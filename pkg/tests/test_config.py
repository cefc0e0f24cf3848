import pytest

from roverlab import config as cfgmod
from roverlab.config import (ConfigError, default_run_config, emit_config,
                             load_run_config, parse_config_text,
                             resolve_run_config, run_digest)
from roverlab.env import ObstacleKind

MINIMAL = """
master_seed = 7
output_dir = "runs/x"

[domain.farm]
g = 9.81
mu = 0.8
obstacle = "tree"
goal = "randomized"

[domain.lunar]
g = 1.62
mu = 0.45
obstacle = "rock"
goal = "fixed(6.0,6.0)"
"""


def resolve(text):
    data, lines = parse_config_text(text, source="test")
    return resolve_run_config(data, lines, source="test")


class TestParser:
    def test_tables_and_values(self):
        data, lines = parse_config_text(MINIMAL, "test")
        assert data["master_seed"] == 7
        assert data["domain"]["farm"]["g"] == 9.81
        assert data["domain"]["lunar"]["goal"] == "fixed(6.0,6.0)"
        assert lines["domain.farm.g"] == 6

    def test_comments_and_types(self):
        data, _ = parse_config_text(
            'a = 1  # comment\nb = -2.5e-3\nc = "x # y"\nd = true\ne = [1, 2.5]\n',
            "test")
        assert data == {"a": 1, "b": -2.5e-3, "c": "x # y", "d": True,
                        "e": [1, 2.5]}

    def test_array_of_tables(self):
        text = "[[terrain.sub_terrains]]\nproportion = 1.0\n" \
               "[[terrain.sub_terrains]]\nproportion = 0.0\n"
        data, lines = parse_config_text(text, "test")
        subs = data["terrain"]["sub_terrains"]
        assert [s["proportion"] for s in subs] == [1.0, 0.0]
        assert lines["terrain.sub_terrains#1.proportion"] == 4

    def test_duplicate_key_rejected_with_line(self):
        with pytest.raises(ConfigError, match="test:3.*duplicate"):
            parse_config_text("[ppo]\nlr = 1e-4\nlr = 2e-4\n", "test")

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError, match="test:1"):
            parse_config_text("a = nonsense\n", "test")

    def test_unterminated_string(self):
        with pytest.raises(ConfigError, match="unterminated"):
            parse_config_text('a = "oops\n', "test")


class TestResolution:
    def test_defaults_fill_in(self):
        run = resolve(MINIMAL)
        assert run.master_seed == 7
        assert run.profile == "desk"
        assert run.ppo.n_steps == 256
        assert run.terrain.size_x == 15.0
        assert run.geometry.track_width == 0.95
        assert run.domains["lunar"].goal_fixed == (6.0, 6.0)
        assert run.domains["farm"].goal_fixed is None
        assert run.domains["farm"].obstacle_kind is ObstacleKind.TREE_CYLINDER

    def test_paper_profile_expands(self):
        run = resolve('profile = "paper"\n')
        assert run.ppo.n_steps == 2048
        assert run.ppo.minibatch_size == 16384
        assert run.ppo.total_env_steps == 12_000_000
        assert run.ppo.max_iterations == 150

    def test_explicit_key_overrides_profile(self):
        run = resolve('profile = "paper"\n[ppo]\nn_steps = 64\nminibatch_size = 128\n')
        assert run.ppo.n_steps == 64
        assert run.ppo.minibatch_size == 128
        assert run.ppo.total_env_steps == 12_000_000

    def test_unknown_top_key_rejected(self):
        with pytest.raises(ConfigError, match="test:1.*unknown key.*mystery"):
            resolve("mystery = 1\n")

    def test_unknown_section_key_rejected_with_line(self):
        with pytest.raises(ConfigError, match="test:3.*unknown key.*ppo.learning_rate"):
            resolve("[ppo]\nlr = 1e-4\nlearning_rate = 1e-4\n")

    def test_unknown_table_rejected(self):
        with pytest.raises(ConfigError, match="unknown table"):
            resolve("[rewards]\nalive = 2\n")

    def test_type_mismatch_rejected(self):
        with pytest.raises(ConfigError, match="expected int"):
            resolve("[ppo]\nn_steps = 12.5\n")
        with pytest.raises(ConfigError, match="expected float"):
            resolve('[ppo]\nlr = "fast"\n')

    def test_bad_goal_rejected(self):
        with pytest.raises(ConfigError, match="randomized.*fixed"):
            resolve('[domain.farm]\ngoal = "somewhere"\n')

    def test_bad_profile_rejected(self):
        with pytest.raises(ConfigError, match="unknown profile"):
            resolve('profile = "gpu-farm"\n')

    def test_invalid_ppo_combination_rejected(self):
        with pytest.raises(ConfigError, match="must divide"):
            resolve("[ppo]\nn_steps = 10\nn_envs = 3\nminibatch_size = 7\n")

    def test_custom_domain_added(self):
        run = resolve('[domain.mars]\ng = 3.71\nmu = 0.6\nobstacle = "rock"\n')
        assert set(run.domains) == {"farm", "lunar", "mars"}
        assert run.domains["mars"].gravity == 3.71

    def test_terrain_sub_terrains_override(self):
        text = ("[terrain]\nseed = 3\n"
                "[[terrain.sub_terrains]]\n"
                "proportion = 1.0\nnoise_min = 0.05\nnoise_max = 0.05\n"
                "noise_step = 0.01\nborder_width = 0.0\n")
        run = resolve(text)
        assert len(run.terrain.sub_terrains) == 1
        assert run.terrain.seed == 3

    def test_domains_share_run_terrain(self):
        run = resolve("[terrain]\nseed = 99\n")
        assert run.domains["farm"].terrain.seed == 99
        assert run.domains["lunar"].terrain.seed == 99


class TestEmission:
    def test_round_trip(self):
        run = resolve(MINIMAL)
        text = emit_config(run)
        data, lines = parse_config_text(text, "emitted")
        again = resolve_run_config(data, lines, "emitted")
        assert again == run

    def test_default_config_round_trip(self):
        run = default_run_config("paper", master_seed=5)
        again_data = parse_config_text(emit_config(run), "emitted")
        again = resolve_run_config(*again_data, "emitted")
        assert again == run

    def test_digest_stable_and_sensitive(self):
        a = resolve(MINIMAL)
        b = resolve(MINIMAL)
        assert run_digest(a) == run_digest(b)
        c = resolve(MINIMAL.replace("master_seed = 7", "master_seed = 8"))
        assert run_digest(a) != run_digest(c)

    def test_load_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="no-such"):
            load_run_config(tmp_path / "no-such.toml")
