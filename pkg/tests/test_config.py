import pytest

from dacal.config import Config, load_config, parse_override
from dacal.errors import ConfigurationError


def test_defaults():
    cfg = load_config(env={})
    assert (cfg.penalty.lam, cfg.penalty.eta, cfg.penalty.tau) == (10.0, 0.99, 0.05)
    assert (cfg.objective.gamma1, cfg.objective.gamma2) == (10000.0, 1000.0)
    assert cfg.trainer.epochs_per_stage == 20
    assert (cfg.blur.sigma, cfg.blur.radius) == (3.0, 9)
    assert cfg.critic.window == 3


def test_penalty_state_from_config():
    st = load_config(env={}).penalty.initial_state()
    assert (st.lam, st.avg, st.eta, st.tau) == (10.0, 0.0, 0.99, 0.05)


def test_round_trip(tmp_path):
    cfg = load_config(overrides=["trainer.lr_generator=3e-4", "run.seed=7", "data.synthetic=\"gamma\""], env={})
    path = tmp_path / "c.toml"
    cfg.save(path)
    again = load_config(path, env={})
    assert again.to_dict() == cfg.to_dict()
    assert again.dumps() == cfg.dumps()


def test_file_values(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("[penalty]\nlam = 5.0\n[trainer]\nmode = \"weakly_supervised\"\n")
    cfg = load_config(path, env={})
    assert cfg.penalty.lam == 5.0 and cfg.trainer.mode == "weakly_supervised"


@pytest.mark.parametrize("text", ["[trainer]\nlearning_rate = 1.0\n", "[nosuch]\nx = 1\n"])
def test_unknown_key_named(tmp_path, text):
    path = tmp_path / "c.toml"
    path.write_text(text)
    with pytest.raises(ConfigurationError, match="learning_rate|nosuch"):
        load_config(path, env={})


def test_unknown_override():
    with pytest.raises(ConfigurationError, match="trainer.nope"):
        load_config(overrides=["trainer.nope=1"], env={})


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "absent.toml", env={})


def test_bad_toml(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("[trainer\n")
    with pytest.raises(ConfigurationError):
        load_config(path, env={})


def test_override_precedence(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("[run]\nseed = 3\n")
    assert load_config(path, overrides=["run.seed=4"], env={}).run.seed == 4
    assert load_config(path, overrides=["run.seed=4"], env={"DACAL_SEED": "9"}).run.seed == 9


@pytest.mark.parametrize("override", ["trainer.mode=\"gan\"", "trainer.stage=4", "penalty.eta=1.5",
                                      "trainer.batch_size=1.5", "objective.gamma1=-1", "critic.slices=100"])
def test_invalid_values(override):
    with pytest.raises(ConfigurationError):
        load_config(overrides=[override], env={})


def test_video_single_scale():
    with pytest.raises(ConfigurationError):
        load_config(overrides=["trainer.mode=\"video\"", "trainer.stage=2"], env={})


def test_parse_override():
    assert parse_override("a.b=1") == ("a.b", 1)
    assert parse_override("a.b=[1, 2]") == ("a.b", [1, 2])
    assert parse_override("a.b=hello") == ("a.b", "hello")
    with pytest.raises(ConfigurationError):
        parse_override("a.b")


def test_set_requires_dotted():
    with pytest.raises(ConfigurationError):
        Config().set("seed", 1)


def test_toy_section():
    cfg = load_config(overrides=["toy.iterations=100"], env={})
    assert cfg.toy.iterations == 100
