import pytest

from hw2mp.config import ConfigError, HyperParams, RunConfig, config_hash, parse_config, write_config


def test_empty_config_gives_defaults():
    cfg = parse_config()
    hp = cfg.hp
    assert (hp.lambda_char, hp.lambda_recons, hp.lambda1_w, hp.lambda1_c, hp.lambda2_w, hp.lambda2_c) == \
        (2, 100, 20, 20, 10, 10)
    assert (hp.lr, hp.M_w, hp.M_c, hp.r_c, hp.r_w, hp.n_critic) == (1e-4, 4, 4, 32, 128, 5)
    assert (hp.adam_beta1, hp.adam_beta2) == (0.0, 0.9)


def test_file_and_override_precedence(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# comment\nlambda_recons = 50\nseed = 3  # trailing\nvocab = ab, cd\n")
    cfg = parse_config(str(p))
    assert cfg.hp.lambda_recons == 50 and cfg.seed == 3 and cfg.vocab == ("ab", "cd")
    cfg = parse_config(str(p), {"lambda_recons": "7", "hidden_dims": "16,32"})
    assert cfg.hp.lambda_recons == 7 and cfg.hidden_dims == (16, 32)


def test_unknown_key_named():
    with pytest.raises(ConfigError, match="bogus"):
        parse_config(overrides={"bogus": "1"})


def test_type_mismatch():
    with pytest.raises(ConfigError, match="n_critic"):
        parse_config(overrides={"n_critic": "five"})


@pytest.mark.parametrize("key", ["lambda_char", "lambda_recons", "lambda1_w", "lambda2_c"])
def test_negative_lambda(key):
    with pytest.raises(ConfigError):
        parse_config(overrides={key: "-1"})


def test_invalid_choices():
    with pytest.raises(ConfigError):
        RunConfig(hwr_mode="both")
    with pytest.raises(ConfigError):
        RunConfig(device="cuda")
    with pytest.raises(ConfigError):
        parse_config(overrides={"missing_file": "x"})
    with pytest.raises(ConfigError):
        parse_config("/nonexistent/run.cfg")


def test_write_then_parse_round_trip(tmp_path):
    cfg = RunConfig(hp=HyperParams(lambda_char=3.5, n_critic=2), seed=9, vocab=("x", "yz"))
    write_config(cfg, tmp_path / "c.cfg")
    back = parse_config(str(tmp_path / "c.cfg"))
    assert back == cfg and config_hash(back) == config_hash(cfg)


def test_hash_changes_with_config():
    assert config_hash(RunConfig()) != config_hash(RunConfig(seed=1))
    assert len(config_hash(RunConfig())) == 12
