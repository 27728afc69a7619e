import pytest

from dadkit.adversary import AttackConfig, Norm
from dadkit.config import (
    fingerprint,
    known_keys,
    load_config,
    parse_bool,
    parse_config,
    parse_float,
    parse_overrides,
    render,
)
from dadkit.discretizer import DiscretizerConfig
from dadkit.errors import ConfigError
from dadkit.objectives import DistillConfig, Objective
from dadkit.trainer import TrainConfig

ALLOWED = known_keys([DiscretizerConfig, AttackConfig, DistillConfig, TrainConfig])


def test_scalar_parsers():
    assert parse_float("8/255") == pytest.approx(8 / 255)
    assert parse_float(" 0.5 ") == 0.5
    assert parse_bool("Yes") is True
    assert parse_bool("off") is False
    with pytest.raises(ValueError):
        parse_bool("maybe")


def test_file_then_overrides(tmp_path):
    path = tmp_path / "run.env"
    path.write_text("# attack\nepsilon=8/255\nsteps=3\nnorm=l2\nobjective=dat-dad\n")
    values = load_config(path, parse_overrides(["steps=5"]), allowed=ALLOWED)
    attack = parse_config(AttackConfig, values)
    assert attack.steps == 5
    assert attack.norm is Norm.L2
    assert attack.epsilon == pytest.approx(8 / 255)
    assert parse_config(DistillConfig, values).objective is Objective.DAT_DAD


def test_prefixed_keys():
    cfg = parse_config(DiscretizerConfig, {"vq_codebook_size": "64", "codebook_size": "9"})
    assert cfg.codebook_size == 64


def test_unknown_key_and_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="bogus"):
        load_config(None, {"bogus": "1"}, allowed=ALLOWED)
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.env")


@pytest.mark.parametrize("values", [{"steps": "many"}, {"steps": "0"}, {"norm": "l7"}])
def test_bad_values(values):
    with pytest.raises(ConfigError):
        parse_config(AttackConfig, values)


def test_bad_override_syntax():
    with pytest.raises(ConfigError, match="key=value"):
        parse_overrides(["steps"])
    assert parse_overrides(["a = 1 ", "b=x=y"]) == {"a": "1", "b": "x=y"}


def test_render_round_trips_through_parse():
    cfg = TrainConfig(epochs=3, objective=DistillConfig(objective="kd"), attack=AttackConfig(steps=2))
    flat = render(cfg)
    assert flat["objective"] == "kd"
    assert flat["steps"] == "2"
    again = parse_config(
        TrainConfig, flat, objective=parse_config(DistillConfig, flat), attack=parse_config(AttackConfig, flat)
    )
    assert again == cfg
    assert fingerprint(again) == fingerprint(cfg)
    assert fingerprint(TrainConfig(epochs=4)) != fingerprint(TrainConfig(epochs=3))
