import pytest

from capspoe.config import ConfigError, RunConfig, load_config, parse_config


def test_defaults_are_valid():
    cfg = RunConfig().validate()
    assert cfg.capsules.routing_iterations == 3
    assert cfg.generate.samples_per_capsule == 4
    assert cfg.capsules.capsules == 20


def test_round_trip_is_lossless(tmp_path):
    cfg = parse_config("[autoencoder]\nlr = 0.0123\n[run]\nseed = 9\n")
    path = cfg.save(tmp_path / "c.ini")
    again = load_config(path)
    assert again == cfg
    assert again.to_text() == cfg.to_text()


@pytest.mark.parametrize("text", [
    "[nope]\nx = 1\n",
    "[run]\ncolour = red\n",
    "[run]\nseed = many\n",
    "[run]\nseed = -1\n",
    "[data]\nname = svhn\n",
    "[autoencoder]\ndropout = 1.0\n",
    "[autoencoder]\nchannels = 12\n",
    "[capsules]\nrouting_iterations = 0\n",
    "[generate]\nsamples_per_capsule = 0\n",
    "[diagram]\nsample_index = -2\n",
    "not an ini file",
])
def test_rejects(text):
    with pytest.raises(ConfigError):
        parse_config(text)
