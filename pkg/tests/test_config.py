import pytest

from dualprop.config import ConfigError, PipelineConfig, load_config, parse_config


def test_defaults():
    c = PipelineConfig()
    assert (c.epsilon, c.local_length, c.num_blocks, c.window, c.kv_stride) == (5.0, 10, 8, (5, 9), 2)
    assert c.mode == "propagation-only"


def test_text_round_trip(tmp_path):
    c = PipelineConfig(epsilon=2.5, window=(3, 4), expand=False, mode="weighted")
    p = tmp_path / "c.cfg"
    p.write_text(c.to_text())
    assert load_config(p) == c


def test_parse_comments_and_dashes():
    c = parse_config("# header\nlocal-length = 6  # trailing\n\nglobal_tokens = no\n")
    assert c.local_length == 6 and c.global_tokens is False


@pytest.mark.parametrize("text", ["bogus = 1", "epsilon", "epsilon = x", "mode = fast",
                                  "window = 5", "heads = 3", "local_length = 1", "expand = maybe",
                                  "epsilon = -1", "channels = 63"])
def test_parse_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_overrides_and_missing_file(tmp_path):
    c = PipelineConfig().with_overrides(epsilon=1.0, mode=None)
    assert c.epsilon == 1.0 and c.mode == "propagation-only"
    with pytest.raises(ConfigError):
        load_config(tmp_path / "none.cfg")
