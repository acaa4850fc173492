from pathlib import Path

import pytest

from compressive.config import load_config, parse_config
from compressive.errors import ConfigError

BASE = """
[model]
n_layers = 1
d_model = 16
n_heads = 2
n_s = 8
n_m = 8
n_cm = 4
[compression]
variant = mean_pool
rate = 2
objective = attention
[schedule]
lr_max = 0.001
[data]
train = corpus.txt
[run]
seed = 7
"""


def test_parses_all_sections(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(BASE)
    cfg = load_config(path)
    assert cfg.model.d_model == 16 and cfg.model.compression.objective == "attention_reconstruction"
    assert cfg.schedule.lr_max == 0.001 and cfg.run.seed == 7
    assert cfg.data.train == str(tmp_path / "corpus.txt")
    echo = cfg.echo()
    assert echo["model"]["n_cm"] == 4 and echo["compression"]["rate"] == 2


@pytest.mark.parametrize("text,message", [
    (BASE.replace("seed = 7", "sede = 7"), "unknown key"),
    (BASE + "\n[extras]\nx = 1\n", "unknown section"),
    (BASE.replace("train = corpus.txt", ""), "[data] train"),
    (BASE.replace("n_heads = 2", "n_heads = two"), "not a valid int"),
    (BASE.replace("n_heads = 2", "n_heads = 3"), "divisible"),
    (BASE.replace("variant = mean_pool", "variant = zip"), "variant"),
    (BASE + "\n[run]\nprecision = half\n", "cannot parse"),
    (BASE.replace("[run]", "[run]\nprecision = half"), "precision"),
    ("not an ini", "cannot parse"),
])
def test_invalid_configs_are_rejected_before_compute(text, message):
    with pytest.raises(ConfigError, match=message.replace("[", r"\[").replace("]", r"\]")):
        parse_config(text)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "none.ini")


def test_shipped_example_config_is_valid():
    root = Path(__file__).resolve().parents[1]
    cfg = load_config(root / "configs" / "char_small.ini")
    assert cfg.model.n_cm == cfg.model.n_m and cfg.model.compression.rate == 3
    assert cfg.data.train == str(root / "data" / "shakespeare_train.txt")
