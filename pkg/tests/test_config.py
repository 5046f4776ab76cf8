import pytest

from flowtpp import __version__
from flowtpp.config import RunConfig
from flowtpp.model import TempoNetConfig


def test_defaults_match_model_config():
    cfg = RunConfig()
    assert cfg.model_config() == TempoNetConfig()
    assert cfg["generate"]["mode"] == "stochastic"


def test_file_then_overrides(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[model]\nH = 12\nlearning_rate = 3e-3\nstage_split = yes\n"
                   "embedding_dims = src_ip:3, dst_ip:4\n[evaluate]\nk = 7\n")
    cfg = RunConfig.from_file(ini)
    m = cfg.model_config()
    assert m.H == 12 and m.learning_rate == 3e-3 and m.stage_split is True
    assert m.embedding_dims["src_ip"] == 3 and m.embedding_dims["dst_ip"] == 4
    assert cfg["evaluate"]["k"] == 7
    # flags win over the file; None means "not given"
    cfg.update("model", {"H": 20, "K": None})
    assert cfg.model_config().H == 20 and cfg.model_config().K == TempoNetConfig().K
    assert cfg.model_config(H=5).H == 5


def test_rejects_unknown(tmp_path):
    with pytest.raises(ValueError):
        RunConfig().update("model", {"hidden": 3})
    with pytest.raises(ValueError):
        RunConfig().update("nosuch", {})
    ini = tmp_path / "bad.ini"
    ini.write_text("[model]\nstage_split = maybe\n")
    with pytest.raises(ValueError):
        RunConfig.from_file(ini)


def test_ini_round_trip_and_comments(tmp_path):
    cfg = RunConfig({"model": {"H": 9}, "dkc": {"dns_servers": "10.0.0.53"}})
    path = tmp_path / "out.ini"
    path.write_text(cfg.to_ini())
    back = RunConfig.from_file(path)
    assert back["model"]["H"] == 9 and back["dkc"]["dns_servers"] == "10.0.0.53"
    lines = cfg.comment_lines()
    assert lines[0] == f"flowtpp {__version__}"
    assert any(line.startswith("config [model]") and '"H": 9' in line for line in lines)
    assert cfg.as_dict()["version"] == __version__
