import dataclasses
import json

import pytest

from flowtpp import checkpoint
from flowtpp.cli import main
from flowtpp.ingest import TraceDataset, parse_trace, write_trace

TINY = ["-H", "4", "-K", "2", "--epochs", "1", "--window", "32"]


def run(*argv):
    return main([str(a) for a in argv])


def exit_code(*argv):
    # argparse failures exit through SystemExit, handled errors return a code
    try:
        return run(*argv)
    except SystemExit as exc:
        return exc.code


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run("fixture", "--days", "0.25", "--seed", "1", "--output", d / "real.csv") == 0
    assert run("train", "--data", d / "real.csv", "--output", d / "m.tpnt", *TINY) == 0
    return d


def test_fixture_and_train_outputs(work):
    ds = parse_trace(work / "real.csv")
    assert len(ds) > 100
    assert checkpoint.load(work / "m.tpnt").config.H == 4
    log = (work / "m.tpnt.log.csv").read_text().splitlines()
    assert log[0].startswith("# flowtpp")
    header = next(line for line in log if not line.startswith("#"))
    assert header == ("epoch,inter_arrival,src_ip,dst_ip,duration,protocol,dst_port,src_port,size,"
                      "total,wall_seconds")


def test_ingest_split(work, capsys):
    assert run("ingest", "--input", work / "real.csv", "--split", "0.8",
               "--train-out", work / "tr.csv", "--test-out", work / "te.csv") == 0
    a, b = parse_trace(work / "tr.csv"), parse_trace(work / "te.csv")
    assert len(a) + len(b) == len(parse_trace(work / "real.csv"))
    assert a[-1].timestamp <= b[0].timestamp
    assert exit_code("ingest", "--input", work / "real.csv") == 1
    assert exit_code("ingest", "--input", work / "nope.csv", "--output", work / "x.csv") == 2


def test_generate_event_count(work):
    out = work / "g100.csv"
    assert run("generate", "--checkpoint", work / "m.tpnt", "--events", 100, "--seed", 1, "--output", out) == 0
    assert len(parse_trace(out)) == 100
    head = out.read_text().splitlines()
    assert any(line.startswith("# checkpoint sha256 ") for line in head if line.startswith("#"))


def test_generate_duration(work):
    out = work / "gdur.csv"
    start = 1704067200.0
    assert run("generate", "--checkpoint", work / "m.tpnt", "--duration", 3600, "--start", start,
               "--output", out) == 0
    ds = parse_trace(out)
    assert len(ds) > 0 and ds[-1].timestamp <= start + 3600


def test_generate_needs_exactly_one_horizon(work):
    base = ["generate", "--checkpoint", work / "m.tpnt", "--output", work / "bad.csv"]
    assert exit_code(*base, "--events", 10, "--duration", 60) == 1
    assert exit_code(*base) == 1
    assert not (work / "bad.csv").exists()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_usage_and_nan(work):
    assert exit_code("train", "--output", work / "x.tpnt") == 1
    assert exit_code("train", "--data", work / "real.csv", "--output", work / "nan.tpnt",
                     *TINY, "--lr", "1e200") == 3
    assert not (work / "nan.tpnt").exists()
    assert (work / "nan.tpnt.log.csv.nonfinite.json").exists()


def test_train_deterministic(work):
    for name in ("d1", "d2"):
        assert run("train", "--data", work / "real.csv", "--output", work / f"{name}.tpnt", *TINY) == 0
    assert (work / "d1.tpnt").read_bytes() == (work / "d2.tpnt").read_bytes()


def test_evaluate_self(work, capsys):
    out = work / "rep"
    assert run("evaluate", work / "real.csv", work / "real.csv", "--output-dir", out, "--plots") == 0
    report = json.loads((out / "metrics.json").read_text())
    assert all(v == 0.0 for v in report["jsd"].values())
    assert all(v == 0.0 for v in report["emd"].values())
    assert report["pcd"] == 0.0 and report["cmd"] == 0.0
    for name in ("qq.svg", "hourly.svg", "weekday.svg", "host_pairs.svg", "qq_points.csv", "metrics.txt"):
        assert (out / name).exists()
    assert "jsd.src_ip" in capsys.readouterr().out


def test_evaluate_disjoint_ips(work):
    real = parse_trace(work / "real.csv")
    moved = TraceDataset(tuple(dataclasses.replace(r, src_ip="10.99." + r.src_ip.split(".", 2)[2])
                               for r in real))
    write_trace(moved, work / "moved.csv")
    assert run("evaluate", work / "real.csv", work / "moved.csv", "--output-dir", work / "rep2") == 0
    report = json.loads((work / "rep2" / "metrics.json").read_text())
    assert report["jsd"]["src_ip"] == pytest.approx(1.0, abs=1e-12)


def test_evaluate_schema_mismatch(work):
    real = parse_trace(work / "real.csv")
    flagged = TraceDataset(tuple(dataclasses.replace(r, tcp_flags="S") for r in real))
    write_trace(flagged, work / "flags.csv")
    assert exit_code("evaluate", work / "real.csv", work / "flags.csv", "--output-dir", work / "rep3",
                     "--strict-schema") == 2


def test_dkc(work, capsys):
    assert run("dkc", "--list-rules") == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 20 and lines[0].split()[0] == "1"
    assert run("dkc", work / "real.csv", "--output", work / "dkc.csv") == 0
    assert (work / "dkc.csv").exists()
    assert exit_code("dkc") == 1


def test_plot_and_gradcheck(work, capsys):
    assert run("plot", "--log", work / "m.tpnt.log.csv", "--output-dir", work / "pl") == 0
    assert (work / "pl" / "loss.svg").exists()
    assert exit_code("plot", "--output-dir", work / "pl") == 1
    capsys.readouterr()
    assert run("gradcheck", "--trials", 30) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["passed"] and res["max_relative_error"] < 1e-4
