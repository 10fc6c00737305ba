import json
import subprocess
import sys

import pytest

from bernoulli_gap import __version__
from bernoulli_gap.cli import main
from bernoulli_gap.config import OUTPUT_DIR_ENV, parse_int_list, replicate_seeds, resolve, UsageError


def run(args, capsys):
    code = main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


def rows(csv_text):
    lines = [l for l in csv_text.splitlines() if not l.startswith("#")]
    header = lines[0].split(",")
    return [dict(zip(header, l.split(","))) for l in lines[1:]]


def test_two_site_gap(capsys):
    code, out, _ = run(["gap-scan", "--d", "1", "--L", "2", "--N", "1", "--K", "0", "--workers", "1"], capsys)
    assert code == 0
    gap = [r for r in rows(out) if r["quantity"] == "gap"]
    assert float(gap[0]["value"]) == pytest.approx(4.0, rel=1e-10)
    assert out.splitlines()[4] == "d,L,N,K,seed,quantity,value,method,residual"


def test_output_echoes_config_and_version(capsys):
    _, out, _ = run(["gap-scan", "--L", "2", "--workers", "1"], capsys)
    header = out.splitlines()
    assert header[0].startswith("# generated:")
    assert header[1] == f"# version: bernoulli_gap {__version__}"
    echo = json.loads(header[2][len("# config: "):])
    assert echo["band_ratio"] == 3.0 and echo["command"] == "gap-scan"
    assert header[3] == "# pair convention: unordered"


def test_band_scan_passes(capsys):
    code, out, err = run(["gap-scan", "--d", "1", "--L", "4..14", "--K", "0", "--workers", "1"], capsys)
    assert code == 0
    ratio = [r for r in rows(out) if r["quantity"] == "band_ratio"]
    assert float(ratio[0]["value"]) <= 3


@pytest.mark.parametrize("args", [["gap-scan", "--L", "0"], ["gap-scan", "--L", "4..2"], ["gap-scan", "--K", "-1"],
                                  ["kmc", "--check-equilibrium", "--L", "6", "--N", "0"]])
def test_usage_errors(args, capsys):
    code, _, err = run(args + ["--workers", "1"], capsys)
    assert code == 2
    assert "invalid value for" in err or "frozen" in err.lower()


def test_usage_error_names_field(capsys):
    code, _, err = run(["gap-scan", "--L", "0", "--workers", "1"], capsys)
    assert code == 2 and "'L'" in err


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"bogus": 1}))
    code, _, err = run(["congestion", "--config", str(cfg)], capsys)
    assert code == 2 and "bogus" in err


def test_precedence(tmp_path):
    cfg = {"gap-scan": {"L": "4..6", "band_ratio": 5.0}, "seed": 3}
    out = resolve("gap-scan", cfg, {"L": "8", "band_ratio": None})
    assert out["L"] == "8" and out["band_ratio"] == 5.0 and out["seed"] == 3
    assert resolve("gap-scan", {}, {})["band_ratio"] == 3.0


def test_list_parsing():
    assert parse_int_list("4..12/2", "L") == [4, 6, 8, 10, 12]
    assert parse_int_list("8,16,32", "L") == [8, 16, 32]
    assert parse_int_list(6, "L") == [6]
    with pytest.raises(UsageError):
        parse_int_list("a..b", "L")


def test_replicate_seeds_are_stable():
    assert replicate_seeds(0, 5) == replicate_seeds(0, 5)
    assert len(set(replicate_seeds(0, 20))) == 20


def test_byte_identical_reruns(tmp_path, capsys):
    outs = []
    path = tmp_path / "run.csv"
    for _ in range(2):
        code, _, _ = run(["kmc", "--check-equilibrium", "--L", "4", "--N", "2", "--K", "1", "--events", "2e5",
                          "--seed", "11", "--workers", "1", "--output", str(path)], capsys)
        assert code == 0
        outs.append(path.read_text().splitlines()[1:])
    assert outs[0] == outs[1]


def test_json_output(capsys):
    code, out, _ = run(["congestion", "--L", "2..8", "--format", "json"], capsys)
    data = json.loads(out)
    assert code == 0 and data["passed"] and data["version"] == __version__
    assert data["config"]["L"] == "2..8"
    assert {r["quantity"] for r in data["rows"]} >= {"max_congestion"}


def test_output_directory_from_environment(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path))
    code, out, _ = run(["congestion", "--L", "2..6"], capsys)
    assert code == 0 and out == ""
    files = list(tmp_path.iterdir())
    assert len(files) == 1 and files[0].read_text().startswith("# generated:")


def test_verify_lemmas(capsys):
    code, _, err = run(["verify", "--lemma", "2", "--k", "2..6", "--K", "0", "--workers", "1"], capsys)
    assert code == 0 and "pass" in err
    code, _, err = run(["verify", "--lemma", "1", "--L", "4..6", "--K", "1", "--seeds", "3", "--workers", "1"],
                       capsys)
    assert code == 0 and "slack" in err


def test_verify_theorem1(capsys):
    code, out, _ = run(["verify", "--thm", "1", "--sizes", "4..8/2", "--K", "0", "--workers", "1"], capsys)
    assert code == 0
    values = [float(r["value"]) for r in rows(out) if r["quantity"] == "C_emp"]
    assert values and all(v == pytest.approx(0.5, rel=1e-9) for v in values)


def test_failing_certificate_exits_one(capsys):
    code, _, _ = run(["gap-scan", "--L", "2..10", "--band-ratio", "1.01", "--workers", "1"], capsys)
    assert code == 1


def test_nonconvergence_exit_code(monkeypatch, capsys):
    from bernoulli_gap import cli
    from bernoulli_gap.spectra import NonConvergenceError

    def boom(cfg):
        raise NonConvergenceError("no luck", residual=1.0)

    monkeypatch.setitem(cli.COMMANDS, "congestion", boom)
    code, _, err = run(["congestion"], capsys)
    assert code == 3 and "nonconvergence" in err


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "bernoulli_gap", "congestion", "--L", "4"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "max_congestion" in proc.stdout


def test_verify_theorem3(capsys):
    code, out, err = run(["verify", "--thm", "3", "--L", "4..8", "--workers", "1"], capsys)
    assert code == 0 and "band ratio" in err
    assert any(r["quantity"] == "gap*L^2" for r in rows(out))
