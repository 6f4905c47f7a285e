import json
import subprocess
import sys

import pytest

from dcmc.cli import EXIT_BUDGET, EXIT_FAIL, EXIT_OK, EXIT_USAGE, bench_rows, main
from dcmc.twophase import CandidateImpl, SpecReport, initial_candidate

EXAMPLE = "step { j: broadcast(y) }\nstep { i: x := j.y }\n"


def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def example_file(tmp_path):
    path = tmp_path / "example.dcp"
    path.write_text(EXAMPLE)
    return path


# check --------------------------------------------------------------------


def test_check_example_passes(capsys, example_file):
    code, out, _ = run_cli(capsys, "check", str(example_file), "--free", "j.y", "--assert", "K[i] j.y | K[i] !j.y")
    assert code == EXIT_OK and "PASS" in out


def test_check_reports_failure(capsys, example_file):
    code, out, _ = run_cli(capsys, "check", str(example_file), "--free", "j.y", "--assert", "K[i] j.y")
    assert code == EXIT_FAIL and "FAIL" in out


def test_check_not_enabled_is_a_usage_error(capsys, tmp_path):
    path = tmp_path / "bad.dcp"
    path.write_text("step { i: x := j.y }\n")
    code, _, err = run_cli(capsys, "check", str(path), "--free", "j.y")
    assert code == EXIT_USAGE and "condition 2" in err


def test_check_malformed_file(capsys, tmp_path):
    path = tmp_path / "bad.dcp"
    path.write_text("step { i: x := }\n")
    assert run_cli(capsys, "check", str(path))[0] == EXIT_USAGE
    assert run_cli(capsys, "check", str(tmp_path / "missing.dcp"))[0] == EXIT_USAGE


def test_check_structure_dump_round_trip(capsys, example_file, tmp_path):
    dump = tmp_path / "m.json"
    assert run_cli(capsys, "check", str(example_file), "--free", "j.y", "--dump", str(dump))[0] == EXIT_OK
    empty = tmp_path / "empty.dcp"
    empty.write_text('checkpoint "c" assert K[i] j.y | K[i] !j.y\n')
    assert run_cli(capsys, "check", str(empty), "--structure", str(dump))[0] == EXIT_OK


def test_check_world_limit(capsys, tmp_path):
    path = tmp_path / "grow.dcp"
    path.write_text("step { i: rand(a) ; j: rand(b) }\nstep { i: rand(c) }\n")
    assert run_cli(capsys, "check", str(path), "--max-worlds", "4")[0] == EXIT_BUDGET


# dc and bisim -------------------------------------------------------------


def test_dc_ring3(capsys):
    code, out, _ = run_cli(capsys, "dc", "--graph", "ring:3")
    assert code == EXIT_OK and "anonymity[1]: PASS" in out


@pytest.mark.parametrize("mode", ["concrete", "abstract"])
def test_dc_payer_json(capsys, mode):
    code, out, _ = run_cli(capsys, "dc", "--graph", "ring:4", "--messages", "payer", "--mode", mode, "--json")
    data = json.loads(out)
    assert code == EXIT_OK and data["passed"] and all(data["results"].values())


def test_dc_broken_key_loses_anonymity(capsys):
    code, out, _ = run_cli(capsys, "dc", "--graph", "ring:3", "--unshared", "0")
    assert code == EXIT_FAIL and "FAIL" in out


@pytest.mark.parametrize("graph", ["ring:3", "ring:4"])
def test_bisim_ring(capsys, graph):
    code, out, _ = run_cli(capsys, "bisim", "--graph", graph)
    assert code == EXIT_OK and out.strip().endswith("bisimilar") and "not bisimilar" not in out


def test_bisim_broken(capsys):
    code, out, _ = run_cli(capsys, "bisim", "--graph", "ring:3", "--unshared", "0", "--json")
    data = json.loads(out)
    assert code == EXIT_FAIL and not data["bisimilar"]
    assert data["unmatched"]["concrete"] is not None or data["unmatched"]["abstract"] is not None


def test_bisim_pairs(capsys):
    data = json.loads(run_cli(capsys, "bisim", "--graph", "ring:3", "--json", "--pairs")[1])
    assert len(data["pairs"]) == data["size"] and data["verified"]


def test_bad_graph(capsys):
    assert run_cli(capsys, "bisim", "--graph", "star:3")[0] == EXIT_USAGE


# twophase -----------------------------------------------------------------


def test_twophase_final_selected_specs(capsys):
    code, out, _ = run_cli(capsys, "twophase", "--n", "3", "--spec", "1,2,4,cf,3s")
    assert code == EXIT_OK
    for s in ("1", "2a", "2b", "4", "cf", "3s"):
        assert f"spec {s}: PASS" in out


def test_twophase_final_all_specs_reports_spec3(capsys):
    code, out, _ = run_cli(capsys, "twophase", "--n", "3")
    assert code == EXIT_FAIL and "spec 3: FAIL" in out and "spec 1: PASS" in out


def test_twophase_initial_fails_with_witness(capsys):
    code, out, _ = run_cli(capsys, "twophase", "--n", "3", "--candidate", "initial", "--spec", "1")
    assert code == EXIT_FAIL and "spec 1: FAIL" in out and "refuted" in out


def test_twophase_json_round_trip(capsys):
    code, out, _ = run_cli(capsys, "twophase", "--n", "3", "--candidate", "initial", "--spec", "1,4", "--json")
    report = SpecReport.from_json(out)
    assert json.loads(report.to_json()) == json.loads(out)
    assert report.verdicts() == {"1": False, "4": True}


def test_twophase_candidate_file(capsys, tmp_path):
    path = tmp_path / "cand.json"
    initial_candidate(3).save(path)
    assert CandidateImpl.load(path).kc == ["false"] * 3
    code, out, _ = run_cli(capsys, "twophase", "--candidate", f"file:{path}", "--spec", "4")
    assert code == EXIT_OK


def test_twophase_modes_agree(capsys):
    outs = {}
    for mode in ("concrete", "abstract"):
        code, out, _ = run_cli(capsys, "twophase", "--n", "3", "--mode", mode, "--rounds", "2", "--json")
        outs[mode] = json.loads(out)
        assert code == EXIT_OK
    verdict = {m: [e["holds"] for e in d["entries"]] for m, d in outs.items()}
    assert verdict["concrete"] == verdict["abstract"]


def test_twophase_usage_errors(capsys):
    assert run_cli(capsys, "twophase", "--rounds", "9")[0] == EXIT_USAGE
    assert run_cli(capsys, "twophase", "--spec", "7")[0] == EXIT_USAGE
    assert run_cli(capsys, "twophase", "--jobs", "0")[0] == EXIT_USAGE
    assert run_cli(capsys, "frobnicate")[0] == EXIT_USAGE


def test_twophase_world_limit(capsys):
    code, _, err = run_cli(capsys, "twophase", "--mode", "concrete", "--max-worlds", "5000")
    assert code == EXIT_BUDGET and "resource" in err


def test_twophase_time_budget(capsys):
    code, _, _ = run_cli(capsys, "twophase", "--mode", "concrete", "--rounds", "4", "--budget", "0")
    assert code == EXIT_BUDGET


def test_jobs_do_not_change_output(capsys):
    a = json.loads(run_cli(capsys, "twophase", "--spec", "1,4", "--json", "--jobs", "1")[1])
    b = json.loads(run_cli(capsys, "twophase", "--spec", "1,4", "--json", "--jobs", "3")[1])
    a.pop("timings"), b.pop("timings")
    assert a == b


# bench --------------------------------------------------------------------


def test_bench_table(capsys):
    code, out, _ = run_cli(capsys, "bench", "--n", "3", "--rounds", "2")
    assert code == EXIT_OK and "growth law holds" in out and "verdicts agree" in out


def test_bench_rows_growth_law():
    rows = bench_rows(3, 2)
    assert [r["abstract"]["worlds"] for r in rows] == [512, 512]
    assert [r["concrete"]["worlds"] for r in rows] == [512 * 8, 512 * 64]


def test_bench_budget_marks_rows(capsys):
    code, out, _ = run_cli(capsys, "bench", "--n", "3", "--rounds", "2", "--budget", "0", "--json")
    data = json.loads(out)
    assert all(row["concrete"] is None for row in data["rows"])


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "dcmc", "bisim", "--graph", "ring:3"], capture_output=True, text=True)
    assert proc.returncode == 0 and "bisimilar" in proc.stdout
