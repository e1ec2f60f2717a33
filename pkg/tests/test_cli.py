import io
import json
from importlib import resources

import pytest

from acverify.cli import RunConfig, main, run
from acverify.rawsys import encode_raw_system

DATA = resources.files("acverify") / "data"
FIG4 = str(DATA / "fig4.its")
FIG4_Q = str(DATA / "fig4.q")
CRS = str(DATA / "crs.acp")


def call(*argv, stdin=""):
    out, err = io.StringIO(), io.StringIO()
    code = main(list(argv), stdin=io.StringIO(stdin), stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


def test_fig4_auto_text():
    code, out, _ = call("--policy", FIG4, "--query", FIG4_Q)
    assert code == 0
    assert "verdict: HOLDS" in out
    assert "E3" in out and "~r" in out


def test_fig4_direct_json():
    code, out, _ = call("--policy", FIG4, "--query", FIG4_Q, "--mode", "direct", "--format", "json")
    assert code == 0
    rep = json.loads(out)
    assert rep["verdict"] == "holds" and rep["stats"]["reachable_states"] == 6


def test_failing_query_exit_code(tmp_path):
    q = tmp_path / "f.q"
    q.write_text("true : AG ~p\n")
    code, out, _ = call("--policy", FIG4, "--query", str(q), "--format", "json")
    assert code == 1
    rep = json.loads(out)
    assert rep["verdict"] == "fails" and rep["counterexample"] is not None


def test_report_is_deterministic(tmp_path):
    outs = [call("--policy", FIG4, "--query", FIG4_Q, "--format", "json", "--seed", "3")[1] for _ in range(2)]
    assert outs[0] == outs[1]
    assert json.loads(outs[0])["seed"] == 3


def test_output_files(tmp_path):
    out, trace, dump = tmp_path / "r.txt", tmp_path / "t.json", tmp_path / "s.its"
    code, text, _ = call(
        "--policy", FIG4, "--query", FIG4_Q, "--out", str(out), "--trace", str(trace), "--dump-system", str(dump)
    )
    assert code == 0 and text == ""
    assert "verdict: HOLDS" in out.read_text()
    assert [t["verdict"] for t in json.loads(trace.read_text())] == ["fails", "holds"]
    assert len(encode_raw_system(dump.read_text()).actions) == 4


@pytest.mark.parametrize(
    "argv, fragment",
    [
        (["--policy", "missing.acp", "--query", FIG4_Q], "missing.acp"),
        (["--policy", FIG4, "--query", FIG4_Q, "--mode", "bogus"], ""),
        (["--query", FIG4_Q], ""),
    ],
)
def test_usage_errors(argv, fragment):
    code, _, err = call(*argv)
    assert code == 2
    assert fragment in err


def test_parse_error(tmp_path):
    q = tmp_path / "bad.q"
    q.write_text("true : AG (p &\n")
    code, _, err = call("--policy", FIG4, "--query", str(q))
    assert code == 2 and "parse error" in err


def test_unsupported_in_automatic_mode(tmp_path):
    q = tmp_path / "k.q"
    q.write_text("true : AG ~K_a p\n")
    code, _, err = call("--policy", FIG4, "--query", str(q))
    assert code == 2 and "unsupported" in err


def test_capacity(tmp_path):
    code, _, err = call("--policy", CRS, "--query", str(DATA / "query2.q"), "--mode", "direct", "--max-states", "5")
    assert code == 3 and "capacity" in err


def test_interactive_from_stdin():
    # a1's counters first, then everything else
    answers = "a1.loc.cnt1(a2)\na1.loc.reviewer(p2,a2)\n\n*\n"
    code, out, err = call("--policy", CRS, "--query", str(DATA / "query3.q"), "--mode", "cegar-interactive", stdin=answers)
    assert code == 1
    assert "agent a1" in err
    assert "assignFirst(a3,a2,p1)" in out


def test_interactive_empty_selection_aborts():
    code, _, err = call("--policy", CRS, "--query", str(DATA / "query3.q"), "--mode", "cegar-interactive", stdin="\n")
    assert code == 2 and "no propositions selected" in err


def test_run_api():
    status, report = run(RunConfig(FIG4, FIG4_Q, mode="direct"))
    assert status == 0 and report.holds
    assert "reachable states: 6" in report.to_text()
