import io
import subprocess
import sys
from pathlib import Path

import pytest

from btweave.cli import main, split_goal
from btweave.dsl import parse_document, print_document
from btweave.plant import AXIS_GOAL, demo_document

DEMOS = Path(__file__).resolve().parents[1] / "src" / "btweave" / "demos"
DEMO = DEMOS / "demo_axis.btw"
ANSWERS = DEMOS / "answers.txt"

AXIS_GRID = ["--grid", "pos=0:20", "--grid", "power=bool", "--grid", "error=bool",
             "--set", "target=10.0", "--set", "target_set=true"]


def cli(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = main([str(a) for a in argv], out=out, err=err)
    return code, out.getvalue(), err.getvalue()


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return path


CYCLE = """
action noop()
deployment loop {
  host a { tree main { remote b.main } }
  host b { tree main { remote a.main } }
  root a.main
}
"""


# ---------------------------------------------------------------------------
# validate


def test_validate_demo():
    code, out, err = cli("validate", DEMO)
    assert code == 0, err
    assert "protocol: consistent" in out
    assert "deployment demo_axis: topology ok" in out
    assert "composition base.main: consistent" in out


def test_validate_reports_a_cycle(tmp_path):
    code, out, err = cli("validate", write(tmp_path, "cycle.btw", CYCLE))
    assert code == 1
    assert "topology violations" in out and "cycle" in err


def test_validate_syntax_error_exits_two(tmp_path):
    code, out, err = cli("validate", write(tmp_path, "bad.btw", "tree t { wobble }\n"))
    assert code == 2
    assert "1:10" in err


def test_missing_file_exits_two(tmp_path):
    assert cli("validate", tmp_path / "nope.btw")[0] == 2


# ---------------------------------------------------------------------------
# plan


def test_plan_uses_the_declared_goal():
    code, out, err = cli("plan", DEMO)
    assert code == 0 and err == ""
    doc = parse_document(out)
    assert [t.name for t in doc.trees] == ["plan"]
    assert out.startswith("# expansion depth:")


def test_plan_with_unreachable_goal_exits_one():
    code, out, err = cli("plan", DEMO, "--goal", "estop == true")
    assert code == 1
    assert 'unrefined goal goal0: "estop == true"' in err


def test_plan_without_skills_exits_one(tmp_path):
    code, out, err = cli("plan", write(tmp_path, "empty.btw", "action noop()\n"), "--goal", "pos == 100")
    assert code == 1
    assert "tree plan" in out


def test_plan_goal_list_and_errors(tmp_path):
    code, out, _ = cli("plan", DEMO, "--goal", "target_set == true, power == true")
    assert code == 0 and "goal1" in out
    assert cli("plan", DEMO, "--goal", "pos ==")[0] == 2
    assert cli("plan", write(tmp_path, "nogoal.btw", "action noop()\n"))[0] == 2
    assert cli("plan", DEMO, "--goal-name", "missing")[0] == 2


def test_split_goal_respects_quotes():
    assert split_goal('mode == "a,b", x == 1') == ['mode == "a,b"', "x == 1"]


# ---------------------------------------------------------------------------
# run


def test_run_demo_succeeds():
    code, out, err = cli("run", DEMO, "--mode", "lockstep", "--answers", ANSWERS)
    assert code == 0
    assert out.splitlines()[-1].split()[2] == "status=S"
    assert "finished with S" in err


def test_run_with_injected_error_and_preset_target():
    code, out, _ = cli("run", DEMO, "--answers", ANSWERS, "--inject", "axis.error=true@6")
    assert code == 0 and "node=axis:reset_axis.act status=S" in out
    code, out, _ = cli("run", DEMO, "--set", "axis.target=100", "--set", "axis.target_set=true")
    assert code == 0 and "get_axis_position.act" not in out


def test_run_that_does_not_finish_exits_one():
    code, _, err = cli("run", DEMO, "--answers", ANSWERS, "--max-ticks", "3")
    assert code == 1 and "with R after 3 ticks" in err


def test_run_text_format():
    code, out, _ = cli("run", DEMO, "--answers", ANSWERS, "--format", "text")
    assert code == 0
    assert "S" in out.splitlines()[-1]


@pytest.mark.parametrize("mode", [["--mode", "lockstep"], ["--mode", "async", "--jitter", "3"]])
def test_run_seed_gives_identical_output(mode):
    args = ["run", DEMO, "--answers", ANSWERS, "--seed", "17", *mode]
    first, second = cli(*args), cli(*args)
    assert first[0] == 0
    assert first[1] == second[1]


def test_run_crashed_host_in_async_mode():
    code, _, err = cli("run", DEMO, "--answers", ANSWERS, "--mode", "async", "--crash", "robot",
                       "--max-ticks", "200")
    assert code == 1
    assert "robot" in err


@pytest.mark.parametrize("bad", [["--inject", "axis.error=true"], ["--set", "nohost=1"],
                                 ["--deployment", "other"]])
def test_run_usage_errors(bad):
    assert cli("run", DEMO, "--answers", ANSWERS, *bad)[0] == 2


# ---------------------------------------------------------------------------
# check-protocol and fts


def test_check_protocol_builtin_and_mutants():
    code, out, _ = cli("check-protocol")
    assert code == 0 and out.startswith("consistent")
    code, out, _ = cli("check-protocol", DEMOS / "mutant_no_halt_ack.roles")
    assert code == 1
    assert cli("check-protocol", DEMOS / "answers.txt")[0] == 2


def test_fts_on_the_demo_axis():
    code, out, _ = cli("fts", DEMO, "--tree", "axis.main", "--bound", 60, *AXIS_GRID)
    assert code == 0 and "84 states" in out
    # without a preset target the lookup reaches the HMI host, which fts cannot run
    code, _, err = cli("fts", DEMO, "--tree", "axis.main", "--bound", 60, "--grid", "pos=0:2")
    assert code == 2 and "not part of a running deployment" in err


def test_fts_certifies_and_refutes_planned_trees(tmp_path):
    full = write(tmp_path, "full.btw", print_document(demo_document()))
    code, planned, _ = cli("plan", full, "--goal", AXIS_GOAL, "--refine-invariants")
    assert code == 0
    code, out, _ = cli("fts", write(tmp_path, "plan.btw", planned), "--tree", "plan", "--bound", 60, *AXIS_GRID)
    assert code == 0, out
    assert "84 states" in out

    doc = demo_document()
    doc.skills = [s for s in doc.skills if s.name != "reset_axis"]
    blocked_src = write(tmp_path, "blocked_src.btw", print_document(doc))
    code, planned, _ = cli("plan", blocked_src, "--goal", AXIS_GOAL, "--refine-invariants")
    code, out, _ = cli("fts", write(tmp_path, "blocked.btw", planned), "--tree", "plan", "--bound", 60, *AXIS_GRID)
    assert code == 1
    violating = [l for l in out.splitlines() if l.startswith("  violating:")]
    assert violating and all("error=True" in l for l in violating)


def test_fts_usage_errors():
    assert cli("fts", DEMO, "--tree", "nope", "--bound", 5)[0] == 2
    assert cli("fts", DEMO, "--tree", "axis.main", "--bound", 5, "--grid", "pos=3")[0] == 2


def test_console_script_entry_point():
    proc = subprocess.run([sys.executable, "-m", "btweave", "check-protocol"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("consistent")


def test_unknown_subcommand_exits_two():
    assert main(["frobnicate"], out=io.StringIO(), err=io.StringIO()) == 2
