import json

import pytest
import yaml

from georeg.cli import EXIT_OK, EXIT_RUNTIME, EXIT_THRESHOLD, EXIT_USAGE, main
from georeg.config import RunConfig, dump_config
from georeg.formats import read_ground_truth, read_targets, read_trajectory, write_ground_truth


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    """A six-frame line, its localization and targets, shared by the tests below."""
    d = tmp_path_factory.mktemp("cli")
    cfg = RunConfig()
    cfg.trajectory.n_frames = 6
    (d / "cfg.yaml").write_text(dump_config(cfg))
    c = str(d / "cfg.yaml")
    assert main(["gen-traj", "-c", c, "-o", str(d / "gt.csv")]) == EXIT_OK
    assert main(["run", "-c", c, "--gt", str(d / "gt.csv"), "-o", str(d / "traj.csv"), "--metrics", str(d / "m.json")]) == EXIT_OK
    assert main(["gen-targets", "-c", c, "--gt", str(d / "gt.csv"), "--per-frame", "2", "-o", str(d / "targets.csv")]) == EXIT_OK
    return d


def test_outputs_exist(run_dir):
    assert len(read_ground_truth(run_dir / "gt.csv")) == 6
    assert len(read_trajectory(run_dir / "traj.csv")) == 6
    assert len(read_targets(run_dir / "targets.csv")) == 12
    assert json.loads((run_dir / "m.json").read_text())["completeness"] == 100.0


def test_eval_and_gates(run_dir, tmp_path):
    args = ["eval", "--traj", str(run_dir / "traj.csv"), "--gt", str(run_dir / "gt.csv")]
    assert main(args + ["-o", str(tmp_path / "m.json"), "--plot", str(tmp_path / "e.svg")]) == EXIT_OK
    assert (tmp_path / "e.svg").read_text().lstrip().startswith("<?xml")
    assert main(args + ["--min-completeness", "100"]) == EXIT_OK
    assert main(args + ["--min-recall", "5:5:101"]) == EXIT_THRESHOLD
    assert main(args + ["--min-recall", "garbage"]) == EXIT_USAGE


def test_eval_length_mismatch_is_runtime_failure(run_dir, tmp_path):
    write_ground_truth(tmp_path / "short.csv", read_ground_truth(run_dir / "gt.csv")[:3])
    assert main(["eval", "--traj", str(run_dir / "traj.csv"), "--gt", str(tmp_path / "short.csv")]) == EXIT_RUNTIME


def test_target(run_dir, tmp_path):
    args = ["target", "-c", str(run_dir / "cfg.yaml"), "--traj", str(run_dir / "traj.csv"), "--targets", str(run_dir / "targets.csv")]
    assert main(args + ["-o", str(tmp_path / "obs.csv"), "--report", str(tmp_path / "r.json"), "--min-recall", "5", "90"]) == EXIT_OK
    rec = {e["k"]: e["percent"] for e in json.loads((tmp_path / "r.json").read_text())["recall_at"]}
    assert rec[1.0] <= rec[3.0] <= rec[5.0]
    assert main(args + ["-o", str(tmp_path / "obs.csv"), "--min-recall", "1", "101"]) == EXIT_THRESHOLD
    assert main(args + ["-o", str(tmp_path / "obs.csv"), "--min-recall", "2", "50"]) == EXIT_USAGE


def test_gen_scene(tmp_path):
    assert main(["gen-scene", "--seed", "3", "-o", str(tmp_path / "s.yaml"), "--dump-dir", str(tmp_path / "dump")]) == EXIT_OK
    assert yaml.safe_load((tmp_path / "s.yaml").read_text())["seed"] == 3
    assert any((tmp_path / "dump").iterdir())


def test_gen_traj_patterns(tmp_path):
    for pattern in ("line", "orbit", "barrel-roll"):
        out = tmp_path / f"{pattern}.csv"
        assert main(["gen-traj", "--pattern", pattern, "--frames", "9", "-o", str(out)]) == EXIT_OK
        assert len(read_ground_truth(out)) == 9
    assert main(["gen-traj", "--frames", "4", "--param", "speed=5", "-o", str(tmp_path / "p.csv")]) == EXIT_OK
    gt = read_ground_truth(tmp_path / "p.csv")
    assert abs(((gt[1].t - gt[0].t) ** 2).sum() ** 0.5 - 5.0) < 1e-9


def test_usage_errors(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["run"])
    assert exc.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == EXIT_USAGE
    assert main(["run", "-c", str(tmp_path / "missing.yaml"), "-o", str(tmp_path / "t.csv")]) == EXIT_USAGE
    (tmp_path / "bad.yaml").write_text("jngo:\n  bogus: 1\n")
    assert main(["run", "-c", str(tmp_path / "bad.yaml"), "-o", str(tmp_path / "t.csv")]) == EXIT_USAGE


def test_jacobian_check_command():
    assert main(["jacobian-check", "--triples", "50"]) == EXIT_OK
    assert main(["jacobian-check", "--triples", "50", "--tol", "1e-15"]) == EXIT_THRESHOLD


def test_ablate_command(tmp_path):
    args = ["ablate", "--axis", "multi_hypothesis", "--levels", "3", "--trials", "1", "--frames", "2"]
    assert main(args + ["-o", str(tmp_path / "a.json")]) == EXIT_OK
    table = json.loads((tmp_path / "a.json").read_text())
    assert set(table["rows"]) == {"single", "multi"}
    assert main(args + ["--min-gap", "101"]) == EXIT_THRESHOLD
