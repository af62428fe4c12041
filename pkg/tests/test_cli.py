import json
import subprocess
import sys

import pytest

from toydown import io as tio
from toydown.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_allocate(capsys):
    code, out, _ = run(capsys, "allocate", "--branching", "10", "10", "--epsilon", "1")
    assert code == 0
    res = json.loads(out)
    assert res["allocation"] == pytest.approx([0.038, 0.171, 0.791], abs=1e-3)
    assert res["variance"] == pytest.approx(14.52, abs=0.01)


def test_variance_and_curve(capsys, tmp_path):
    code, out, _ = run(capsys, "variance", "--branching", "10", "10", "--split", "0.038,0.171,0.791")
    assert code == 0 and json.loads(out)["variance"] == pytest.approx(14.52, abs=0.01)
    path = tmp_path / "curve.csv"
    code, _, _ = run(capsys, "variance", "--branching", "10", "10", "--curve-step", "0.1",
                     "--out", str(path))
    assert code == 0 and path.read_text().startswith("eps1,eps2,eps3,variance\n")


def test_frag(capsys):
    code, out, _ = run(capsys, "frag", "--branching", "484", "4", "25", "--k", "4",
                       "--method", "greedy", "--draws", "2")
    res = json.loads(out)
    assert code == 0 and res["greedy_upper"] == 98 and res["mean_frag"] == 90.75


def test_gen_noise_districts_er(capsys, tmp_path):
    counts = tmp_path / "c.csv"
    assert run(capsys, "gen", "homogeneous", "--branching", "4", "4", "--types", "a", "b",
               "--max-count", "9", "--out", str(counts))[0] == 0
    h, table = tio.load_counts(counts)
    assert h.n_leaves == 16 and table.n_types == 2

    noised = tmp_path / "n.csv"
    assert run(capsys, "noise", "--counts", str(counts), "--seed", "1",
               "--algorithm", "toydown-nonneg", "--out", str(noised))[0] == 0
    assert noised.read_text().startswith("unit_path,type,count\n")

    grid, adj = tmp_path / "g.csv", tmp_path / "adj.csv"
    assert run(capsys, "gen", "grid", "--rows", "4", "--cols", "4", "--out", str(grid),
               "--adjacency", str(adj))[0] == 0
    gh, _ = tio.load_counts(grid)
    assert len(tio.load_adjacency(adj, gh)) == 24
    code, out, _ = run(capsys, "districts", "--counts", str(grid), "--adjacency", str(adj),
                       "--method", "recom", "--k", "2", "--count", "1", "--seed", "3",
                       "--tolerance", "0")
    assert code == 0 and len(out.splitlines()) == 3

    election = tmp_path / "e.csv"
    assert run(capsys, "gen", "county", "--precincts", "60", "--out", str(election))[0] == 0
    code, out, _ = run(capsys, "er", "--election", str(election), "--seed", "2",
                       "--replicates", "2", "--modes", "filtered")
    assert code == 0 and "filtered" in json.loads(out)


def test_run_requires_seed(capsys):
    with pytest.raises(SystemExit) as info:
        main(["run", "--branching", "4", "4"])
    assert info.value.code != 0


def test_run_with_config(capsys, tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("branching: [4, 4]\nreplicates: 2\n"
                   "districts: {method: greedy, k: 2, count: 2}\n")
    code, out, _ = run(capsys, "run", "--config", str(cfg), "--seed", "1", "--plot", "error-hist")
    assert code == 0 and out.splitlines()[0] == "district,mean_abs_error"
    outdir = tmp_path / "out"
    code, _, _ = run(capsys, "run", "--config", str(cfg), "--seed", "1", "--out", str(outdir))
    assert code == 0 and (outdir / "report.json").exists()


def test_run_failure_names_stage(capsys):
    code, _, err = run(capsys, "run", "--branching", "4", "4", "--seed", "1", "--replicates", "0")
    assert code != 0 and "stage config" in err
    code, _, err = run(capsys, "run", "--branching", "4", "4", "--seed", "1", "--split", "BG-heavy")
    assert code != 0 and "stage allocation" in err


def test_bad_counts_file_reports_line(capsys, tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("unit_path,type,count\nus/a,total,-3\n")
    code, _, err = run(capsys, "noise", "--counts", str(p), "--seed", "1", "--out",
                       str(tmp_path / "o.csv"))
    assert code == 1 and "c.csv:2:" in err


def test_console_script_exit_codes(tmp_path):
    ok = subprocess.run([sys.executable, "-m", "toydown.cli", "allocate", "--branching", "10"],
                        capture_output=True, text=True)
    assert ok.returncode == 0
    bad = subprocess.run([sys.executable, "-m", "toydown.cli", "run", "--branching", "3",
                          "--seed", "1", "--replicates", "0"], capture_output=True, text=True)
    assert bad.returncode != 0 and "stage" in bad.stderr
