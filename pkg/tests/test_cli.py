import json
import subprocess
import sys

import pytest

from carnotlab import __version__
from carnotlab import group as G
from carnotlab.cli import main


def write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def test_group_axioms_engel_manifest(tmp_path):
    cfg = {"experiment": "group-axioms", "group": "engel", "params": {"n_triples": 500}, "seed": 7, "outdir": "out"}
    assert main(["run", write(tmp_path, cfg)]) == 0
    man = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert man["version"] == __version__ and man["seeds"] == [7] and man["passed"]
    assert man["config"] == cfg and "started" in man["wall_clock"]
    run = man["runs"][0]
    names = [c["name"] for c in run["checks"]]
    assert len(names) == len(set(names))
    assert {"associativity", "identity", "inverse", "dilation_homomorphism"} <= set(names)
    assert all(c["passed"] for c in run["checks"])
    assert (tmp_path / "out" / "00-group-axioms" / "group-axioms.csv").exists()


@pytest.mark.parametrize("cfg", [
    {"experiment": "measure-mc", "params": {"radii": []}, "seed": 1, "outdir": "o"},
    {"experiment": "measure-mc", "outdir": "o"},
    {"experiment": "measure-mc", "seed": 1.5, "outdir": "o"},
    {"experiment": "measure-mc", "seed": 1},
    {"experiment": "nope", "seed": 1, "outdir": "o"},
    {"experiment": "hormander", "group": "nope", "seed": 1, "outdir": "o"},
    {"experiment": "hormander", "group": {"preset": "heisenberg", "m": 3}, "seed": 1, "outdir": "o"},
    {"experiment": "schauder-rate", "params": {"alpha": 1.5}, "seed": 1, "outdir": "o"},
    {"runs": [], "seed": 1, "outdir": "o"},
    {"runs": [{"experiment": "hormander"}, {"experiment": "measure-mc", "params": {"radii": []}}], "seed": 1,
     "outdir": "o"},
    {"experiment": "hormander", "seed": 1, "outdir": "o", "extra": True},
])
def test_invalid_configs_exit_nonzero(tmp_path, capsys, cfg):
    assert main(["run", write(tmp_path, cfg)]) == 2
    assert "error:" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()  # validation precedes any output


def test_unreadable_config(tmp_path):
    (tmp_path / "bad.json").write_text("{not json")
    assert main(["run", str(tmp_path / "bad.json")]) == 2
    assert main(["run", str(tmp_path / "missing.json")]) == 2


def test_failed_check_exits_one_with_detail(tmp_path, capsys):
    cfg = {"experiment": "measure-mc", "params": {"mc_samples": 5000}, "tolerances": {"zscore": 0.0}, "seed": 1,
           "outdir": "o"}
    assert main(["run", write(tmp_path, cfg)]) == 1
    out = capsys.readouterr().out
    assert "FAIL measure-mc zscore[r=0.5]: measured" in out and "required <= 0.0" in out


def test_spec_file_group(tmp_path):
    (tmp_path / "engel.json").write_text(G.engel_spec().to_json())
    cfg = {"experiment": "hormander", "group": {"spec": "engel.json"}, "seed": 0, "outdir": "o"}
    assert main(["run", write(tmp_path, cfg)]) == 0


def _outputs(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file() and p.name != "manifest.json"}


def test_repeat_and_parallel_runs_are_byte_identical(tmp_path):
    runs = [
        {"experiment": "measure-mc", "params": {"mc_samples": 20000}},
        {"experiment": "quasi-triangle", "params": {"sample_counts": [1000, 2000]}, "seed": 11},
        {"experiment": "group-axioms", "group": "engel", "params": {"n_triples": 300}},
    ]
    for name, extra in (("a", []), ("b", []), ("c", ["--parallel", "3"])):
        cfg = {"runs": runs, "seed": 5, "outdir": name}
        assert main(["run", write(tmp_path, cfg, f"{name}.json")] + extra) == 0
    a, b, c = (_outputs(tmp_path / n) for n in "abc")
    assert a and a == b == c
    man = json.loads((tmp_path / "c" / "manifest.json").read_text())
    assert man["seeds"] == [5, 11, 5]


def test_list_and_describe(capsys):
    assert main(["list"]) == 0
    out = capsys.readouterr().out
    assert "schauder-rate" in out and "kernel-bounds" in out
    assert main(["list", "--json"]) == 0
    assert len(json.loads(capsys.readouterr().out)) == 14
    assert main(["describe", "schauder-rate"]) == 0
    out = capsys.readouterr().out
    assert "slope_error" in out and "alpha = 0.5" in out
    assert main(["describe", "nope"]) == 2


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "carnotlab.cli", "list"], capture_output=True, text=True)
    assert res.returncode == 0 and "hp-solve" in res.stdout
