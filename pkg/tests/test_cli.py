import json

import pytest

from rfimpute import cli
from rfimpute.dataset import DEFAULT_SCHEMA, read_csv
from rfimpute.errors import ReproducibilityError

FAST = {
    "seed": 7,
    "n": 600,
    "forest": {"n_trees": 10},
    "training": {"max_cycles": 15},
    "ga": {"population": 10, "generations": 5},
    "sets": ["RF1A", "R1A", "RF2A", "R2A", "M1B", "AG1A", "RFAG1A", "AGRF1A"],
}


def run(tmp_path, *argv):
    return cli.main(list(argv) + ["--base-dir", str(tmp_path)])


@pytest.fixture
def fast_config(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(FAST))
    return "cfg.json"


def test_generate_twice_is_byte_identical(tmp_path):
    assert run(tmp_path, "generate", "--seed", "1", "--n", "500", "--out", "a.csv") == 0
    assert run(tmp_path, "generate", "--seed", "1", "--n", "500", "--out", "b.csv") == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.csv.json").read_bytes() == (tmp_path / "b.csv.json").read_bytes()


def test_clean_negative_education_becomes_na(tmp_path):
    (tmp_path / "raw.csv").write_text(",".join(DEFAULT_SCHEMA.names) + "\n5,25,-1,3,2,30,0,0,2\n")
    assert run(tmp_path, "clean", "--seed", "0", "--in", "raw.csv", "--out", "clean.csv") == 0
    row = (tmp_path / "clean.csv").read_text().splitlines()[1].split(",")
    assert row[DEFAULT_SCHEMA.index("Edu")] == "NA"
    side = json.loads((tmp_path / "clean.csv.json").read_text())
    assert side["violations"]["negative"] == 1


def test_inject_sidecar_reports_removed_count(tmp_path):
    run(tmp_path, "generate", "--seed", "1", "--n", "1000", "--out", "raw.csv")
    assert run(tmp_path, "inject", "--seed", "1", "--in", "raw.csv", "--variables", "Age",
               "--out", "miss.csv") == 0
    side = json.loads((tmp_path / "miss.csv.json").read_text())
    census = int(read_csv(tmp_path / "miss.csv").missing.sum())
    assert side["removed"] == census > 0


def test_train_defaults_recorded(tmp_path):
    run(tmp_path, "generate", "--seed", "2", "--n", "300", "--out", "raw.csv")
    run(tmp_path, "split", "--seed", "2", "--in", "raw.csv", "--out-dir", "d")
    assert run(tmp_path, "train", "rf", "--seed", "2", "--in", "d/train.csv", "--out", "rf.json",
               "--manifest", "m.json") == 0
    assert run(tmp_path, "train", "aann", "--seed", "2", "--in", "d/train.csv",
               "--validation", "d/validation.csv", "--out", "aann.json", "--manifest", "m.json") == 0
    steps = json.loads((tmp_path / "m.json").read_text())["steps"]
    forest = steps[0]["config"]["forest"]
    assert (forest["n_trees"], forest["min_node"], forest["m"]) == (70, 7, 3)
    assert (steps[1]["config"]["hidden"], steps[1]["config"]["training"]["max_cycles"]) == (11, 400)
    doc = json.loads((tmp_path / "aann.json").read_text())
    assert (doc["training"]["hidden"], doc["training"]["cycles"]) == (11, 400)
    assert (tmp_path / "aann.json.trace.csv").exists()
    first = (tmp_path / "rf.json").read_bytes()
    run(tmp_path, "train", "rf", "--seed", "2", "--in", "d/train.csv", "--out", "rf.json")
    assert (tmp_path / "rf.json").read_bytes() == first


def test_impute_outputs_are_complete(tmp_path, fast_config):
    c = ["--config", fast_config]
    run(tmp_path, "generate", *c, "--out", "raw.csv")
    run(tmp_path, "split", *c, "--in", "raw.csv", "--out-dir", "d")
    run(tmp_path, "train", "rf", *c, "--in", "d/train.csv", "--out", "rf.json")
    run(tmp_path, "inject", *c, "--in", "d/experiment.csv", "--variables", "Age,FathAge",
        "--out", "m.csv")
    assert run(tmp_path, "impute", *c, "--label", "RF2A", "--in", "m.csv", "--model", "rf.json",
               "--out", "RF2A.csv") == 0
    assert run(tmp_path, "impute", *c, "--strategy", "random", "--variables", "Age,FathAge",
               "--in", "m.csv", "--train", "d/train.csv", "--out", "R2A.csv") == 0
    for name in ("RF2A", "R2A"):
        assert "NA" not in (tmp_path / f"{name}.csv").read_text()
        side = json.loads((tmp_path / f"{name}.csv.json").read_text())
        assert side["label"] == name and side["pattern"] == ["Age", "FathAge"]
    assert run(tmp_path, "assess", "stats", *c, "--target", "d/experiment.csv",
               "--sets", "d/experiment.csv", "--variables", "Age", "--out", "same") == 0
    same = json.loads((tmp_path / "same.json").read_text())["experiment"]["Age"]
    assert same["combined_mse"] == 0 and same["max_percentage_deviation"] == 0


def test_exit_codes(tmp_path, capsys):
    assert run(tmp_path, "generate", "--n", "10", "--out", "x.csv") == 2          # no seed
    assert run(tmp_path, "clean", "--seed", "1", "--in", "nope.csv", "--out", "y.csv") == 1
    (tmp_path / "bad.csv").write_text(",".join(DEFAULT_SCHEMA.names) + "\n1,2,x,4,5,6,7,8,9\n")
    assert run(tmp_path, "clean", "--seed", "1", "--in", "bad.csv", "--out", "y.csv") == 1
    assert "bad.csv:2" in capsys.readouterr().err
    assert run(tmp_path, "inject", "--seed", "1", "--in", "bad.csv", "--variables", "Nope",
               "--out", "z.csv") in (1, 2)
    run(tmp_path, "generate", "--seed", "1", "--n", "50", "--out", "ok.csv")
    assert run(tmp_path, "inject", "--seed", "1", "--in", "ok.csv", "--variables", "Nope",
               "--out", "z.csv") == 2
    assert run(tmp_path, "impute", "--seed", "1", "--label", "XX9", "--in", "ok.csv",
               "--out", "z.csv") == 2
    assert run(tmp_path, "assess", "stats", "--seed", "1", "--sets", "ok.csv", "--out", "r") == 1


def test_run_then_replay_and_tamper(tmp_path, fast_config):
    assert run(tmp_path, "run", "--config", fast_config, "--out-dir", "out") == 0
    out = tmp_path / "out"
    for name in ("stats", "classify", "lr"):
        assert (out / "reports" / f"{name}.json").exists()
    classify = json.loads((out / "reports" / "classify.json").read_text())
    assert set(classify) == {"T", *FAST["sets"]}
    assert cli.main(["replay", str(out / "manifest.json"), "--out-dir", str(tmp_path / "r1")]) == 0
    assert cli.main(["replay", str(out / "manifest.json"), "--out-dir", str(tmp_path / "r3"),
                     "--threads", "3"]) == 0
    doc = json.loads((out / "manifest.json").read_text())
    doc["steps"][2]["config_sha256"] = "0" * 64
    (out / "manifest.json").write_text(json.dumps(doc))
    with pytest.raises(ReproducibilityError, match="config hash mismatch"):
        cli.execute(["replay", str(out / "manifest.json"), "--out-dir", str(tmp_path / "r4")])
