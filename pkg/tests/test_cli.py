import json

import numpy as np
import pytest

from ddkf.cli import main
from ddkf.data import load_batch
from ddkf.experiments import read_csv
from ddkf.identification import IdentifiedModel


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_collect_identify_filter_control(tmp_path, capsys):
    batch = tmp_path / "b.batch"
    code, out, _ = run(capsys, "collect", "--N", "200", "--L", "10", "--seed", "3", "--out", str(batch))
    assert code == 0 and json.loads(out)["dims"] == [200, 10, 2, 2, 1]
    assert load_batch(batch).seed == 3

    model = tmp_path / "m.json"
    code, out, _ = run(capsys, "identify", "--batch", str(batch), "--out", str(model))
    assert code == 0 and IdentifiedModel.load_json(model).L == 10

    inputs = tmp_path / "u.csv"
    np.savetxt(inputs, np.tile([0.5, 10.0], (40, 1)), delimiter=",")
    for mode in ("ddkf", "mbkf"):
        out_csv = tmp_path / f"{mode}.csv"
        code, out, _ = run(capsys, "filter", "--batch", str(batch), "--inputs", str(inputs), "--mode", mode,
                           "--out", str(out_csv))
        assert code == 0
        meta, header, rows = read_csv(out_csv)
        assert meta["command"] == "filter" and len(rows) == 41

    for kind in ("lqg", "dynamic", "static"):
        out_csv = tmp_path / f"{kind}.csv"
        code, out, _ = run(capsys, "control", "--batch", str(batch), "--kind", kind, "--trials", "5",
                           "--horizon", "10", "--out", str(out_csv))
        assert code == 0, kind
        assert json.loads(out)["J_ave"] > 0


def test_bounds_command(tmp_path, capsys):
    code, out, _ = run(capsys, "bounds", "--epsilon", "0.02", "--delta", "0.05")
    assert code == 0
    report = json.loads(out)
    assert report["N0"] > report["N_G"] and report["epsilon1"] is not None
    code, _, err = run(capsys, "bounds", "--epsilon", "0.05", "--delta", "0.05")
    assert code == 1 and "epsilon0" in err


def test_experiment_commands(tmp_path, capsys):
    config = tmp_path / "c.json"
    config.write_text(json.dumps({"horizon": 100, "trials": 5, "N": 100, "N_list": [20, 100],
                                  "control_trials": 5, "control_N": 100, "control_horizon": 10}))
    for name, csv_name in (("track", "tracking.csv"), ("asee", "asee.csv"), ("noise", "noise.csv"),
                           ("compare", "compare.csv"), ("lqg-table", "lqg_table.csv")):
        out = tmp_path / name
        code, _, err = run(capsys, name, "--config", str(config), "--out", str(out), "--seed", "4")
        assert code == 0, err
        meta, _, _ = read_csv(out / csv_name)
        assert meta["seed"] == "4"
        assert (out / f"{name}_manifest.json").exists()


def test_errors_are_reported(tmp_path, capsys):
    bad = tmp_path / "bad.batch"
    bad.write_text("not a batch\n")
    code, _, err = run(capsys, "identify", "--batch", str(bad), "--out", str(tmp_path / "m.json"))
    assert code == 1 and err.startswith("error:")
    code, _, err = run(capsys, "identify", "--batch", str(tmp_path / "missing"), "--out", "x")
    assert code == 1
    with pytest.raises(SystemExit):
        main(["collect"])
