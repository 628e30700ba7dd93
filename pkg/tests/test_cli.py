import csv
import json

import numpy as np
import pytest

from equisearch import dataset_gen as dg
from equisearch import tied_mlp as tm
from equisearch.cli import main
from equisearch.orbit_engine import load_partition


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_help_documents_group_grammar(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    for token in ("cyc<k>", "rot90", "hflip", "vflip", "htrans<k>", "vtrans<k>", "file:<path>"):
        assert token in text


# -- orbits --------------------------------------------------------------------


def test_orbits_fig1(tmp_path, capsys):
    code, out, _ = run(capsys, "orbits", "--shape", "3x3", "--groups", "cyc3,swap2", "--algo", "fast",
                       "--out", tmp_path / "f.orb", "--count-ops")
    assert code == 0
    report = json.loads(out)
    assert report["orbit_count"] == 2 and report["applications"] == 5 * 9
    assert (tmp_path / "f.orb.manifest.json").exists()


def test_orbits_fast_basic_merge_identical_files(tmp_path, capsys):
    for algo in ("fast", "basic", "merge"):
        code, _, _ = run(capsys, "orbits", "--shape", "16x16", "--groups", "rot90,hflip", "--algo", algo,
                         "--out", tmp_path / f"{algo}.orb")
        assert code == 0
    data = {a: (tmp_path / f"{a}.orb").read_bytes() for a in ("fast", "basic", "merge")}
    assert data["fast"] == data["basic"] == data["merge"]


def test_orbits_trivial_group_and_json(tmp_path, capsys):
    code, out, _ = run(capsys, "orbits", "--shape", "4x5", "--groups", "identity", "--out", tmp_path / "t.json",
                       "--json")
    assert code == 0 and json.loads(out)["orbit_count"] == 20
    assert load_partition(tmp_path / "t.json").assignment.tolist() == list(range(20))


def test_orbits_trivial_output_action(tmp_path, capsys):
    code, out, _ = run(capsys, "orbits", "--shape", "16x3", "--groups", "rot90", "--out-action", "trivial",
                       "--out", tmp_path / "t.orb")
    assert code == 0 and json.loads(out)["orbit_count"] == 4 * 3


def test_orbits_exit_codes(tmp_path, capsys):
    assert run(capsys, "orbits", "--shape", "3x3", "--groups", "rot45", "--out", tmp_path / "x")[0] == 2
    assert run(capsys, "orbits", "--shape", "3by3", "--groups", "cyc3", "--out", tmp_path / "x")[0] == 2
    assert run(capsys, "orbits", "--shape", "3x4", "--groups", "cyc3", "--out", tmp_path / "x")[0] == 2
    # the fast path never builds the order-8 closure, so only basic trips a cap of 4
    base = ["orbits", "--shape", "16x16", "--groups", "rot90,hflip", "--cap", "4", "--out", tmp_path / "x"]
    assert run(capsys, *base, "--algo", "fast")[0] == 0
    code, _, err = run(capsys, *base, "--algo", "basic")
    assert code == 3 and "too large" in err


def test_orbits_file_group(tmp_path, capsys):
    (tmp_path / "g.perm").write_text("# reverse\n2 1 0\n")
    code, out, _ = run(capsys, "orbits", "--shape", "3x3", "--groups", f"cyc3,file:{tmp_path / 'g.perm'}",
                       "--out", tmp_path / "o.orb")
    assert code == 0 and json.loads(out)["orbit_count"] == 2


# -- verify --------------------------------------------------------------------


def s3_checkpoint(path):
    widths = [3, 3]
    plans = [tm.plan_from_spec(s, widths, output="same") for s in ("cyc3", "swap2")]
    net = tm.build_tied_mlp(widths, plans, seed=0, head="identity")
    net.layers[0].free_biases[:] = 0.25
    return tm.save_checkpoint(net, path)


def test_verify_tied_s3_layer(tmp_path, capsys):
    ck = s3_checkpoint(tmp_path / "s3.json")
    code, out, _ = run(capsys, "verify", "--net", ck, "--plan", "cyc3,swap2", "--exact")
    rep = json.loads(out)
    assert code == 0 and rep["passed"] and rep["max_deviation"] == 0 and rep["group_order"] == 6


def test_verify_untied_layer_fails(tmp_path, capsys):
    net = tm.build_tied_mlp([3, 3], seed=1, head="identity")
    ck = tm.save_checkpoint(net, tmp_path / "u.json")
    code, out, _ = run(capsys, "verify", "--net", ck, "--plan", "cyc3", "--report", tmp_path / "r.json")
    rep = json.loads(out)
    assert code == 1 and not rep["passed"] and rep["failing_elements"]
    assert json.loads((tmp_path / "r.json").read_text()) == rep


def test_verify_trivial_plan_passes(tmp_path, capsys):
    net = tm.build_tied_mlp([4, 6, 2], seed=1)
    ck = tm.save_checkpoint(net, tmp_path / "n.json")
    assert run(capsys, "verify", "--net", ck, "--plan", "identity")[0] == 0


def test_verify_missing_checkpoint(tmp_path, capsys):
    assert run(capsys, "verify", "--net", tmp_path / "nope.json", "--plan", "cyc3")[0] == 2


# -- bench ---------------------------------------------------------------------


def test_bench_rows_and_counts(tmp_path, capsys):
    code, _, _ = run(capsys, "bench", "--shape", "144x144", "--groups", "htrans1,vtrans1", "--repeats", 3,
                     "--out", tmp_path / "b.csv")
    assert code == 0
    rows = list(csv.DictReader(open(tmp_path / "b.csv")))
    fast = [r for r in rows if r["algorithm"] == "fast"]
    basic = [r for r in rows if r["algorithm"] == "basic"]
    assert len(fast) == len(basic) == 3
    n = 144 * 144
    assert all(int(r["applications"]) <= 24 * n for r in fast)
    assert all(int(r["applications"]) == 144 * n for r in basic)


def test_bench_single_group_counts_close(capsys):
    code, out, _ = run(capsys, "bench", "--shape", "16x16", "--groups", "rot90", "--repeats", 1)
    rows = list(csv.DictReader(out.splitlines()))
    apps = {r["algorithm"]: int(r["applications"]) for r in rows}
    assert code == 0 and apps["basic"] <= 2 * apps["fast"] and apps["fast"] <= 2 * apps["basic"]


# -- data, train, search -------------------------------------------------------


def write_data(tmp_path, n=120, side=4, seed=0):
    d = dg.planted_dataset(n, side, n_classes=3, seed=seed)
    dg.write_idx(d, tmp_path / "x.idx", tmp_path / "y.idx")
    return tmp_path / "x.idx", tmp_path / "y.idx"


def test_gen_data_identity_is_byte_identical(tmp_path, capsys):
    x, y = write_data(tmp_path)
    code, _, _ = run(capsys, "gen-data", "--images", x, "--labels", y, "--aug", "identity",
                     "--out-images", tmp_path / "ox", "--out-labels", tmp_path / "oy")
    assert code == 0
    assert (tmp_path / "ox").read_bytes() == x.read_bytes()
    assert (tmp_path / "oy").read_bytes() == y.read_bytes()
    manifest = json.loads((tmp_path / "ox.manifest.json").read_text())
    assert manifest["inputs"][str(x)] == manifest["outputs"][str(tmp_path / "ox")]


def test_gen_data_deterministic_manifest(tmp_path, capsys):
    x, y = write_data(tmp_path)
    outs = []
    for k in range(2):
        args = ["gen-data", "--images", x, "--labels", y, "--aug", "rot90+hflip", "--seed", 5, "--subsample", 50,
                "--out-images", tmp_path / "ox", "--out-labels", tmp_path / "oy", "--log", tmp_path / "log.jsonl"]
        assert run(capsys, *args)[0] == 0
        outs.append((tmp_path / "ox.manifest.json").read_text())
    assert outs[0] == outs[1]
    assert len((tmp_path / "log.jsonl").read_text().splitlines()) == 50


def test_gen_data_synthetic(tmp_path, capsys):
    code, _, _ = run(capsys, "gen-data", "--synthetic", 30, "--side", 8, "--planted", "rot90",
                     "--out-images", tmp_path / "sx", "--out-labels", tmp_path / "sy")
    assert code == 0 and len(dg.read_idx(tmp_path / "sx", tmp_path / "sy")) == 30


def test_gen_data_bad_idx(tmp_path, capsys):
    x, y = write_data(tmp_path)
    code, _, err = run(capsys, "gen-data", "--images", y, "--labels", y,
                       "--out-images", tmp_path / "ox", "--out-labels", tmp_path / "oy")
    assert code == 2 and "magic" in err


def test_train_zero_epochs_is_initialization(tmp_path, capsys):
    x, y = write_data(tmp_path)
    code, _, _ = run(capsys, "train", "--train-images", x, "--train-labels", y, "--hidden", "8", "--groups",
                     "rot90", "--epochs", 0, "--seed", 3, "--out", tmp_path / "net.json")
    assert code == 0
    net, manifest = tm.load_checkpoint(tmp_path / "net.json")
    init = tm.build_tied_mlp([16, 8, 3], [tm.plan_from_spec("rot90", [16, 8, 3])], seed=3)
    for a, b in zip(net.parameters(), init.parameters()):
        assert np.array_equal(a, b)
    assert manifest["seed"] == 3


def test_train_then_verify(tmp_path, capsys):
    x, y = write_data(tmp_path)
    code, out, _ = run(capsys, "train", "--train-images", x, "--train-labels", y, "--val-images", x,
                       "--val-labels", y, "--hidden", "8", "--groups", "rot90", "--epochs", 2, "--lr", 0.05,
                       "--out", tmp_path / "net.json")
    assert code == 0 and len(json.loads(out)["val_accuracy"]) == 2
    code, _, _ = run(capsys, "verify", "--net", tmp_path / "net.json", "--plan", "rot90")
    assert code == 0


def test_train_indivisible_width(tmp_path, capsys):
    x, y = write_data(tmp_path)
    code, _, _ = run(capsys, "train", "--train-images", x, "--train-labels", y, "--hidden", "6", "--groups",
                     "rot90", "--out", tmp_path / "net.json")
    assert code == 2


def test_search_planted_config(tmp_path, capsys):
    mask = [1, 0, 1, 1, 0]
    cfg = {"seed": 0, "oracle": {"type": "planted", "mask": mask},
           "search": {"epsilon_schedule": [[1.0, 120], [0.05, 120]], "batch_size": 32, "q_hidden": [32, 32]}}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    code, _, _ = run(capsys, "search", "--config", tmp_path / "cfg.json", "--out", tmp_path / "s.jsonl",
                     "--summary", tmp_path / "s.json")
    assert code == 0
    summary = json.loads((tmp_path / "s.json").read_text())
    assert summary["top_states"][0]["state"] == mask
    assert summary["models_trained"] == 240
    assert len((tmp_path / "s.jsonl").read_text().splitlines()) == 240
    assert (tmp_path / "s.jsonl.manifest.json").exists()


def test_search_mlp_config(tmp_path, capsys):
    x, y = write_data(tmp_path, n=80)
    cfg = {"oracle": {"type": "mlp", "train_images": str(x), "train_labels": str(y), "val_images": str(x),
                      "val_labels": str(y), "groups": ["rot90", "hflip"], "hidden": [8], "epochs": 1},
           "search": {"epsilon_schedule": [[1.0, 4]], "batch_size": 8, "q_hidden": [8]}}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    code, _, _ = run(capsys, "search", "--config", tmp_path / "cfg.json", "--out", tmp_path / "s.jsonl")
    assert code == 0
    assert json.loads((tmp_path / "s.summary.json").read_text())["models_trained"] == 4


def test_search_bad_config(tmp_path, capsys):
    (tmp_path / "cfg.json").write_text(json.dumps({"oracle": {"type": "nope"}}))
    assert run(capsys, "search", "--config", tmp_path / "cfg.json")[0] == 2
