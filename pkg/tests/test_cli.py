import json
import math

import pytest

from ctrembed.cli import main
from ctrembed.hashing import HasherConfig, hash_token


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    path = d / "synth.tsv"
    rc = main(["synth-gen", str(path), "--samples", "6000", "--pair", "0,1,2.0",
               "--pair", "2,3,2.0", "--seed", "1"])
    assert rc == 0
    return path


@pytest.fixture(scope="module")
def balanced(tmp_path_factory):
    path = tmp_path_factory.mktemp("bal") / "bal.tsv"
    assert main(["synth-gen", str(path), "--samples", "4000", "--base-ctr", "0.5"]) == 0
    return path


def write_cfg(tmp_path, name="cfg.json", **kw):
    cfg = dict(num_feats=8, num_bins=4096, data_format="categorical", batch_size=200,
               optimizer={"learning_rate": 0.01})
    cfg.update(kw)
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def last_json(text):
    return json.loads([ln for ln in text.splitlines() if ln.startswith("{")][-1])


class TestSynthGen:
    def test_writes_file(self, data, capsys):
        lines = data.read_text().splitlines()
        assert len(lines) == 6000
        assert all(len(ln.split("\t")) == 9 for ln in lines[:50])

    def test_reports_bayes_gap(self, tmp_path, capsys):
        main(["synth-gen", str(tmp_path / "x.tsv"), "--samples", "10", "--pair", "0,1,2"])
        assert "gap" in capsys.readouterr().out

    def test_bad_pair_is_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["synth-gen", str(tmp_path / "x.tsv"), "--pair", "0,1"])
        assert exc.value.code == 2


class TestTrain:
    def test_lr_smoke(self, tmp_path, data, capsys):
        cfg = write_cfg(tmp_path, data_path=str(data))
        out = tmp_path / "runs"
        assert main(["train", str(cfg), "--out", str(out)]) == 0
        run = next(p for p in out.iterdir() if p.is_dir())
        assert {p.name for p in run.iterdir()} == {"snapshot.bin", "metrics.jsonl", "config.json"}
        rec = json.loads((out / "ledger.jsonl").read_text().splitlines()[0])
        assert rec["metrics"]["rig"] > 0 and rec["seed"] == 0 and "wall_time" in rec
        assert run.name.endswith("-s0") and len(run.name.split("-")[0]) == 16

    def test_fm_embed_on_linear_rejected(self, tmp_path, data, capsys):
        cfg = write_cfg(tmp_path, data_path=str(data), num_factors=4,
                        linear_modules=[{"kind": "fm_embed"}])
        assert main(["train", str(cfg), "--out", str(tmp_path / "r")]) == 2
        assert "can only be applied to interaction embeddings" in capsys.readouterr().err
        assert not (tmp_path / "r").exists()

    def test_all_errors_listed(self, tmp_path, data, capsys):
        cfg = write_cfg(tmp_path, data_path=str(data), num_bins=0, batch_size=0, loss="mse")
        assert main(["train", str(cfg)]) == 2
        err = capsys.readouterr().err
        assert "num_bins" in err and "batch_size" in err and "loss" in err

    def test_missing_data(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, data_path=str(tmp_path / "nope.tsv"))
        out = tmp_path / "runs"
        assert main(["train", str(cfg), "--out", str(out)]) == 2
        assert "not found" in capsys.readouterr().err
        assert not out.exists()

    def test_unreadable_config(self, tmp_path):
        assert main(["train", str(tmp_path / "missing.json")]) == 2

    def test_set_override_and_data_root(self, tmp_path, data, monkeypatch, capsys):
        monkeypatch.setenv("CTREMBED_DATA_ROOT", str(data.parent))
        cfg = write_cfg(tmp_path, data_path=data.name)
        out = tmp_path / "runs"
        rc = main(["train", str(cfg), "--out", str(out), "--set", "num_factors=3",
                   "--set", "optimizer.learning_rate=0.02", "--set", "seed=5"])
        assert rc == 0
        run = next(p for p in out.iterdir() if p.is_dir())
        saved = json.loads((run / "config.json").read_text())
        assert saved["num_factors"] == 3 and saved["optimizer"]["learning_rate"] == 0.02
        assert run.name.endswith("-s5")

    def test_deterministic_artifacts(self, tmp_path, data):
        cfg = write_cfg(tmp_path, data_path=str(data), num_factors=3,
                        interaction_modules=[{"kind": "reweight"}])
        runs = []
        for name in ("a", "b"):
            assert main(["train", str(cfg), "--out", str(tmp_path / name)]) == 0
            runs.append(next(p for p in (tmp_path / name).iterdir() if p.is_dir()))
        for f in ("snapshot.bin", "metrics.jsonl", "config.json"):
            assert (runs[0] / f).read_bytes() == (runs[1] / f).read_bytes()


class TestEvaluate:
    def test_matches_train_report(self, tmp_path, data, capsys):
        cfg = write_cfg(tmp_path, data_path=str(data), num_factors=3)
        out = tmp_path / "runs"
        main(["train", str(cfg), "--out", str(out)])
        run = next(p for p in out.iterdir() if p.is_dir())
        final = json.loads((run / "metrics.jsonl").read_text().splitlines()[-1])["metrics"]
        capsys.readouterr()
        assert main(["evaluate", str(run / "snapshot.bin")]) == 0
        rep = last_json(capsys.readouterr().out)
        assert rep.pop("part") == "test"
        assert rep == final

    def test_untrained_lr_is_ln2(self, tmp_path, balanced, capsys):
        cfg = write_cfg(tmp_path, data_path=str(balanced), epochs=0)
        out = tmp_path / "runs"
        assert main(["train", str(cfg), "--out", str(out)]) == 0
        run = next(p for p in out.iterdir() if p.is_dir())
        capsys.readouterr()
        assert main(["evaluate", str(run / "snapshot.bin"), "--part", "all"]) == 0
        rep = last_json(capsys.readouterr().out)
        assert rep["n"] == 4000
        assert rep["log_loss"] == pytest.approx(math.log(2), abs=1e-12)
        assert abs(rep["empirical_ctr"] - 0.5) < 0.05

    def test_truncated_snapshot(self, tmp_path, data, capsys):
        cfg = write_cfg(tmp_path, data_path=str(data))
        out = tmp_path / "runs"
        main(["train", str(cfg), "--out", str(out)])
        snap = next(p for p in out.iterdir() if p.is_dir()) / "snapshot.bin"
        snap.write_bytes(snap.read_bytes()[:-10])
        assert main(["evaluate", str(snap)]) == 1
        assert "checksum" in capsys.readouterr().err


class TestGrid:
    def test_single_value_axis(self, tmp_path, data, capsys):
        cfg = write_cfg(tmp_path, data_path=str(data), optimizer={"learning_rate": [0.003]})
        out = tmp_path / "runs"
        assert main(["grid", str(cfg), "--out", str(out)]) == 0
        assert "1 configuration(s)" in capsys.readouterr().out
        grid_dir = next(out.glob("grid-*"))
        assert len((grid_dir / "ledger.jsonl").read_text().splitlines()) == 1
        assert (grid_dir / "best_snapshot.bin").is_file()

    def test_lr_weight_protocol_and_resume(self, tmp_path, data, capsys):
        cfg = write_cfg(tmp_path, data_path=str(data),
                        linear_modules=[{"kind": "reweight"}],
                        optimizer={"learning_rate": [0.003, 0.01]})
        out = tmp_path / "runs"
        assert main(["grid", str(cfg), "--out", str(out)]) == 0
        first = capsys.readouterr().out
        assert "2 configuration(s)" in first and "resumed" not in first
        ledger = next(out.glob("grid-*")) / "ledger.jsonl"
        recs = [json.loads(x) for x in ledger.read_text().splitlines()]
        assert sorted(r["assignment"]["optimizer.learning_rate"] for r in recs) == [0.003, 0.01]
        assert main(["grid", str(cfg), "--out", str(out)]) == 0
        assert capsys.readouterr().out.count("(resumed)") == 2
        assert len(ledger.read_text().splitlines()) == 2

    def test_module_axes(self, tmp_path, data, capsys):
        cfg = write_cfg(tmp_path, data_path=str(data), num_factors=3, max_rows=800,
                        interaction_modules=[{"kind": "scale", "factor": [0.5, 1],
                                              "activation": ["relu", "tanh"]}])
        assert main(["grid", str(cfg), "--out", str(tmp_path / "r")]) == 0
        out = capsys.readouterr().out
        assert "4 configuration(s)" in out and "interaction_modules.0.factor" in out

    def test_invalid_point_rejected_before_running(self, tmp_path, data, capsys):
        cfg = write_cfg(tmp_path, data_path=str(data), num_factors=3,
                        interaction_modules=[{"kind": "scale", "factor": [0.01, 1]}])
        assert main(["grid", str(cfg), "--out", str(tmp_path / "r")]) == 2
        assert "factor=0.01" in capsys.readouterr().err
        assert not (tmp_path / "r").exists()


class TestParamCount:
    def run(self, tmp_path, capsys, **kw):
        cfg = write_cfg(tmp_path, num_feats=26, data_format="criteo", num_factors=6, **kw)
        assert main(["param-count", str(cfg), "--json"]) == 0
        return json.loads(capsys.readouterr().out)

    def test_reweight(self, tmp_path, capsys):
        (row,) = self.run(tmp_path, capsys, interaction_modules=[{"kind": "reweight"}])
        assert row["enumerated"] == row["table_formula"] == 4082 and row["match"]

    def test_fm_embed(self, tmp_path, capsys):
        (row,) = self.run(tmp_path, capsys,
                          interaction_modules=[{"kind": "fm_embed", "latent_size": 9}])
        assert row["enumerated"] == row["table_formula"] == 1404

    def test_scale_reports_mismatch(self, tmp_path, capsys):
        (row,) = self.run(tmp_path, capsys,
                          interaction_modules=[{"kind": "scale", "hidden_layers": 1}])
        assert row["match"] is False and row["enumerated"] != row["table_formula"]
        assert "mismatch" in row["note"]

    def test_both_target_gives_two_rows(self, tmp_path, capsys):
        rows = self.run(tmp_path, capsys, both_modules=["reweight"])
        assert [(r["path"], r["K"], r["enumerated"]) for r in rows] == [
            ("linear", 1, 26 * 27), ("interaction", 6, 4082)]

    def test_table_output(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, num_feats=26, data_format="criteo", num_factors=6,
                        interaction_modules=["encode"])
        assert main(["param-count", str(cfg)]) == 0
        assert "not a layer-by-layer" in capsys.readouterr().out


def test_hash_inspect(capsys):
    assert main(["hash-inspect", "68fd1e64", "80e26c9b", "--position", "3",
                 "--num-bins", "1000", "--mode", "per_feature", "--seed", "7"]) == 0
    lines = capsys.readouterr().out.splitlines()
    cfg = HasherConfig(1000, "per_feature", 7)
    for tok, line in zip(["68fd1e64", "80e26c9b"], lines):
        assert f"index={hash_token(tok, 3, cfg)}" in line


def test_no_subcommand_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2
