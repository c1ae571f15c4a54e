import json
import os

import numpy as np
import pytest

from sppinn.cli import main
from sppinn.report import read_csv

TINY_PDE = """
[pde]
adam_epochs = 4
lbfgs_iters = 2
n_f = 120
n_i = 40
n_b = 40
n_e = 16
[dvdm]
dt = 0.5
[report]
figures = no
"""

TINY_CLF = """
[classifier]
subset = 120
epochs = 2
batch_size = 60
times_per_example = 2
[data]
root = {root}
synth_train = 120
synth_test = 50
[attacks]
eval_subset = 30
eps_grid = 2,8
steps = 3
[report]
figures = no
"""


def write_ini(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def manifest_of(out):
    with open(os.path.join(out, "manifest.json")) as fh:
        return json.load(fh)


class TestParsing:
    def test_unknown_flag_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["dvdm", "--frobnicate"])
        assert exc.value.code == 2
        assert "usage" in capsys.readouterr().err

    def test_unknown_task_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["calibrate"])
        assert exc.value.code == 2

    def test_missing_task_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2


class TestOracleRun:
    def test_writes_field_and_nonincreasing_energy(self, tmp_path):
        ini = write_ini(tmp_path, TINY_PDE)
        out = str(tmp_path / "out")
        assert main(["dvdm", "--config", ini, "--out", out]) == 0
        header, rows = read_csv(os.path.join(out, "oracle_field.csv"))
        assert header == ("x", "t", "u")
        eh, erows = read_csv(os.path.join(out, "energy.csv"))
        energies = [float(r[1]) for r in erows]
        assert len(energies) == 9  # T=4 at dt=0.5
        assert all(b <= a + 1e-8 for a, b in zip(energies, energies[1:]))
        doc = manifest_of(out)
        assert doc["status"] == "ok"
        assert doc["task"] == "dvdm"
        assert set(doc["artifacts"]) == {"oracle_field.csv", "energy.csv"}
        assert "config_sha256" in doc and len(doc["config_sha256"]) == 64
        assert doc["versions"]["numpy"] == np.__version__
        assert doc["timings"]["total_s"] > 0


class TestPdeRuns:
    def test_train_writes_all_artifacts(self, tmp_path):
        ini = write_ini(tmp_path, TINY_PDE)
        out = str(tmp_path / "out")
        assert main(["pde-train", "--config", ini, "--seed", "0", "--out", out]) == 0
        for name in ("u_field.csv", "energy.csv", "trace.csv", "pde_net.json",
                     "manifest.json"):
            assert os.path.exists(os.path.join(out, name)), name
        header, rows = read_csv(os.path.join(out, "trace.csv"))
        assert header == ("step", "loss", "l_eqn", "l_bnd", "l_ini", "l_strc", "lr")
        assert len(rows) >= 2

    def test_eval_reproduces_training_export(self, tmp_path):
        ini = write_ini(tmp_path, TINY_PDE)
        out = str(tmp_path / "train")
        main(["pde-train", "--config", ini, "--out", out])
        out2 = str(tmp_path / "eval")
        code = main(["pde-eval", "--config", ini, "--out", out2,
                     "--net", os.path.join(out, "pde_net.json")])
        assert code == 0
        a = open(os.path.join(out, "u_field.csv"), "rb").read()
        b = open(os.path.join(out2, "u_field.csv"), "rb").read()
        assert a == b

    def test_eval_without_net_fails_with_manifest(self, tmp_path):
        ini = write_ini(tmp_path, TINY_PDE)
        out = str(tmp_path / "out")
        assert main(["pde-eval", "--config", ini, "--out", out]) == 1
        doc = manifest_of(out)
        assert doc["status"] == "failed"
        assert "--net" in doc["error"]


class TestClassifierRuns:
    def test_train_attack_dump_chain(self, tmp_path):
        ini = write_ini(tmp_path, TINY_CLF.format(root=tmp_path / "data"))
        out = str(tmp_path / "out")
        assert main(["clf-train", "--config", ini, "--seed", "1", "--out", out]) == 0
        header, rows = read_csv(os.path.join(out, "clf_trace.csv"))
        assert header == ("epoch", "ce", "l_eqn", "l_ini", "acc", "viol")
        assert len(rows) == 2
        assert all(float(r[5]) <= 1e-9 for r in rows)  # stability invariant per epoch

        assert main(["clf-attack", "--config", ini, "--seed", "1", "--out", out]) == 0
        header, rows = read_csv(os.path.join(out, "robustness.csv"))
        assert header == ("attack", "epsilon", "accuracy", "n_samples", "seed")
        assert [r[0] for r in rows] == ["clean", "ifgsm", "ifgsm", "pgd", "pgd"]
        assert all(r[3] == "30" for r in rows)

        assert main(["dump-dynamics", "--config", ini, "--out", out]) == 0
        header, rows = read_csv(os.path.join(out, "alpha.csv"))
        assert header == ("i", "j", "alpha")
        assert len(rows) == 36 * (36 * 5 + 1)


class TestDiffTask:
    def test_diff_of_run_against_itself_is_zero(self, tmp_path):
        ini = write_ini(tmp_path, TINY_PDE)
        out = str(tmp_path / "out")
        main(["dvdm", "--config", ini, "--out", out])
        field = os.path.join(out, "oracle_field.csv")
        out2 = str(tmp_path / "diff")
        assert main(["diff", "--a", field, "--b", field, "--out", out2]) == 0
        _, rows = read_csv(os.path.join(out2, "diff.csv"))
        assert all(float(r[1]) == 0.0 and float(r[2]) == 0.0 for r in rows)

    def test_diff_without_inputs_fails(self, tmp_path):
        out = str(tmp_path / "out")
        assert main(["diff", "--out", out]) == 1
        assert manifest_of(out)["status"] == "failed"


class TestFailureManifest:
    def test_bad_config_key_reported(self, tmp_path):
        ini = write_ini(tmp_path, "[pde]\nbogus = 1\n")
        out = str(tmp_path / "out")
        assert main(["dvdm", "--config", ini, "--out", out]) == 1
        doc = manifest_of(out)
        assert doc["status"] == "failed"
        assert "bogus" in doc["error"]
        assert doc["artifacts"] == []


class TestDeterminism:
    def test_same_seed_byte_identical_csvs(self, tmp_path):
        ini = write_ini(tmp_path, TINY_PDE)
        outs = [str(tmp_path / f"run{i}") for i in (1, 2)]
        for out in outs:
            assert main(["pde-train", "--config", ini, "--seed", "5", "--out", out]) == 0
        for name in ("u_field.csv", "energy.csv", "trace.csv"):
            a = open(os.path.join(outs[0], name), "rb").read()
            b = open(os.path.join(outs[1], name), "rb").read()
            assert a == b, name

    def test_different_seeds_differ(self, tmp_path):
        ini = write_ini(tmp_path, TINY_PDE)
        outs = [str(tmp_path / f"run{i}") for i in (1, 2)]
        main(["pde-train", "--config", ini, "--seed", "1", "--out", outs[0]])
        main(["pde-train", "--config", ini, "--seed", "2", "--out", outs[1]])
        a = open(os.path.join(outs[0], "u_field.csv"), "rb").read()
        b = open(os.path.join(outs[1], "u_field.csv"), "rb").read()
        assert a != b


class TestFigureEmission:
    def test_png_written_when_enabled(self, tmp_path):
        ini = write_ini(tmp_path, "[dvdm]\ndt = 0.5\n")
        out = str(tmp_path / "out")
        assert main(["dvdm", "--config", ini, "--out", out]) == 0
        doc = manifest_of(out)
        assert "oracle_field.png" in doc["artifacts"]
        assert "energy.png" in doc["artifacts"]
        assert os.path.getsize(os.path.join(out, "energy.png")) > 1000
