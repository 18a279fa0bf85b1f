import json

import numpy as np
import pytest

from subsurr.cli import main
from subsurr.exemplars import bar1d
from subsurr.pod import PodBasis
from subsurr.surrogates import LlsModel, save_model


def _cfg(tmp_path, name, data):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


@pytest.fixture
def bar_run(tmp_path):
    out = tmp_path / "out"
    gen = _cfg(tmp_path, "gen.json", {"exemplar": "bar1d", "exemplar_options": {"n_steps": 4}})
    assert main(["generate", gen, "--out", str(out)]) == 0
    return tmp_path, out


def test_generate_pod_train_solve(bar_run):
    tmp, out = bar_run
    assert json.loads((out / "manifest.json").read_text())["n_snapshots"] == 16
    pod = _cfg(tmp, "pod.json", {"snapshots": "out/snapshots", "K": 2})
    assert main(["pod", pod, "--out", str(out)]) == 0
    # two interface dofs leave no room for a combined basis of size 4
    assert (out / "basis_u.json").exists() and not (out / "basis_star.json").exists()
    pod = _cfg(tmp, "pod.json", {"snapshots": "out/snapshots", "K": 1})
    assert main(["pod", pod, "--out", str(out)]) == 0
    assert (out / "basis_star.json").exists()
    assert (out / "residual_energy.csv").read_text().startswith("K,displacement,force")
    train = _cfg(tmp, "train.json", {"snapshots": "out/snapshots", "K": 1, "form": "spsd-nn",
                                     "train": {"epochs": 20, "batch_size": 4}})
    assert main(["train", train, "--out", str(out)]) == 0
    echo = json.loads((out / "train_config.json").read_text())
    assert echo["train"]["lr_schedule"][0] == 1e-3 and echo["epochs_run"] == 20
    assert (out / "training_log.csv").read_text().startswith("epoch,train_loss,val_loss,lr")
    solve = _cfg(tmp, "solve.json", {"exemplar": "bar1d", "exemplar_options": {"n_steps": 4},
                                     "model": "out/spsd-nn_K1.model",
                                     "compare_monolithic": True})
    assert main(["solve", solve, "--out", str(tmp / "s")]) == 0
    diag = json.loads((tmp / "s" / "diagnostics.json").read_text())
    for key in ("newton_iters", "cg_iters", "min_eig", "max_eig", "steps", "qoi"):
        assert key in diag
    assert len(diag["qoi"]["left_0"]) == 4
    assert (tmp / "s" / "qoi.csv").read_text().startswith("t,left_0,fem_left_0")


def test_schur_solve_matches_fem(tmp_path):
    cfg = _cfg(tmp_path, "s.json", {"exemplar": "bar1d", "model": "schur",
                                    "compare_monolithic": True})
    assert main(["solve", cfg, "--out", str(tmp_path / "o")]) == 0
    d = json.loads((tmp_path / "o" / "diagnostics.json").read_text())
    assert d["status"] == "ok" and d["qoi_relative_error"]["left_0"] < 1e-12


def test_singular_closure_exit_4(tmp_path):
    ex = bar1d()
    b = PodBasis(np.eye(2), np.ones(2))
    save_model(tmp_path / "sing.model", LlsModel(b, b, -0.5 * np.eye(2), np.zeros(2),
                                                 ex.decomp.dof_order))
    cfg = _cfg(tmp_path, "s.json", {"exemplar": "bar1d", "model": "sing.model"})
    assert main(["solve", cfg, "--out", str(tmp_path / "o")]) == 4
    d = json.loads((tmp_path / "o" / "diagnostics.json").read_text())
    assert d["status"] == "spd_violation"


def test_spsd_basis_too_large_for_interface(bar_run, capsys):
    tmp, out = bar_run
    cfg = _cfg(tmp, "t.json", {"snapshots": "out/snapshots", "K": 2, "form": "spsd-lls"})
    assert main(["train", cfg, "--out", str(out)]) == 2
    assert "2K <= 2" in capsys.readouterr().err
    assert not (out / "spsd-lls_K2.model").exists()


def test_solver_failure_exit_3(tmp_path):
    cfg = _cfg(tmp_path, "s.json", {"exemplar": "bar1d", "model": "schur",
                                    "newton": {"max_iters": 0}})
    assert main(["solve", cfg, "--out", str(tmp_path / "o")]) == 3


def test_usage_errors(tmp_path, capsys):
    empty = _cfg(tmp_path, "e.json", {"exemplar": "bar1d", "trajectories": []})
    assert main(["generate", empty, "--out", str(tmp_path)]) == 2
    assert "empty" in capsys.readouterr().err
    bad = _cfg(tmp_path, "b.json", {"snapshots": "x", "K": 1, "form": "gp"})
    assert main(["train", bad, "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "lls, spsd-lls, nn, spsd-nn" in err
    missing = _cfg(tmp_path, "m.json", {"exemplar": "bar1d", "model": "nowhere.model"})
    assert main(["solve", missing, "--out", str(tmp_path)]) == 2
    assert "nowhere.model" in capsys.readouterr().err
    assert main(["pod", str(tmp_path / "absent.json")]) == 2
    ex = _cfg(tmp_path, "x.json", {"exemplar": "torus"})
    assert main(["generate", ex, "--out", str(tmp_path)]) == 2
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == 2


def test_bad_log_level(tmp_path, monkeypatch):
    monkeypatch.setenv("SUBSURR_LOG", "chatty")
    assert main(["analyze1d", "--out", str(tmp_path)]) == 2


def test_analyze1d(tmp_path, capsys):
    assert main(["analyze1d", "--out", str(tmp_path)]) == 0
    assert capsys.readouterr().out.count("PASS") == 5
    rep = json.loads((tmp_path / "analysis1d.json").read_text())
    assert all(rep["checks"].values())
    assert (tmp_path / "analysis1d.txt").exists()


def test_study_outputs(bar_run):
    tmp, out = bar_run
    cfg = _cfg(tmp, "study.json", {"exemplar": "bar1d", "exemplar_options": {"n_steps": 4},
                                   "snapshots": "out/snapshots", "forms": ["lls"], "K": [1, 2]})
    assert main(["study", cfg, "--out", str(tmp / "st"), "--threads", "2"]) == 0
    lines = (tmp / "st" / "study.csv").read_text().splitlines()
    assert lines[0].startswith("form,K,case") and len(lines) == 3
    assert (tmp / "st" / "error_vs_K.svg").exists() and (tmp / "st" / "qoi_case0.svg").exists()


def test_reruns_are_byte_identical(tmp_path):
    def run(d):
        gen = _cfg(tmp_path, "g.json", {"exemplar": "bar1d", "exemplar_options": {"n_steps": 3}})
        main(["generate", gen, "--out", str(d), "--seed", "5"])
        tr = _cfg(tmp_path, "t.json", {"snapshots": str(d / "snapshots"), "K": 1, "form": "nn",
                                       "train": {"epochs": 15, "batch_size": 3}})
        main(["train", tr, "--out", str(d), "--seed", "5"])
    run(tmp_path / "a")
    run(tmp_path / "b")
    for f in sorted((tmp_path / "a").iterdir()):
        other = tmp_path / "b" / f.name
        if f.name == "manifest.json":
            ma, mb = json.loads(f.read_text()), json.loads(other.read_text())
            ma.pop("created"), mb.pop("created")
            assert ma == mb
        else:
            assert f.read_bytes() == other.read_bytes(), f.name
