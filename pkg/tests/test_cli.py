import os

import pytest

from pointweave.cli import dispatch


def run(capsys, *argv):
    code = dispatch(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_unknown_subcommand_is_usage_error(capsys):
    code, _, err = run(capsys, "frobnicate")
    assert code == 1
    assert "usage" in err.lower()


def test_no_subcommand_prints_usage(capsys):
    code, _, err = run(capsys)
    assert code == 1


def test_unknown_flag_is_usage_error(capsys):
    code, _, err = run(capsys, "gen-data", "--pairs", "3", "--out", "x", "--bogus", "1")
    assert code == 1


def test_gen_data_writes_declared_count(tmp_path, capsys):
    out = str(tmp_path / "data")
    code, stdout, err = run(capsys, "gen-data", "--kind", "sphere", "--n", "16",
                            "--pairs", "5", "--seed", "7", "--out", out)
    assert code == 0
    files = [f for f in os.listdir(out) if f.endswith(".pair")]
    assert len(files) == 5
    assert os.path.exists(os.path.join(out, "manifest.txt"))
    assert "resolved-config gen-data" in err


def test_gen_data_unknown_kind_is_runtime_error(tmp_path, capsys):
    code, _, err = run(capsys, "gen-data", "--kind", "blob", "--pairs", "2",
                       "--out", str(tmp_path / "d"))
    assert code == 2
    assert "error" in err.lower()


def test_gradcheck_passes_below_threshold(capsys):
    code, stdout, _ = run(capsys, "gradcheck", "--n", "8", "--k", "2", "--layers", "2",
                          "--dg", "3", "--df", "4", "--seed", "0")
    assert code == 0
    assert "max relative error" in stdout
    assert "ok" in stdout


def test_gradcheck_impossible_threshold_fails(capsys):
    code, stdout, err = run(capsys, "gradcheck", "--n", "8", "--k", "2", "--layers", "2",
                            "--dg", "3", "--df", "4", "--threshold", "0")
    assert code == 2


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    base = tmp_path_factory.mktemp("cliflow")
    data = str(base / "data")
    run_dir = str(base / "run")
    assert dispatch(["gen-data", "--kind", "sphere", "--n", "16", "--pairs", "4",
                     "--test-pairs", "2", "--seed", "3", "--out", data]) == 0
    assert dispatch(["train", "--data", data, "--out", run_dir, "--k", "4",
                     "--layers", "2", "--dg", "3", "--df", "6", "--batch", "2",
                     "--epochs", "1", "--seed", "0", "--encoder-hidden", "16",
                     "--encoder-neighbors", "4", "--init-scale", "0.1"]) == 0
    return base, data, run_dir


def test_train_emits_checkpoint_and_log(trained_run, capsys):
    _, _, run_dir = trained_run
    assert os.path.exists(os.path.join(run_dir, "checkpoint", "manifest.txt"))
    assert os.path.exists(os.path.join(run_dir, "checkpoint", "payload.bin"))
    log = open(os.path.join(run_dir, "train_log.txt")).read().splitlines()
    assert len(log) == 1


def test_eval_writes_curves(trained_run, capsys):
    base, data, run_dir = trained_run
    out = str(base / "eval")
    code, stdout, _ = run(capsys, "eval", "--checkpoint",
                          os.path.join(run_dir, "checkpoint"), "--data", data,
                          "--radii", "0,0.02,0.04", "--out", out)
    assert code == 0
    lines = open(os.path.join(out, "curves.csv")).read().splitlines()
    assert lines[0] == "radius,method,corr"
    assert len(lines) == 1 + 4 * 3
    assert os.path.exists(os.path.join(out, "curves.svg"))
    assert "esfw:" in stdout


def test_match_prints_correspondences(trained_run, capsys):
    base, data, run_dir = trained_run
    pair_file = os.path.join(data, "test_00004.pair")
    code, stdout, err = run(capsys, "match", "--checkpoint",
                            os.path.join(run_dir, "checkpoint"), "--pair", pair_file)
    assert code == 0
    lines = stdout.strip().splitlines()
    assert len(lines) == 16
    for n, line in enumerate(lines):
        a, b, score = line.split(",")
        assert int(a) == n
        assert -1 <= int(b) < 16
        if int(b) >= 0:
            float(score)
    assert "resolved-config match" in err


def test_plot_renders_curves_csv(trained_run, tmp_path, capsys):
    base, data, run_dir = trained_run
    eval_dir = str(base / "eval")
    if not os.path.exists(os.path.join(eval_dir, "curves.csv")):
        dispatch(["eval", "--checkpoint", os.path.join(run_dir, "checkpoint"),
                  "--data", data, "--radii", "0,0.02", "--out", eval_dir])
    out = str(tmp_path / "replot.svg")
    code, stdout, _ = run(capsys, "plot", "--csv",
                          os.path.join(eval_dir, "curves.csv"), "--out", out)
    assert code == 0
    assert os.path.exists(out)


def test_plot_rejects_unknown_header(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("alpha,beta\n1,2\n")
    code, _, err = run(capsys, "plot", "--csv", str(bad), "--out",
                       str(tmp_path / "x.svg"))
    assert code == 2


def test_ablate_emits_table(trained_run, capsys):
    base, data, _ = trained_run
    out = str(base / "ablate")
    code, stdout, _ = run(capsys, "ablate", "--data", data, "--axis", "L",
                          "--values", "2,3", "--out", out, "--k", "4",
                          "--layers", "2", "--dg", "3", "--df", "6", "--batch", "2",
                          "--epochs", "1", "--encoder-hidden", "16",
                          "--encoder-neighbors", "4", "--init-scale", "0.1")
    assert code == 0
    lines = open(os.path.join(out, "ablation.csv")).read().splitlines()
    assert lines[0] == "axis_value,method,corr@0"
    assert sum(1 for l in lines[1:] if l.split(",")[1] == "esfw") == 2
    assert os.path.exists(os.path.join(out, "ablation.svg"))


def test_resolved_config_echoes_defaults(trained_run, capsys):
    base, data, run_dir = trained_run
    out = str(base / "eval2")
    _, _, err = run(capsys, "eval", "--checkpoint", os.path.join(run_dir, "checkpoint"),
                    "--data", data, "--out", out)
    header = [l for l in err.splitlines() if l.startswith("resolved-config")][0]
    assert "radii=0,0.01,0.02,0.03,0.04,0.05,0.06" in header
    assert "nndr_threshold=0.8" in header
    assert "split=test" in header


def test_eval_missing_split_is_runtime_error(tmp_path, capsys):
    data = str(tmp_path / "data")
    dispatch(["gen-data", "--kind", "sphere", "--n", "16", "--pairs", "2",
              "--seed", "1", "--out", data])
    run_dir = str(tmp_path / "run")
    dispatch(["train", "--data", data, "--out", run_dir, "--k", "4", "--layers", "2",
              "--dg", "3", "--df", "6", "--batch", "2", "--epochs", "1",
              "--encoder-hidden", "16", "--encoder-neighbors", "4"])
    code, _, err = run(capsys, "eval", "--checkpoint", os.path.join(run_dir, "checkpoint"),
                       "--data", data, "--out", str(tmp_path / "e"))
    assert code == 2
    assert "no pairs" in err
