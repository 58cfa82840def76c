import numpy as np
import pytest

from cdiffmr import cli
from cdiffmr import io as cio
from cdiffmr.errors import TrainingDivergedError
from cdiffmr.fourier import rel_l2_error
from cdiffmr.restorers import ConvRestorer
from cdiffmr.training import ModelCheckpoint


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli") / "data"
    assert run("phantom", "--count", 10, "--size", 32, "--seed", 7, "--out", d) == 0
    return d


def test_phantom_writes_dataset_and_is_deterministic(data_dir, tmp_path):
    names, stack = cio.read_dataset(data_dir)
    assert len(names) == 10 and stack.shape == (10, 32, 32)
    assert (data_dir / "run.cfg").exists()
    assert run("phantom", "--count", 10, "--size", 32, "--seed", 7, "--out", tmp_path / "b") == 0
    for n in names:
        assert (data_dir / n).read_bytes() == (tmp_path / "b" / n).read_bytes()


def test_phantom_usage_errors(tmp_path):
    assert run("phantom", "--count", 0, "--out", tmp_path) == cli.EXIT_USAGE
    assert run("phantom", "--bogus") == cli.EXIT_USAGE
    assert run() == cli.EXIT_USAGE


def test_seed_env(tmp_path, monkeypatch):
    monkeypatch.setenv("CDIFF_SEED", "7")
    assert run("phantom", "--count", 1, "--size", 32, "--out", tmp_path / "e") == 0
    assert run("phantom", "--count", 1, "--size", 32, "--seed", 7, "--out", tmp_path / "f") == 0
    a = (tmp_path / "e" / "slice_00000.cim").read_bytes()
    assert a == (tmp_path / "f" / "slice_00000.cim").read_bytes()
    monkeypatch.setenv("CDIFF_SEED", "x")
    assert run("phantom", "--count", 1, "--out", tmp_path / "g") == cli.EXIT_USAGE


@pytest.mark.parametrize("kind,af,tp", [("log", 8, 46), ("lin", 8, 89), ("lin", 16, 95), ("log", 16, 61), ("log", 1, 0)])
def test_schedule_prints_start(capsys, kind, af, tp):
    assert run("schedule", "--T", 100, "--sr-min", 0.01, "--kind", kind, "--af", af) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[-1].endswith(f"T'={tp}")
    assert len(out) == 1 + 1 + 101 + 1
    assert out[2].split() == ["0", "1.000000", "64"]


def test_schedule_unsupported_rate(capsys):
    assert run("schedule", "--af", 200) == cli.EXIT_CONFIG
    assert "larger than the preset degraded images" in capsys.readouterr().err


def test_mask_files(tmp_path):
    assert run("mask", "--width", 64, "--af", 4, "--out", tmp_path / "m.kms",
               "--family-out", tmp_path / "f.kfm", "--kind", "lin") == 0
    assert cio.read_mask(tmp_path / "m.kms").n_selected == 16
    assert cio.read_family(tmp_path / "f.kfm").T == 100
    assert run("mask", "--width", 64) == cli.EXIT_USAGE


@pytest.fixture(scope="module")
def trained(data_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "run"
    assert run("train", "--data", data_dir, "--grad-steps", 4, "--channels", 4, "--depth", 2,
               "--batch-size", 2, "--sr-min", 0.1, "--family-cf", 0.08, "--out", out) == 0
    return out


def test_train_outputs_and_determinism(trained, data_dir, tmp_path):
    rows = cio.read_csv(trained / "loss.csv")
    assert [r["step"] for r in rows] == ["1", "2", "3", "4"]
    ck = cio.read_checkpoint(trained / "model.ckp")
    assert ck.metadata["family_center_fraction"] == 0.08 and ck.metadata["sr_min"] == 0.1
    assert run("train", "--config", trained / "run.cfg", "--out", tmp_path / "again") == 0
    assert (tmp_path / "again" / "model.ckp").read_bytes() == (trained / "model.ckp").read_bytes()


def test_train_zero_steps_is_initial(data_dir, tmp_path):
    assert run("train", "--data", data_dir, "--grad-steps", 0, "--channels", 4, "--depth", 2,
               "--seed", 5, "--out", tmp_path) == 0
    ck = cio.read_checkpoint(tmp_path / "model.ckp")
    init = ConvRestorer.initialized(4, 2, seed=5)
    assert np.array_equal(ck.payload, init.flat_params())


def test_train_divergence_exit(data_dir, tmp_path, monkeypatch):
    def boom(*a, **k):
        raise TrainingDivergedError("loss became non-finite", step=3,
                                    checkpoint=ModelCheckpoint.from_restorer(ConvRestorer(2, 1)))

    monkeypatch.setattr(cli, "train", boom)
    assert run("train", "--data", data_dir, "--out", tmp_path) == cli.EXIT_DIVERGED
    assert (tmp_path / "model.ckp.diverged").exists()
    assert not (tmp_path / "model.ckp").exists()


def test_train_missing_data(tmp_path):
    assert run("train", "--data", tmp_path / "none", "--out", tmp_path / "o") == cli.EXIT_IO


def test_recon_oracle_verify(data_dir, tmp_path, capsys):
    src = data_dir / "slice_00003.cim"
    assert run("recon", "--input", src, "--oracle", "--snap", "--af", 8, "--out", tmp_path / "on",
               "--verify", "--pgm", "--snapshots") == 0
    out = capsys.readouterr().out
    assert "verify: ok" in out and "rel_l2_error=" in out
    truth = cio.read_image(src)
    on = cio.read_image(tmp_path / "on" / "recon.cim")
    assert rel_l2_error(on, truth) < 1e-6  # float32 file precision
    trace = cio.read_csv(tmp_path / "on" / "trace.csv")
    assert len(list((tmp_path / "on" / "snapshots").iterdir())) == len(trace)
    assert (tmp_path / "on" / "recon.pgm").read_bytes().startswith(b"P5")
    assert run("recon", "--input", src, "--oracle", "--snap", "--af", 8, "--spc", "off",
               "--out", tmp_path / "off", "--verify") == 0
    off = cio.read_image(tmp_path / "off" / "recon.cim")
    assert len(cio.read_csv(tmp_path / "off" / "trace.csv")) == 100 > len(trace)
    assert rel_l2_error(off, on) < 1e-6


def test_recon_zerofill_dcc_verify(data_dir, tmp_path):
    assert run("recon", "--input", data_dir / "slice_00001.cim", "--zerofill", "--dcc", "on",
               "--terminal-dc", "off", "--af", 4, "--out", tmp_path, "--verify") == 0


def test_recon_verify_failure(data_dir, tmp_path, monkeypatch):
    real = cli.reconstruct

    def corrupt(y, restorer, cfg):
        x, trace = real(y, restorer, cfg)
        return x + 0.01, trace

    monkeypatch.setattr(cli, "reconstruct", corrupt)
    assert run("recon", "--input", data_dir / "slice_00001.cim", "--oracle", "--snap",
               "--out", tmp_path, "--verify") == cli.EXIT_VERIFY


def test_recon_errors(data_dir, tmp_path):
    src = data_dir / "slice_00001.cim"
    assert run("recon", "--input", src, "--out", tmp_path) == cli.EXIT_USAGE
    assert run("recon", "--input", src, "--oracle", "--zerofill", "--out", tmp_path) == cli.EXIT_USAGE
    assert run("recon", "--input", src, "--oracle", "--dcc", "maybe", "--out", tmp_path) == cli.EXIT_USAGE
    cio.write_mask(tmp_path / "wide.kms", cli.gen_task_mask(64, 4))
    assert run("recon", "--input", src, "--oracle", "--mask", tmp_path / "wide.kms", "--out", tmp_path) == cli.EXIT_CONFIG
    assert run("recon", "--input", src, "--oracle", "--af", 200, "--center-fraction", 0.001,
               "--out", tmp_path) == cli.EXIT_CONFIG


def test_recon_uses_checkpoint_family(trained, data_dir, tmp_path):
    assert run("recon", "--input", data_dir / "slice_00002.cim", "--ckpt", trained / "model.ckp",
               "--af", 4, "--out", tmp_path / "a") == 0
    cfg = (tmp_path / "a" / "run.cfg").read_text()
    assert "sr_min=0.1\n" in cfg and "family_cf=0.08\n" in cfg
    assert run("recon", "--config", tmp_path / "a" / "run.cfg", "--out", tmp_path / "b") == 0
    for name in ("recon.cim", "trace.csv", "mask.kms"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_config_precedence(tmp_path, data_dir):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# comment\ncount = 3\nsize=32  # trailing\n")
    assert run("phantom", "--config", cfg, "--out", tmp_path / "d", "--count", 2) == 0
    assert len(cio.read_dataset(tmp_path / "d")[0]) == 2
    assert run("phantom", "--config", cfg, "--out", tmp_path / "e") == 0
    assert len(cio.read_dataset(tmp_path / "e")[0]) == 3
    cfg.write_text("nonsense=1\n")
    assert run("phantom", "--config", cfg, "--out", tmp_path / "f") == cli.EXIT_USAGE
    assert run("phantom", "--config", tmp_path / "missing.cfg", "--out", tmp_path / "f") == cli.EXIT_USAGE


def test_eval_grid(data_dir, tmp_path):
    assert run("eval", "--data", data_dir, "--oracle", "--snap", "--af", "8,16", "--schedule", "lin,log",
               "--out", tmp_path) == 0
    rows = cio.read_csv(tmp_path / "report.csv")
    assert len(rows) == 40
    assert list(rows[0]) == ["slice", "af", "schedule", "ssim", "psnr", "steps", "seconds"]
    assert {float(r["psnr"]) for r in rows} == {99.0}
    assert all(abs(float(r["ssim"]) - 1) < 1e-12 for r in rows)
    summary = cio.read_csv(tmp_path / "summary.csv")
    assert len(summary) == 8 and {r["stat"] for r in summary} == {"mean", "std"}
    assert len(cio.read_csv(tmp_path / "bars.csv")) == 4


def test_eval_sweep_and_jobs(data_dir, tmp_path):
    args = ["eval", "--data", data_dir, "--zerofill", "--af", "8", "--schedule", "log",
            "--sweep-start", "1..Tp:5"]
    assert run(*args, "--out", tmp_path / "a") == 0
    assert run(*args, "--jobs", 3, "--out", tmp_path / "b") == 0
    sweep = cio.read_csv(tmp_path / "a" / "sweep.csv")
    tp = int(sweep[0]["tprime"])
    assert sorted({int(r["start"]) for r in sweep}) == list(range(1, tp + 1, 5))
    assert (tmp_path / "a" / "sweep.csv").read_bytes() == (tmp_path / "b" / "sweep.csv").read_bytes()
    strip = lambda p: [{k: v for k, v in r.items() if k != "seconds"} for r in cio.read_csv(p)]  # noqa: E731
    assert strip(tmp_path / "a" / "report.csv") == strip(tmp_path / "b" / "report.csv")


def test_parse_sweep():
    assert cli.parse_sweep("Tp-2..Tp+2", 46, 100) == [44, 45, 46, 47, 48]
    assert cli.parse_sweep("95..Tp+10", 95, 100) == [95, 96, 97, 98, 99, 100]
    with pytest.raises(cli.UsageError):
        cli.parse_sweep("5", 46, 100)
