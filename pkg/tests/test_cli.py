"""CLI pipeline: subcommands, config precedence, exit codes, artifacts."""

import pytest

from aegm.cli import main

TINY = ["--train-clips", "6", "--test-normal", "3", "--test-anomaly", "3",
        "--clip-seconds", "1.0", "--seed", "13"]


def run_pipeline(base, epochs="3", seed="13"):
    """synth -> features -> train -> score -> eval under base/."""
    data = base / "data"
    feats = base / "feats"
    run = base / "run"
    scores = base / "scores"
    report = base / "report"
    assert main(["synth", "--out", str(data)] + TINY) == 0
    assert main(["features", "--data", str(data), "--machine", "synth",
                 "--out", str(feats)]) == 0
    assert main(["train", "--features", str(feats), "--out", str(run),
                 "--epochs", epochs, "--seed", seed,
                 "--encoder-layers", "32,32", "--bottleneck", "8"]) == 0
    ckpt = run / f"ckpt_epoch_{epochs}.aegm"
    assert main(["score", "--features", str(feats), "--checkpoint", str(ckpt),
                 "--out", str(scores)]) == 0
    assert main(["eval", "--scores", str(scores),
                 "--manifest", str(data / "manifest.csv"),
                 "--out", str(report)]) == 0
    return data, feats, run, scores, report


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    base = tmp_path_factory.mktemp("pipe")
    return run_pipeline(base)


class TestPipelineArtifacts:
    def test_synth_tree_and_manifest(self, pipeline):
        data, *_ = pipeline
        wavs = list(data.rglob("*.wav"))
        assert len(wavs) == 3 * (6 + 3 + 3)
        assert (data / "manifest.csv").is_file()
        assert (data / "run_config.resolved").is_file()

    def test_features_cover_every_clip(self, pipeline):
        data, feats, *_ = pipeline
        assert len(list(feats.rglob("*.feat"))) == 36
        assert (feats / "manifest.csv").is_file()

    def test_feature_rerun_skips_up_to_date(self, pipeline, capsys):
        data, feats, *_ = pipeline
        assert main(["features", "--data", str(data), "--machine", "synth",
                     "--out", str(feats)]) == 0
        out = capsys.readouterr().out
        assert "0 written, 36 up-to-date" in out

    def test_feature_config_change_regenerates(self, pipeline, tmp_path, capsys):
        data, *_ = pipeline
        feats2 = tmp_path / "feats2"
        assert main(["features", "--data", str(data), "--machine", "synth",
                     "--out", str(feats2), "--n-mels", "64"]) == 0
        capsys.readouterr()
        assert main(["features", "--data", str(data), "--machine", "synth",
                     "--out", str(feats2), "--n-mels", "128"]) == 0
        assert "36 written" in capsys.readouterr().out

    def test_train_outputs(self, pipeline):
        _, _, run, _, _ = pipeline
        assert (run / "train_log.csv").is_file()
        assert (run / "ckpt_epoch_3.aegm").is_file()
        assert (run / "run_config.resolved").is_file()
        header = (run / "train_log.csv").read_text().splitlines()[0]
        assert header == "epoch,l_total,l_rec,l_aux,w_0,w_1,w_2,seconds"

    def test_score_emits_all_three_modes_per_section(self, pipeline):
        *_, scores, _ = pipeline
        names = sorted(p.name for p in scores.glob("anomaly_score_*.csv"))
        assert len(names) == 9  # 3 sections x 3 modes
        for mode in ("gae", "ac", "ens"):
            assert sum(1 for n in names if n.endswith(f"_{mode}.csv")) == 3
        one = (scores / "anomaly_score_synth_section_00_gae.csv").read_text().splitlines()
        assert len(one) == 6  # 3 normal + 3 anomalous test clips
        assert all(",".join(line.split(",")[:-1]).endswith(".wav") for line in one)

    def test_eval_report_contents(self, pipeline):
        *_, report = pipeline
        csv_lines = (report / "report.csv").read_text().splitlines()
        assert csv_lines[0] == "machine,section,mode,auc,pauc"
        section_rows = [l for l in csv_lines if l.startswith("synth,0")]
        assert len(section_rows) == 9
        assert (report / "report.txt").is_file()

    def test_mismatched_checkpoint_fails_with_hash_error(self, pipeline, tmp_path, capsys):
        data, feats, run, *_ = pipeline
        feats2 = tmp_path / "feats_stft"
        assert main(["features", "--data", str(data), "--machine", "synth",
                     "--out", str(feats2), "--feature", "stft"]) == 0
        rc = main(["score", "--features", str(feats2),
                   "--checkpoint", str(run / "ckpt_epoch_3.aegm"),
                   "--out", str(tmp_path / "s")])
        assert rc == 1
        assert "feature config" in capsys.readouterr().err

    def test_export_embeddings(self, pipeline, tmp_path):
        _, feats, run, _, _ = pipeline
        out = tmp_path / "emb"
        assert main(["export-embeddings", "--features", str(feats),
                     "--checkpoint", str(run / "ckpt_epoch_3.aegm"),
                     "--out", str(out), "--split", "test"]) == 0
        lines = (out / "embeddings.csv").read_text().splitlines()
        assert lines[0] == ("clip_id,section,label," +
                            ",".join(f"e_{i}" for i in range(8)) + ",z_0,z_1,z_2")
        # 18 test clips x 26 rows each
        assert len(lines) == 1 + 18 * 26
        # export is deterministic
        out2 = tmp_path / "emb2"
        assert main(["export-embeddings", "--features", str(feats),
                     "--checkpoint", str(run / "ckpt_epoch_3.aegm"),
                     "--out", str(out2), "--split", "test"]) == 0
        assert (out / "embeddings.csv").read_bytes() == (out2 / "embeddings.csv").read_bytes()


class TestCliContracts:
    def test_missing_out_is_a_usage_error(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["synth"])
        assert info.value.code == 2

    def test_unknown_flag_is_a_usage_error(self):
        with pytest.raises(SystemExit) as info:
            main(["synth", "--frobnicate"])
        assert info.value.code == 2

    def test_synth_is_idempotent(self, tmp_path):
        d1 = tmp_path / "a"
        d2 = tmp_path / "b"
        assert main(["synth", "--out", str(d1)] + TINY) == 0
        assert main(["synth", "--out", str(d2)] + TINY) == 0
        w1 = sorted(p.relative_to(d1) for p in d1.rglob("*.wav"))
        w2 = sorted(p.relative_to(d2) for p in d2.rglob("*.wav"))
        assert w1 == w2
        for rel in w1:
            assert (d1 / rel).read_bytes() == (d2 / rel).read_bytes()

    def test_env_var_supplies_option(self, tmp_path, monkeypatch):
        monkeypatch.setenv("AEGM_OUT", str(tmp_path / "envout"))
        assert main(["synth", "--train-clips", "2", "--test-normal", "2",
                     "--test-anomaly", "2", "--clip-seconds", "1.0"]) == 0
        assert (tmp_path / "envout" / "manifest.csv").is_file()

    def test_cli_beats_env_beats_config_file(self, tmp_path, monkeypatch):
        cfg = tmp_path / "aegm.cfg"
        cfg.write_text("seed=111\ntrain_clips=2\ntest_normal=2\ntest_anomaly=2\nclip_seconds=1.0\n")
        monkeypatch.setenv("AEGM_SEED", "222")
        out = tmp_path / "o"
        assert main(["synth", "--out", str(out), "--config", str(cfg),
                     "--seed", "333"]) == 0
        resolved = dict(line.split("=", 1) for line in
                        (out / "run_config.resolved").read_text().splitlines())
        assert resolved["seed"] == "333"       # CLI wins
        assert resolved["train_clips"] == "2"  # file fills the rest
        monkeypatch.setenv("AEGM_SEED", "222")
        out2 = tmp_path / "o2"
        assert main(["synth", "--out", str(out2), "--config", str(cfg)]) == 0
        resolved2 = dict(line.split("=", 1) for line in
                         (out2 / "run_config.resolved").read_text().splitlines())
        assert resolved2["seed"] == "222"      # env beats file

    def test_lock_file_blocks_concurrent_use(self, tmp_path, capsys):
        out = tmp_path / "locked"
        out.mkdir()
        (out / ".aegm.lock").write_text("9999\n")
        rc = main(["synth", "--out", str(out)] + TINY)
        assert rc == 1
        assert "lock" in capsys.readouterr().err.lower()
        assert (out / ".aegm.lock").exists()  # foreign lock not stolen

    def test_eval_rejects_unknown_clip(self, pipeline, tmp_path, capsys):
        data, *_ , scores, _ = pipeline
        bad = tmp_path / "bad_scores"
        bad.mkdir()
        src = scores / "anomaly_score_synth_section_00_gae.csv"
        (bad / src.name).write_text("ghost_clip.wav,1.0\n")
        rc = main(["eval", "--scores", str(bad),
                   "--manifest", str(data / "manifest.csv"),
                   "--out", str(tmp_path / "r")])
        assert rc == 1
        assert "ghost_clip.wav" in capsys.readouterr().err

    def test_score_single_mode(self, pipeline, tmp_path):
        _, feats, run, _, _ = pipeline
        out = tmp_path / "ac_only"
        assert main(["score", "--features", str(feats),
                     "--checkpoint", str(run / "ckpt_epoch_3.aegm"),
                     "--out", str(out), "--mode", "ac"]) == 0
        names = [p.name for p in out.glob("*.csv")]
        assert len(names) == 3
        assert all(n.endswith("_ac.csv") for n in names)

    def test_missing_checkpoint_names_remediation(self, pipeline, tmp_path, capsys):
        _, feats, *_ = pipeline
        rc = main(["score", "--features", str(feats),
                   "--checkpoint", str(tmp_path / "nope.aegm"),
                   "--out", str(tmp_path / "s2")])
        assert rc == 1
        assert "aegm train" in capsys.readouterr().err


class TestPlainAeCli:
    def test_plain_ae_trains_and_scores_gae_only(self, pipeline, tmp_path, capsys):
        _, feats, *_ = pipeline
        run = tmp_path / "ae_run"
        assert main(["train", "--features", str(feats), "--out", str(run),
                     "--epochs", "2", "--seed", "13", "--plain-ae",
                     "--encoder-layers", "32,32", "--bottleneck", "8"]) == 0
        scores = tmp_path / "ae_scores"
        assert main(["score", "--features", str(feats),
                     "--checkpoint", str(run / "ckpt_epoch_2.aegm"),
                     "--out", str(scores)]) == 0
        names = [p.name for p in scores.glob("*.csv")]
        assert names and all(n.endswith("_gae.csv") for n in names)
        capsys.readouterr()
        rc = main(["score", "--features", str(feats),
                   "--checkpoint", str(run / "ckpt_epoch_2.aegm"),
                   "--out", str(tmp_path / "x"), "--mode", "ac"])
        assert rc == 1
        assert "plain AE" in capsys.readouterr().err
