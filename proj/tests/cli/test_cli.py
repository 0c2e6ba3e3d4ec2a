import csv
import json
import math
import shutil

import numpy as np
import pytest

import alt1
from conftest import EXTRACT_FLAGS, load, run


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def linear_classes(values, truth_values, k=20):
    s = sorted(truth_values)
    lo = s[math.floor(0.005 * (len(s) - 1))]
    hi = s[math.ceil(0.995 * (len(s) - 1))]
    return [min(max(math.floor(k * (v - lo) / (hi - lo)), 0), k - 1) for v in values]


def pitch_classes(values):
    return [round(69 + 12 * math.log2(v / 440.0)) for v in values]


class TestPipelineOutputs:
    def test_synth_data(self, pipeline):
        m = load(pipeline["root"] / "data" / "manifest.json")
        assert len(m["entries"]) == 30
        trajectories = sorted((pipeline["root"] / "data" / "trajectories").glob("*/manifest.json"))
        assert len(trajectories) == 3
        steps = [e["step_index"] for e in load(trajectories[0])["entries"]]
        assert sorted(steps) == [0, 1, 2, 3, 4]

    def test_extracted_labels_match_ground_truth(self, pipeline):
        truth = load(pipeline["root"] / "data" / "manifest.json")["entries"]
        measured = load(pipeline["root"] / "measured" / "manifest.json")["entries"]
        assert [e["id"] for e in truth] == [e["id"] for e in measured]
        for attribute in ("pitch_hz", "rms", "centroid_hz"):
            all_truth = [v for e in truth for v in e["ground_truth"][attribute]]
            agree = valid = 0
            for t, m in zip(truth, measured):
                pairs = [(a, b) for a, b in zip(t["ground_truth"][attribute], m["ground_truth"][attribute]) if b is not None]
                if not pairs:
                    continue
                a, b = zip(*pairs)
                if attribute == "pitch_hz":
                    ca, cb = pitch_classes(a), pitch_classes(b)
                else:
                    ca, cb = linear_classes(a, all_truth), linear_classes(b, all_truth)
                agree += sum(x == y for x, y in zip(ca, cb))
                valid += len(pairs)
            assert valid > 0.9 * len(all_truth)
            assert agree >= 0.95 * valid, attribute

    def test_train_sae_outputs(self, pipeline):
        sae_dir = pipeline["root"] / "sae"
        metrics = load(sae_dir / "metrics.json")
        assert metrics["recon_mse"] >= 0
        assert 0 <= metrics["sparsity_ratio"] <= 1
        assert len(read_csv(sae_dir / "history.csv")) == 6

    def test_grid_has_one_row_per_cell(self, pipeline):
        rows = read_csv(pipeline["root"] / "grid" / "grid.csv")
        assert len(rows) == 4
        assert {(r["hidden_dim"], r["lambda"]) for r in rows} == {
            ("32", "0.005"), ("32", "0.1"), ("64", "0.005"), ("64", "0.1")}
        assert all(r["status"] == "ok" for r in rows)

    def test_three_attributes_three_probes(self, pipeline):
        report = load(pipeline["root"] / "probes" / "probes.json")
        assert [p["attribute"] for p in report["probes"]] == ["pitch_hz", "rms", "centroid_hz"]
        for p in pipeline["probes"]:
            assert p.is_file()
        assert len(report["heldout_ids"]) == 6
        for p in report["probes"]:
            assert p["train_accuracy"] >= p["heldout_accuracy"]

    def test_eval_report(self, pipeline):
        report = load(pipeline["root"] / "eval" / "eval.json")
        assert report["entries"] == 30
        for p in report["probes"]:
            rows = read_csv(pipeline["root"] / "eval" / p["confusion_file"])
            total = sum(int(v) for r in rows for k, v in r.items() if k != "true_class")
            assert total == p["frames"]

    def test_steer_writes_one_latent_per_alpha(self, pipeline):
        steer = pipeline["root"] / "steer"
        m = load(steer / "manifest.json")
        assert len(m["entries"]) == 30 * 4
        first = [e["id"] for e in m["entries"] if e["id"].startswith("item_0000_")]
        assert first == ["item_0000_a0", "item_0000_a1", "item_0000_a10", "item_0000_a30"]
        assert len(read_csv(steer / "sweep.csv")) == 4
        sweep = load(steer / "sweep.json")
        assert [r["alpha"] for r in sweep["rows"]] == [0, 1, 10, 30]
        assert sweep["off_attributes"] == ["rms", "centroid_hz"]

    def test_alpha_zero_is_the_reconstruction(self, pipeline):
        root = pipeline["root"]
        sae = alt1.load_sae(root / "sae" / "sae.bin")
        frames, _ = alt1.read(root / "data" / "latents" / "item_0003.alt")
        steered, rate = alt1.read(root / "steer" / "latents" / "item_0003_a0.alt")
        assert rate == 25.0
        expect = alt1.reconstruct(sae, frames.astype(np.float64))
        assert np.max(np.abs(steered - expect)) <= 1e-4 * max(1.0, np.max(np.abs(expect)))

    def test_progress_report(self, pipeline):
        report = load(pipeline["root"] / "progress" / "progress.json")
        assert len(report["trajectories"]) == 3
        for a in report["attributes"]:
            assert a["T"] == 4
            assert len(a["scores"]) == 3
            if not a["warnings"]:
                assert a["mean"][0] == 0
                assert a["mean"][-1] == 1
            assert all(math.isfinite(s) for s in a["std"])
        assert len(read_csv(pipeline["root"] / "progress" / "progress.csv")) == 3 * 5


class TestDeterminism:
    def test_synth_data_rerun_is_byte_identical(self, pipeline, tmp_path):
        run("synth-data", "--out", tmp_path / "again", "--items", 30, "--segments-per-item", 10, "--seed", 3,
            "--noise-sigma", 0.002, "--trajectories", 3, "--steps", 4)
        for name in ("manifest.json", "world.json", "latents/item_0007.alt", "audio/item_0007.wav",
                     "trajectories/traj_0001/step_0002.alt"):
            assert (tmp_path / "again" / name).read_bytes() == (pipeline["root"] / "data" / name).read_bytes(), name

    def test_train_sae_rerun_overwrites_identically(self, pipeline, tmp_path):
        args = ["train-sae", "--manifest", pipeline["root"] / "data" / "manifest.json", "--hidden-dim", 32,
                "--epochs", 2, "--seed", 5]
        run(*args, "--out", tmp_path / "a", env={"LATENT_LENS_THREADS": "1"})
        run(*args, "--out", tmp_path / "b", env={"LATENT_LENS_THREADS": "3"})
        first = (tmp_path / "b" / "sae.bin").read_bytes()
        run(*args, "--out", tmp_path / "b", env={"LATENT_LENS_THREADS": "3"})
        assert (tmp_path / "a" / "sae.bin").read_bytes() == first
        assert (tmp_path / "b" / "sae.bin").read_bytes() == first


class TestConfig:
    def test_flags_override_config(self, pipeline, tmp_path):
        cfg = tmp_path / "config.json"
        cfg.write_text(json.dumps({"sae": {"hidden_dim": 24, "epochs": 1, "seed": 2}}), encoding="utf-8")
        manifest = pipeline["root"] / "data" / "manifest.json"
        run("train-sae", "--config", cfg, "--manifest", manifest, "--out", tmp_path / "c")
        assert load(tmp_path / "c" / "metrics.json")["config"]["hidden_dim"] == 24
        run("train-sae", "--config", cfg, "--manifest", manifest, "--out", tmp_path / "f", "--hidden-dim", 16)
        metrics = load(tmp_path / "f" / "metrics.json")
        assert metrics["config"]["hidden_dim"] == 16
        assert metrics["config"]["epochs"] == 1

    def test_shared_config_is_accepted(self, pipeline, tmp_path):
        run("train-sae", "--config", pipeline["root"] / "config.json", "--manifest",
            pipeline["root"] / "data" / "manifest.json", "--out", tmp_path / "s")
        assert load(tmp_path / "s" / "metrics.json")["config"]["hidden_dim"] == 32

    def test_unknown_config_key_exits_2(self, pipeline, tmp_path):
        cfg = tmp_path / "config.json"
        cfg.write_text(json.dumps({"sae": {"hiden_dim": 8}}), encoding="utf-8")
        proc = run("train-sae", "--config", cfg, "--manifest", pipeline["root"] / "data" / "manifest.json",
                   "--out", tmp_path / "x", check=False)
        assert proc.returncode == 2
        assert "hiden_dim" in proc.stderr


class TestErrors:
    def test_missing_out_exits_2(self, pipeline):
        proc = run("train-sae", "--manifest", pipeline["root"] / "data" / "manifest.json", check=False)
        assert proc.returncode == 2
        assert "--out" in proc.stderr

    def test_missing_sae_checkpoint_exits_2(self, pipeline, tmp_path):
        proc = run("train-probe", "--manifest", pipeline["root"] / "data" / "manifest.json", "--sae",
                   tmp_path / "nope.bin", "--out", tmp_path / "p", check=False)
        assert proc.returncode == 2
        assert "nope.bin" in proc.stderr

    def test_invalid_class_exits_2(self, pipeline, tmp_path):
        root = pipeline["root"]
        proc = run("steer", "--manifest", root / "data" / "manifest.json", "--sae", root / "sae" / "sae.bin",
                   "--probe", pipeline["probes"][0], "--class", 66, "--alphas", "1", "--out", tmp_path / "s",
                   check=False)
        assert proc.returncode == 2
        assert "--class 66" in proc.stderr

    def test_manifest_without_audio_exits_1(self, tmp_path):
        frames = np.zeros((4, 3), dtype=np.float32)
        alt1.write(tmp_path / "a.alt", frames, 25.0)
        (tmp_path / "manifest.json").write_text(
            json.dumps({"entries": [{"id": "a", "latent_path": "a.alt"}]}), encoding="utf-8")
        proc = run("extract-features", "--manifest", tmp_path / "manifest.json", "--out", tmp_path / "o.json",
                   check=False)
        assert proc.returncode == 1
        assert "no audio" in proc.stderr

    def test_unwritable_output_exits_1(self, pipeline, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        proc = run("extract-features", "--manifest", pipeline["root"] / "data" / "manifest.json", "--out",
                   blocker / "sub" / "manifest.json", *EXTRACT_FLAGS, check=False)
        assert proc.returncode == 1

    def test_divergent_grid_cell_exits_1(self, pipeline, tmp_path):
        proc = run("grid-search", "--manifest", pipeline["root"] / "data" / "manifest.json", "--out", tmp_path / "g",
                   "--hidden-dims", "16", "--lambdas", "0.01", "--epochs", 1, "--lr", "1e300", check=False)
        assert proc.returncode == 1
        assert "hidden_dim=16" in proc.stderr
        assert read_csv(tmp_path / "g" / "grid.csv")[0]["status"] == "failed"

    def test_missing_step_exits_1(self, pipeline, tmp_path):
        root = pipeline["root"]
        traj = tmp_path / "traj"
        shutil.copytree(root / "data" / "trajectories" / "traj_0000", traj)
        m = load(traj / "manifest.json")
        m["entries"] = [e for e in m["entries"] if e["step_index"] != 2]
        (traj / "manifest.json").write_text(json.dumps(m), encoding="utf-8")
        proc = run("progress", "--manifest", traj / "manifest.json", "--sae", root / "sae" / "sae.bin", "--probes",
                   pipeline["probes"][0], "--out", tmp_path / "p", check=False)
        assert proc.returncode == 1
        assert "missing step 2" in proc.stderr

    def test_single_trajectory_has_zero_std(self, pipeline, tmp_path):
        root = pipeline["root"]
        run("progress", "--manifest", root / "data" / "trajectories" / "traj_0001" / "manifest.json", "--sae",
            root / "sae" / "sae.bin", "--probes", *pipeline["probes"], "--out", tmp_path / "p")
        for a in load(tmp_path / "p" / "progress.json")["attributes"]:
            assert a["std"] == [0.0] * 5

    def test_threads_env_must_be_positive(self, pipeline, tmp_path):
        proc = run("train-sae", "--manifest", pipeline["root"] / "data" / "manifest.json", "--out", tmp_path / "t",
                   "--epochs", 1, env={"LATENT_LENS_THREADS": "zero"}, check=False)
        assert proc.returncode == 2
