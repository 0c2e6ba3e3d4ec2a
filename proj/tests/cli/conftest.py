import json
import os
import pathlib
import shutil
import subprocess

import pytest

BIN = os.environ.get("LATENT_LENS_BIN", "latent-lens")

EXTRACT_FLAGS = ["--window-s", "0.04", "--hop-s", "0.01", "--yin-window-s", "0.04", "--yin-hop-s", "0.01", "--fmin", "150"]


def run(*args, env=None, check=True):
    full_env = dict(os.environ)
    full_env.setdefault("LATENT_LENS_THREADS", "2")
    if env:
        full_env.update(env)
    proc = subprocess.run([BIN, *map(str, args)], capture_output=True, text=True, env=full_env)
    if check and proc.returncode != 0:
        raise AssertionError(f"{args[0]} exited {proc.returncode}\n{proc.stdout}\n{proc.stderr}")
    return proc


def load(path):
    with open(path, encoding="utf-8") as f:
        return json.load(f)


@pytest.fixture(scope="session")
def run_dir(tmp_path_factory):
    fixed = os.environ.get("LATENT_LENS_RUN_DIR")
    if fixed:
        path = pathlib.Path(fixed)
        shutil.rmtree(path, ignore_errors=True)
        path.mkdir(parents=True)
        return path
    return tmp_path_factory.mktemp("run")


@pytest.fixture(scope="session")
def pipeline(run_dir):
    """A small end-to-end run shared by the CLI tests."""
    r = run_dir
    run("synth-data", "--out", r / "data", "--items", 30, "--segments-per-item", 10, "--seed", 3,
        "--noise-sigma", 0.002, "--trajectories", 3, "--steps", 4)
    run("extract-features", "--manifest", r / "data" / "manifest.json", "--out", r / "measured" / "manifest.json",
        *EXTRACT_FLAGS)
    run("train-sae", "--manifest", r / "data" / "manifest.json", "--out", r / "sae", "--hidden-dim", 96,
        "--lambda", 0.01, "--epochs", 6, "--seed", 1)
    run("grid-search", "--manifest", r / "data" / "manifest.json", "--out", r / "grid", "--hidden-dims", "32,64",
        "--lambdas", "0.005,0.1", "--epochs", 2)
    run("train-probe", "--manifest", r / "data" / "manifest.json", "--sae", r / "sae" / "sae.bin", "--out",
        r / "probes", "--attributes", "pitch_hz,rms,centroid_hz", "--holdout", 0.2, "--epochs", 10)
    probes = [r / "probes" / f"probe_{a}.bin" for a in ("pitch_hz", "rms", "centroid_hz")]
    run("eval-probe", "--manifest", r / "data" / "manifest.json", "--sae", r / "sae" / "sae.bin", "--probes",
        *probes, "--out", r / "eval")
    run("steer", "--manifest", r / "data" / "manifest.json", "--sae", r / "sae" / "sae.bin", "--probe", probes[0],
        "--off-probes", probes[1], probes[2], "--class", 4, "--alphas", "0,1,10,30", "--out", r / "steer")
    run("progress", "--trajectory-dir", r / "data" / "trajectories", "--sae", r / "sae" / "sae.bin", "--probes",
        *probes, "--out", r / "progress")
    config = {
        "sae": {"hidden_dim": 32, "epochs": 1, "seed": 4},
        "steer": {"alphas": [0.0, 2.0], "clamp": True},
        "holdout": 0.25,
    }
    (r / "config.json").write_text(json.dumps(config), encoding="utf-8")
    return {"root": r, "probes": probes}
