#!/usr/bin/env python3
"""
Desk-scale learning experiments on generated scenarios.

These train real models for many epochs and are deselected by default;
run them with ``pytest -m slow``.
"""

import json
import os
import sys

import pandas as pd
import pytest

# Add the src directory to the path
sys.path.append(os.path.join(os.path.dirname(__file__), 'src'))

from cli.main import main  # noqa: E402
from utils.serialization import load_dataset  # noqa: E402

pytestmark = pytest.mark.slow

RENDER = ["--set", "render.width=16", "--set", "render.height=16"]
TRAIN = ["--set", "train.learning_rate=1e-3", "--set", "train.batch_size=32"]


def _generate(out, scene, interval, seed=0):
    code = main([
        "gen-data", "--out", str(out), "--scene", scene, "--seed", str(seed),
        "--set", f"data.sample_interval={interval}", *RENDER,
    ])
    assert code == 0
    return out


def _train(dataset, out, model, seed, epochs=30):
    code = main([
        "train", "--dataset", str(dataset), "--out", str(out), "--model", model,
        "--epochs", str(epochs), "--seed", str(seed), *TRAIN,
    ])
    assert code == 0
    return json.loads((out / "report.json").read_text())


@pytest.fixture(scope="module")
def line_of_sight(tmp_path_factory):
    return _generate(tmp_path_factory.mktemp("los") / "ds", "empty", 0.025)


@pytest.fixture(scope="module")
def blocked(tmp_path_factory):
    return _generate(tmp_path_factory.mktemp("nlos") / "ds", "blockage", 0.05)


class TestLineOfSightLearning:

    def test_scenario_size(self, line_of_sight):
        ds = load_dataset(line_of_sight)
        assert len(ds) >= 2000
        assert ds.manifest["nlos_fraction"] == 0.0

    def test_multimodal_model_learns_the_geometry(self, tmp_path, line_of_sight):
        report = _train(line_of_sight, tmp_path / "mlm", "mlm-bp", seed=0)
        assert report["top_k_accuracy"]["1"] >= 0.85
        assert report["top_k_accuracy"]["3"] >= 0.95


class TestModalityOrdering:

    def test_blockage_scenario(self, blocked):
        assert load_dataset(blocked).manifest["nlos_fraction"] >= 0.3

    def test_images_help_under_blockage(self, tmp_path, blocked):
        mean_top1 = {}
        for model in ("mlm-bp", "fusion", "dnn-pos", "cnn-vis"):
            scores = [
                _train(blocked, tmp_path / f"{model}-{seed}", model, seed)["top_k_accuracy"]["1"]
                for seed in range(3)
            ]
            mean_top1[model] = sum(scores) / len(scores)
        single = max(mean_top1["dnn-pos"], mean_top1["cnn-vis"])
        assert mean_top1["mlm-bp"] >= mean_top1["fusion"] - 0.02
        assert mean_top1["fusion"] >= single - 0.02


class TestFewShotTrend:

    def test_more_data_never_hurts(self, tmp_path, blocked):
        out = tmp_path / "fs"
        code = main([
            "fewshot", "--dataset", str(blocked), "--out", str(out), "--ratios", "0.1,0.2,0.3",
            "--seeds", "0,1,2", "--models", "mlm-bp", "--epochs", "30", "--workers", "3",
            *TRAIN,
        ])
        assert code == 0
        cells = pd.read_csv(out / "cells.csv")
        assert (cells["top3"] >= cells["top1"]).all()
        trend = pd.read_csv(out / "summary.csv").sort_values("ratio")["top1_mean"].to_numpy()
        assert all(b >= a for a, b in zip(trend, trend[1:]))
