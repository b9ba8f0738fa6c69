#!/usr/bin/env python3
"""
Smoke test for the Beamsight workbench: imports every package and runs a
tiny scene-to-prediction pass.
"""

import sys
import os

# Add the src directory to the path
sys.path.append(os.path.join(os.path.dirname(__file__), 'src'))


def test_imports():
    """Test that all modules can be imported."""
    from models.config import RunConfig, ModelKind
    print("✅ Configuration imported successfully")
    print(f"   Available models: {[k.value for k in ModelKind]}")

    from simulation.scene_simulator import build_scene, trace_paths
    print("✅ Scene simulator imported successfully")

    from simulation.channel_simulator import dft_codebook, optimal_beam
    print("✅ Channel simulator imported successfully")

    from simulation.dataset_generator import generate_dataset, split_dataset
    print("✅ Dataset generator imported successfully")

    from ai_engine.model_factory import create_model
    print("✅ Model factory imported successfully")

    from optimization.trainer import train, evaluate
    print("✅ Trainer imported successfully")

    from optimization.few_shot import few_shot_protocol
    print("✅ Few-shot protocol imported successfully")

    from cli.main import build_parser
    print("✅ Command line imported successfully")

    assert RunConfig().model.codebook_size == 64


def test_basic_functionality():
    """Test basic functionality of the system."""
    import numpy as np

    from ai_engine.beam_model import DatasetFeatures
    from ai_engine.model_factory import create_model
    from ai_engine.preprocessing import Vocab
    from models.config import ModelConfig, ModelKind, RenderConfig, SceneConfig
    from models.scene import Trajectory
    from simulation.channel_simulator import dft_codebook
    from simulation.dataset_generator import generate_dataset, split_dataset
    from simulation.scene_simulator import build_scene
    from models.channel import ArrayGeometry, SubcarrierGrid

    scene = build_scene(SceneConfig(), seed=0)
    print(f"✅ Built scene with {len(scene.buildings)} buildings and {len(scene.lanes)} lanes")

    geom = ArrayGeometry()
    codebook = dft_codebook(geom)
    print(f"✅ Codebook with {codebook.size} beams")

    ds = generate_dataset(
        scene, [Trajectory(lane=0, speed=10.0, duration=1.0)], SubcarrierGrid(), geom, codebook,
        0.1, render=RenderConfig(width=8, height=8),
    )
    split_dataset(ds)
    print(f"✅ Generated {len(ds)} samples, splits {ds.split_counts()}")

    config = ModelConfig(kind=ModelKind.DNN_POS)
    model = create_model(config, tuple(ds.manifest["view_shape"]))
    features = DatasetFeatures.from_dataset(ds, Vocab(config.vocab), config.L_p)
    probs = model.predict_all(features, np.arange(len(ds)))
    print(f"✅ Prediction test: {probs.shape[0]} samples over {probs.shape[1]} beams")
    assert np.allclose(probs.sum(axis=1), 1.0)


def main():
    """Main test function."""
    print("🧪 Testing Beamsight")
    print("=" * 50)

    for title, check in (("📦 Testing imports...", test_imports),
                         ("🔧 Testing basic functionality...", test_basic_functionality)):
        print(f"\n{title}")
        try:
            check()
        except Exception as e:
            print(f"❌ {check.__name__} failed: {e}")
            return False

    print("\n✅ All tests passed! System is ready to use.")
    print("\n🚀 To generate a dataset, use: python run_beamsight.py gen-data --out runs/dataset")

    return True


if __name__ == "__main__":
    sys.exit(0 if main() else 1)
