"""
Labeled dataset assembly: vehicle trajectories, oracle beam labels and splits.
"""

import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.preprocessing import StandardScaler

from models.channel import ArrayGeometry, Codebook, SubcarrierGrid
from models.config import RenderConfig
from models.dataset import Dataset, Sample, SplitTag
from models.errors import GenerationError
from models.scene import Scene, Trajectory, VehiclePose
from simulation.channel_simulator import ChannelSimulator
from simulation.scene_simulator import SceneSimulator, nlos_fraction

logger = logging.getLogger(__name__)


def trajectory_poses(scene: Scene, trajectory: Trajectory, sample_interval: float) -> List[VehiclePose]:
    """
    Poses sampled every ``sample_interval`` seconds along one trajectory.

    Args:
        scene: Scene providing the lanes
        trajectory: Lane index, speed and duration
        sample_interval: Capture interval T_s in seconds

    Returns:
        round(duration / sample_interval) poses, starting at t = 0
    """
    if not 0 <= trajectory.lane < len(scene.lanes):
        raise GenerationError(f"trajectory lane {trajectory.lane} does not exist ({len(scene.lanes)} lanes)")
    count = int(round(trajectory.duration / sample_interval))
    if count < 1:
        raise GenerationError(
            f"trajectory of {trajectory.duration}s yields no samples at interval {sample_interval}s"
        )
    lane = scene.lanes[trajectory.lane]
    poses = []
    for i in range(count):
        x, y = lane.point_at(trajectory.start_offset + trajectory.speed * i * sample_interval)
        position = np.array([x, y, scene.ms_height], dtype=np.float64)
        if not scene.contains(position):
            raise GenerationError(f"trajectory {trajectory} leaves the scene at {position}")
        poses.append(VehiclePose(position=position, heading=lane.heading))
    return poses


def _image_stats(views: np.ndarray) -> Dict[str, List[float]]:
    # Per-camera statistics over samples and pixels, in float64.
    stacked = views.astype(np.float64)
    return {
        "mean": stacked.mean(axis=(0, 2, 3)).tolist(),
        "std": stacked.std(axis=(0, 2, 3)).tolist(),
    }


def _position_stats(positions: np.ndarray) -> Dict[str, List[float]]:
    scaler = StandardScaler().fit(positions)
    return {"mean": scaler.mean_.tolist(), "std": scaler.scale_.tolist()}


def generate_dataset(
    scene: Scene,
    trajectories: Sequence[Trajectory],
    grid: SubcarrierGrid,
    geom: ArrayGeometry,
    cb: Codebook,
    sample_interval: float,
    seed: int = 0,
    render: Optional[RenderConfig] = None,
    max_samples: Optional[int] = None,
) -> Dataset:
    """
    Drive every trajectory through the scene and label each pose.

    Each pose is traced, turned into a channel response and labeled with the
    brute-force optimal beam; its six depth views are rendered alongside.
    Samples are ordered by trajectory, then by time.

    Args:
        scene: Scene to drive through
        trajectories: Vehicles (lane, speed, duration)
        grid: OFDM subcarrier grid
        geom: Base-station array
        cb: Beam codebook used for labeling
        sample_interval: Capture interval in seconds
        seed: Seed of the path phase jitter
        render: Depth-view resolution, field of view and range
        max_samples: Keep only the first ``max_samples`` poses

    Returns:
        Unsplit Dataset with a generation manifest
    """
    if not trajectories:
        raise GenerationError("at least one trajectory is required")
    if cb.n_elements != geom.n_elements:
        raise GenerationError(f"codebook has {cb.n_elements} antennas, array has {geom.n_elements}")
    scenes = SceneSimulator(scene, grid.wavelength, render, seed)
    channels = ChannelSimulator(geom, grid, cb)

    poses: List[VehiclePose] = []
    for trajectory in trajectories:
        poses.extend(trajectory_poses(scene, trajectory, sample_interval))
    if max_samples is not None:
        poses = poses[:max_samples]

    samples = []
    for index, pose in enumerate(poses):
        paths, views = scenes.capture(pose)
        samples.append(Sample(
            pose=pose,
            views=views,
            label=channels.label(paths),
            paths=paths,
        ))
        if (index + 1) % 500 == 0:
            logger.info("Labeled %d/%d poses", index + 1, len(poses))

    all_views = np.stack([s.views for s in samples])
    manifest = {
        "seed": seed,
        "scene_hash": scenes.scene_hash,
        "codebook_hash": channels.codebook_hash,
        "codebook_size": cb.size,
        "n_samples": len(samples),
        "view_shape": list(all_views.shape[1:]),
        "sample_interval": sample_interval,
        "trajectories": [
            {"lane": t.lane, "speed": t.speed, "duration": t.duration, "start_offset": t.start_offset}
            for t in trajectories
        ],
        "nlos_fraction": nlos_fraction([s.paths for s in samples]),
        "image_stats": _image_stats(all_views),
        "position_stats": _position_stats(np.stack([s.pose.position for s in samples])),
    }
    logger.info(
        "Generated %d samples (%.1f%% NLoS)", len(samples), 100 * manifest["nlos_fraction"]
    )
    return Dataset(samples=samples, manifest=manifest)


def split_counts(n: int, ratios: Tuple[float, float, float]) -> Tuple[int, int, int]:
    """Nearest-integer validation and test counts; training takes the remainder."""
    n_val = int(round(ratios[1] * n))
    n_test = int(round(ratios[2] * n))
    return n - n_val - n_test, n_val, n_test


def split_dataset(ds: Dataset, ratios: Tuple[float, float, float] = (0.7, 0.1, 0.2), seed: int = 0) -> Dataset:
    """
    Tag every sample train/val/test.

    A seeded permutation is cut into contiguous train, val and test ranges;
    samples keep their generation order.

    Args:
        ds: Dataset to split in place
        ratios: Train, validation and test fractions summing to 1
        seed: Permutation seed

    Returns:
        The same dataset, tagged
    """
    if any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise GenerationError(f"split ratios must be non-negative and sum to 1, got {ratios}")
    n = len(ds)
    needed = sum(1 for r in ratios if r > 0)
    if n < needed:
        raise GenerationError(f"{n} samples cannot fill {needed} non-empty splits")

    n_train, n_val, n_test = split_counts(n, ratios)
    if min(n_train, n_val, n_test) < 0:
        raise GenerationError(f"split of {n} samples by {ratios} is infeasible")
    order = np.random.default_rng(seed).permutation(n)
    tags = [SplitTag.TRAIN] * n_train + [SplitTag.VAL] * n_val + [SplitTag.TEST] * n_test
    for index, tag in zip(order, tags):
        ds.samples[index].split = tag

    ds.manifest["split_seed"] = seed
    ds.manifest["ratios"] = list(ratios)
    ds.manifest["split_counts"] = ds.split_counts()
    return ds


def audit_labels(ds: Dataset, grid: SubcarrierGrid, geom: ArrayGeometry, cb: Codebook) -> List[int]:
    """Indices of samples whose stored label differs from a fresh sweep over their stored paths."""
    channels = ChannelSimulator(geom, grid, cb)
    return [
        i for i, sample in enumerate(ds.samples)
        if channels.label(sample.paths) != sample.label
    ]
