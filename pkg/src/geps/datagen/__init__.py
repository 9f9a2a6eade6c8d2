"""Environment samplers, simulators and dataset files."""

from geps.datagen.dataset import (
    TrajectoryDataset,
    generate_dataset,
    read_dataset,
    write_dataset,
)
from geps.datagen.envs import EnvironmentSpec, discrete_pool, sample_environments
from geps.datagen.simulate import (
    burgers_spectrum_ic,
    simulate_burgers,
    simulate_combined,
    simulate_gray_scott,
    simulate_pendulum,
    spectral_filter_downsample,
)

__all__ = [
    "TrajectoryDataset", "generate_dataset", "read_dataset", "write_dataset",
    "EnvironmentSpec", "discrete_pool", "sample_environments", "burgers_spectrum_ic",
    "simulate_burgers", "simulate_combined", "simulate_gray_scott", "simulate_pendulum",
    "spectral_filter_downsample",
]
