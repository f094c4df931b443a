"""Benchmark suite for neural-operator surrogates of a 1D excitable-tissue
reaction-diffusion model: reference solver, dataset tooling, a small
reverse-mode autodiff engine, operator-learning architectures (Fourier,
branch-trunk, and bandlimited U-Net families), training/evaluation utilities,
a random-search tuner with successive halving, and a CLI."""

__version__ = "0.1.0"
