"""HSIC-based self-supervised learning at desk scale: kernels, estimators,
random Fourier features, objectives, a small autodiff learner and a
verification harness."""

__version__ = "0.1.0"
