"""Site-exciton quantum dynamics with LSTM-based long-time forecasting.

Subpackages cover the full pipeline: physical model definition and bath
discretization, MPS/MPO tensor kernels, TDVP propagation, dataset slicing,
a from-scratch stacked LSTM, hyperparameter search (random / simulated
annealing / TPE), and ensemble uncertainty estimation (bootstrap, fixed-mask
dropout variants).
"""

__version__ = "0.1.0"
