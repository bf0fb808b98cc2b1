"""Reconstruct network epidemic trajectories from time-collapsed observations."""

from .applications import (ClassPartition, SpreaderScores, normalize_s_score, s_score,
                           sourcing_accuracy, spreader_mse, trace_source)
from .baselines import CNNNodes, CNNTime, LSTM, MLP, count_parameters, make_baseline
from .epidemic import EpidemicParams, Trajectory, simulate_epidemic, validate_trajectory
from .experiment import run_experiment
from .graphs import Graph, GraphSpec, generate_graph, load_contact_network, rescale_radius
from .metrics import MetricReport, metric_report, optimal_threshold
from .model import DDmixConfig, DDmixModel, reconstruct, total_loss
from .observation import Dataset, Observation, build_dataset, collapse_mean
from .persistence import load_dataset, load_model, save_dataset, save_model
from .training import TrainConfig, cross_validate, evaluate_model, train_model

__version__ = "0.1.0"
