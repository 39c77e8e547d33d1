"""Spiking residual networks with spike-element-wise blocks, on numpy.

The package is organised bottom-up: ``autodiff`` (reverse-mode tensors),
``neuron`` (IF/LIF/PLIF with surrogate gradients), ``blocks`` (plain,
spiking-basic and SEW residual blocks), ``network`` (architecture strings),
``train``, ``analysis`` (gradient and firing-rate traces, closed-form
oracles), ``data`` (SEWF frame files and synthetic generators) and ``cli``.
"""

from .autodiff import Parameter, Tensor, no_grad
from .analysis import (
    FiringRateTrace,
    GradientTrace,
    oracle_grad_norm,
    oracle_grad_product_sew,
    oracle_grad_product_spiking,
    trace_firing_rates,
    trace_gradients,
)
from .blocks import BlockSpec, configure_identity, elementwise_g, make_block
from .data import FrameDataset, SyntheticSpec, generate_synthetic, load_frames, save_frames
from .errors import (
    ArchParseError,
    ConfigurationError,
    DatasetError,
    DimensionError,
    DivergenceError,
    DomainError,
    NumericError,
    ParameterError,
    SEWError,
    StaleGraphError,
)
from .network import Model, NetworkSpec, build, parse_arch, zero_init
from .neuron import NeuronLayer, NeuronSpec, SurrogateSpec
from .train import TrainConfig, lr_at, random_temporal_delete, sgd_step, train

__version__ = "0.1.0"

__all__ = [
    "ArchParseError",
    "BlockSpec",
    "ConfigurationError",
    "DatasetError",
    "DimensionError",
    "DivergenceError",
    "DomainError",
    "FiringRateTrace",
    "FrameDataset",
    "GradientTrace",
    "Model",
    "NetworkSpec",
    "NeuronLayer",
    "NeuronSpec",
    "NumericError",
    "Parameter",
    "ParameterError",
    "SEWError",
    "StaleGraphError",
    "SurrogateSpec",
    "SyntheticSpec",
    "Tensor",
    "TrainConfig",
    "build",
    "configure_identity",
    "elementwise_g",
    "generate_synthetic",
    "load_frames",
    "lr_at",
    "make_block",
    "no_grad",
    "oracle_grad_norm",
    "oracle_grad_product_sew",
    "oracle_grad_product_spiking",
    "parse_arch",
    "random_temporal_delete",
    "save_frames",
    "sgd_step",
    "trace_firing_rates",
    "trace_gradients",
    "train",
    "zero_init",
]
