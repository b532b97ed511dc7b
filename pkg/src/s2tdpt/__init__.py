"""Spiking vision transformer with timing-based attention.

Public surface re-exports the pieces most users need: the autodiff tensors,
the neuron and attention primitives, model construction, training, and the
energy profiler.
"""

from .attention import (
    AttentionScores,
    S2tdpsaBlock,
    StdpAttentionConfig,
    attention_apply,
    attention_scores,
    head_merge,
    head_split,
    stdp_kernel,
    synaptic_update,
    timing_diff,
    token_latencies,
    token_rates,
)
from .autodiff import (
    BnParams,
    SurrogateSpec,
    Tensor,
    finite_diff_check,
    fold_bn_into_conv,
    heaviside_surrogate,
    no_grad,
)
from .coding import (
    GeneralStdpConfig,
    LatencyCoderConfig,
    latency_encode,
    spike_count,
    stdp_similarity,
)
from .data import LabeledImages, gen_synthetic, load_cifar_binary
from .errors import ConfigurationError, ContractError, DatasetError, NonFiniteError
from .model import (
    ModelConfig,
    SpikingClassifier,
    SpsStage,
    build_model,
    cifar_4_384_config,
    gap,
    gtmp,
    load_checkpoint,
    save_checkpoint,
)
from .neuron import LifConfig, LifState, lif_sequence, lif_step
from .nn import param_count
from .probe import ForwardProbe
from .profiler import (
    EnergyReport,
    LayerCostRecord,
    attention_memory_footprint,
    energy_estimate,
    measure_firing_rates,
    profile_model,
)
from .train import (
    EvalReport,
    SfrMap,
    TrainConfig,
    cross_entropy_loss,
    evaluate,
    fit,
    sfr_map,
    train_epoch,
)

__version__ = "0.1.0"
