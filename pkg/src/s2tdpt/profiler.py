"""Theoretical energy and memory accounting.

Cost model: every counted layer has a MAC count (``flops``) fixed by the
architecture, and layers driven by spikes replace multiplies with
accumulates. The number of accumulates is ``sops = firing_rate * T * flops``
where the firing rate is the measured mean spike probability of the layer's
input. Total energy charges accumulates at the 45nm AC cost and charges the
pixel-encoding first convolution (the only layer fed real values) at the MAC
cost, once:

    E = E_AC * sum(sops) + E_MAC * flops(first conv)

A dense network running the same shapes pays E_MAC on every MAC instead,
which is the baseline the report compares against. Batch normalization is
free at deployment because it folds into the preceding convolution.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ContractError
from .model import LayerSpec, ModelConfig, SpikingClassifier, enumerate_cost_layers
from .probe import ForwardProbe

E_MAC_PJ = 46.0
E_AC_PJ = 0.9

# Layers whose inputs are real-valued rather than spikes: charged as MACs,
# never given a firing rate.
_MAC_COSTED = ("sps.stem", "head")


@dataclass(frozen=True)
class LayerCostRecord:
    name: str
    kind: str  # "conv" | "linear" | "attention_apply" | "other"
    flops: int
    firing_rate: float
    sops: int

    def __post_init__(self):
        if not 0.0 <= self.firing_rate <= 1.0:
            raise ContractError(f"firing rate must lie in [0, 1], got {self.firing_rate}")
        if self.flops < 0 or self.sops < 0:
            raise ContractError("flops and sops must be nonnegative")


@dataclass(frozen=True)
class EnergyReport:
    first_layer_flops: int
    total_sops: int
    energy_mj_snn: float
    energy_mj_ann: float
    layers: tuple[LayerCostRecord, ...]
    timesteps: int
    e_mac_pj: float = E_MAC_PJ
    e_ac_pj: float = E_AC_PJ
    score_construction_sops: int = 0

    @property
    def total_flops(self) -> int:
        return sum(l.flops for l in self.layers)

    @property
    def reduction_vs_ann(self) -> float:
        """Fraction of the dense baseline's energy that is saved."""
        return 1.0 - self.energy_mj_snn / self.energy_mj_ann if self.energy_mj_ann else 0.0

    @property
    def strict_total_sops(self) -> int:
        """Synaptic operations excluding the score-construction ledger column."""
        return self.total_sops - self.score_construction_sops


def flops_of_layer(spec: LayerSpec) -> int:
    """MAC count of a counted layer, per image per timestep; free for BN."""
    if spec.kind not in ("conv", "linear", "attention_apply", "other"):
        raise ContractError(f"unknown layer kind '{spec.kind}'")
    return spec.flops


def measure_firing_rates(model: SpikingClassifier, data_sample: np.ndarray) -> dict[str, float]:
    """Mean input-spike probability per counted layer, over a sample batch.

    Layers fed real values (the stem convolution and the classification head)
    are absent from the result; they are charged as MACs, not rated.
    """
    probe = ForwardProbe(record_rates=True)
    was_training = model.training
    model.eval()
    try:
        from .autodiff import no_grad

        with no_grad():
            model(data_sample, probe)
    finally:
        if was_training:
            model.train()
    return dict(probe.rates)


def build_cost_records(cfg: ModelConfig, rates: dict[str, float]) -> list[LayerCostRecord]:
    """Fuse architecture FLOPs with measured rates into per-layer records.

    Score-construction work (kind "other") is entry-counted dense arithmetic,
    so it carries rate 1. Missing rate measurements for spike-fed layers are
    an error: the profile would silently undercount.
    """
    records = []
    t = cfg.timesteps
    for spec in enumerate_cost_layers(cfg):
        flops = flops_of_layer(spec)
        if spec.name in _MAC_COSTED:
            rate = 0.0
        elif spec.kind == "other":
            rate = 1.0
        elif spec.name in rates:
            rate = float(rates[spec.name])
        else:
            raise ContractError(f"no firing rate measured for spike-fed layer '{spec.name}'")
        records.append(
            LayerCostRecord(
                name=spec.name,
                kind=spec.kind,
                flops=flops,
                firing_rate=rate,
                sops=int(round(rate * t * flops)),
            )
        )
    return records


def energy_estimate(layers: list[LayerCostRecord], timesteps: int) -> EnergyReport:
    """Total energy for one input image, in millijoules, plus a dense baseline."""
    if not layers:
        raise ContractError("energy estimate needs at least one layer record")
    first = layers[0]
    if first.kind != "conv":
        raise ConfigurationError(f"first counted layer must be the encoding conv, got '{first.kind}'")
    total_sops = sum(l.sops for l in layers)
    score_sops = sum(l.sops for l in layers if l.kind == "other")
    energy_snn = (E_AC_PJ * total_sops + E_MAC_PJ * first.flops) * 1e-9
    energy_ann = E_MAC_PJ * sum(l.flops for l in layers) * 1e-9
    return EnergyReport(
        first_layer_flops=first.flops,
        total_sops=total_sops,
        energy_mj_snn=energy_snn,
        energy_mj_ann=energy_ann,
        layers=tuple(layers),
        timesteps=timesteps,
        score_construction_sops=score_sops,
    )


def profile_model(model: SpikingClassifier, data_sample: np.ndarray) -> EnergyReport:
    """Measure rates on the sample and assemble the full energy report."""
    rates = measure_firing_rates(model, data_sample)
    records = build_cost_records(model.cfg, rates)
    return energy_estimate(records, model.cfg.timesteps)


def attention_memory_footprint(n: int, bytes_per_element: int = 4) -> int:
    """Bytes needed to materialize one dense NxN score matrix.

    The timing-based attention here never stores that matrix persistently;
    the footprint quantifies what an explicit-score design would pay.
    """
    if n < 1:
        raise ContractError(f"sequence length must be positive, got {n}")
    return n * n * bytes_per_element


# ---------------------------------------------------------------------------
# Report emitters
# ---------------------------------------------------------------------------


def report_to_dict(report: EnergyReport) -> dict:
    return {
        "e_mac_pj": report.e_mac_pj,
        "e_ac_pj": report.e_ac_pj,
        "timesteps": report.timesteps,
        "first_layer_flops": report.first_layer_flops,
        "total_flops": report.total_flops,
        "total_sops": report.total_sops,
        "score_construction_sops": report.score_construction_sops,
        "strict_total_sops": report.strict_total_sops,
        "energy_mj_snn": report.energy_mj_snn,
        "energy_mj_ann": report.energy_mj_ann,
        "reduction_vs_ann": report.reduction_vs_ann,
        "layers": [
            {
                "name": l.name,
                "kind": l.kind,
                "flops": l.flops,
                "firing_rate": l.firing_rate,
                "sops": l.sops,
            }
            for l in report.layers
        ],
    }


def report_to_json(report: EnergyReport, seed: int | None = None) -> str:
    payload = report_to_dict(report)
    if seed is not None:
        payload = {"seed": seed, **payload}
    return json.dumps(payload, indent=2)


def report_to_table(report: EnergyReport) -> str:
    """Aligned-column text table, one row per counted layer."""
    rows = [("layer", "kind", "flops", "rate", "sops")]
    for l in report.layers:
        rows.append((l.name, l.kind, str(l.flops), f"{l.firing_rate:.4f}", str(l.sops)))
    widths = [max(len(r[i]) for r in rows) for i in range(5)]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip() for row in rows]
    lines.append("")
    lines.append(f"total sops            : {report.total_sops}")
    lines.append(f"first-layer MAC flops : {report.first_layer_flops}")
    lines.append(f"energy (spiking)      : {report.energy_mj_snn:.6f} mJ")
    lines.append(f"energy (dense ANN)    : {report.energy_mj_ann:.6f} mJ")
    lines.append(f"reduction vs ANN      : {100.0 * report.reduction_vs_ann:.2f}%")
    return "\n".join(lines)
