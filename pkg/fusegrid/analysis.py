"""
Closed-form parameter and FLOP accounting per architecture (no model is built).

Conventions:
- conv: params Cout * (Cin * 27 + 1); flops 2 * 27 * Cin * Cout * out_voxels
- batch norm: params 2 * C; 1 op per output element
- relu / pool / fusion / sigmoid: 1 op per output element
- fully connected: params M * (N + 1); flops 2 * M * N
- batch of 1, forward pass only; branch layers 1..alpha are counted twice
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

from model import BaseConfig, BaseInput, Beta, FusionSpec


@dataclass(frozen=True)
class LayerCost:
    name: str
    params: int
    flops: int


@dataclass
class CostReport:
    spec: Optional[FusionSpec]
    param_count: int
    flops: int
    per_layer: List[LayerCost] = field(default_factory=list)
    label: str = ""

    @property
    def name(self) -> str:
        return self.spec.name if self.spec is not None else self.label

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "spec": self.spec.to_dict() if self.spec is not None else None,
            "param_count": self.param_count,
            "flops": self.flops,
            "per_layer": [
                {"name": layer.name, "params": layer.params, "flops": layer.flops}
                for layer in self.per_layer
            ],
        }


def _block_costs(prefix: str, base: BaseConfig, layer: int, cin: int) -> List[LayerCost]:
    cout = base.channels[layer - 1]
    side_in = base.side_after(layer - 1)
    voxels = side_in ** 3
    costs = [
        LayerCost(f"{prefix}.conv{layer}", cout * (cin * 27 + 1), 2 * 27 * cin * cout * voxels),
        LayerCost(f"{prefix}.bn{layer}", 2 * cout, cout * voxels),
        LayerCost(f"{prefix}.relu{layer}", 0, cout * voxels),
    ]
    if layer in base.pool_after:
        costs.append(LayerCost(f"{prefix}.pool{layer}", 0, cout * base.side_after(layer) ** 3))
    return costs


def _stack_costs(prefix: str, base: BaseConfig, first: int, last: int, cin: int) -> List[LayerCost]:
    costs: List[LayerCost] = []
    for layer in range(first, last + 1):
        costs += _block_costs(prefix, base, layer, cin)
        cin = base.channels[layer - 1]
    return costs


def _head_costs(base: BaseConfig, flat: int) -> List[LayerCost]:
    hidden = base.fc_hidden
    return [
        LayerCost("fc1", hidden * (flat + 1), 2 * hidden * flat),
        LayerCost("fc1_relu", 0, hidden),
        LayerCost("fc2", 1 * (hidden + 1), 2 * hidden),
        LayerCost("sigmoid", 0, 1),
    ]


def _report(spec: Optional[FusionSpec], per_layer: List[LayerCost], label: str = "") -> CostReport:
    return CostReport(
        spec=spec,
        param_count=sum(c.params for c in per_layer),
        flops=sum(c.flops for c in per_layer),
        per_layer=per_layer,
        label=label,
    )


def cost_report(spec: FusionSpec) -> CostReport:
    spec.validate()
    base = spec.base
    L, alpha = base.num_layers, spec.alpha
    per_layer = _stack_costs("branch1", base, 1, alpha, 1) + _stack_costs("branch2", base, 1, alpha, 1)

    width = base.channels[alpha - 1]
    fused = width * (2 if spec.beta is Beta.CONCAT else 1)
    per_layer.append(LayerCost("fusion", 0, fused * base.side_after(alpha) ** 3))

    per_layer += _stack_costs("trunk", base, alpha + 1, L, fused)
    flat_channels = base.channels[-1] if alpha < L else fused
    per_layer += _head_costs(base, flat_channels * base.side_after(L) ** 3)
    return _report(spec, per_layer)


def base_cost_report(config: BaseConfig, in_channels: int = 1, source: Optional[BaseInput] = None) -> CostReport:
    config.validate()
    per_layer = _stack_costs("trunk", config, 1, config.num_layers, in_channels)
    per_layer += _head_costs(config, config.channels[-1] * config.side_after(config.num_layers) ** 3)
    if source is None:
        source = BaseInput.EARLY if in_channels == 2 else BaseInput.IMAGE
    return _report(None, per_layer, label=source.display_name)


def count_params(spec: FusionSpec) -> int:
    return cost_report(spec).param_count


def count_flops(spec: FusionSpec) -> int:
    return cost_report(spec).flops


def _human(value: int) -> str:
    for unit, size in (("G", 1e9), ("M", 1e6), ("K", 1e3)):
        if value >= size:
            return f"{value / size:.2f}{unit}"
    return str(value)


def cost_table(reports: Sequence[CostReport]) -> str:
    """One row per architecture: name, alpha, beta, params, FLOPs."""
    lines = [f"{'model':<14} {'alpha':>5} {'beta':>6} {'# Para':>12} {'FLOPs':>16}"]
    lines.append("-" * len(lines[0]))
    for r in reports:
        alpha = str(r.spec.alpha) if r.spec else "-"
        beta = r.spec.beta.symbol if r.spec else "-"
        lines.append(
            f"{r.name:<14} {alpha:>5} {beta:>6} {r.param_count:>12,d} {r.flops:>16,d}"
        )
    return "\n".join(lines)


def cost_grid(reports: Sequence[CostReport]) -> str:
    """Pivot with one block per beta and one column per alpha (params and FLOPs rows)."""
    fused = [r for r in reports if r.spec is not None]
    if not fused:
        return ""
    alphas = sorted({r.spec.alpha for r in fused})
    by_key: Dict[Tuple[Beta, int], CostReport] = {(r.spec.beta, r.spec.alpha): r for r in fused}
    header = f"{'':<6}{'':<8}" + "".join(f"{a:>10}" for a in alphas)
    lines = [header, "=" * len(header)]
    for beta in Beta:
        rows = [("# Para", lambda r: r.param_count), ("FLOPs", lambda r: r.flops)]
        for i, (label, getter) in enumerate(rows):
            cells = "".join(
                f"{_human(getter(by_key[(beta, a)])) if (beta, a) in by_key else '-':>10}" for a in alphas
            )
            lead = f"β={beta.symbol}" if i == 0 else ""
            lines.append(f"{lead:<6}{label:<8}{cells}")
        lines.append("-" * len(header))
    return "\n".join(lines)
