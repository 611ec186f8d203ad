"""MAC and parameter accounting for the autoencoders, plus the width sweep.

Counting convention (stated in every report): one multiply-add = 1 MAC;
convolutions count C_in*C_out*k_h*k_w*H_out*W_out (depthwise: C*k*k*H*W,
pointwise: C_in*C_out*H*W); elementwise ops, upsampling and normalization
contribute no MACs. Parameters include conv weights/biases and the affine
weights of normalization layers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

from .models import AutoencoderSpec, ConfigurationError

MAC_CONVENTION = (
    "1 multiply-add = 1 MAC; conv MACs = C_in*C_out*k_h*k_w*H_out*W_out "
    "(depthwise grouped); activations/normalization/upsampling excluded"
)

# Published single-forward costs of the models the obfuscator is compared
# against; shipped as reference data for report footers, never recomputed.
REFERENCE_COSTS = {
    "obfuscator (published)": {"macs_gops": 1.384, "params_m": 0.154},
    "faster-rcnn-resnet50": {"macs_gops": 206.452, "params_m": 41.75},
    "yolov5s": {"macs_gops": 5.545, "params_m": 7.277},
}


@dataclass(frozen=True)
class LayerCost:
    name: str
    kind: str  # conv | depthwise | pointwise | norm
    macs: int
    params: int
    out_height: int
    out_width: int


@dataclass(frozen=True)
class EfficiencyReport:
    layers: tuple[LayerCost, ...]
    input_resolution: tuple[int, int]  # (height, width)
    convention: str = MAC_CONVENTION

    @property
    def macs(self) -> int:
        return sum(l.macs for l in self.layers)

    @property
    def params(self) -> int:
        return sum(l.params for l in self.layers)

    @property
    def macs_gops(self) -> float:
        return self.macs / 1e9

    @property
    def params_m(self) -> float:
        return self.params / 1e6

    def to_text(self) -> str:
        lines = [
            f"input resolution: {self.input_resolution[1]}x{self.input_resolution[0]} (WxH)",
            f"{'layer':<28} {'kind':<10} {'out':>9} {'MACs':>14} {'params':>10}",
        ]
        for l in self.layers:
            lines.append(
                f"{l.name:<28} {l.kind:<10} "
                f"{f'{l.out_width}x{l.out_height}':>9} {l.macs:>14,} {l.params:>10,}"
            )
        lines.append(
            f"total: {self.macs_gops:.4f} Gops MACs, {self.params_m:.4f} M params"
        )
        lines.append(f"convention: {self.convention}")
        lines.append("reference costs (published):")
        for name, cost in REFERENCE_COSTS.items():
            lines.append(
                f"  {name:<26} {cost['macs_gops']:>8.3f} Gops  {cost['params_m']:>7.3f} M"
            )
        return "\n".join(lines)


def _plan_layers(
    spec: AutoencoderSpec, height: int, width: int
) -> list[LayerCost]:
    """Enumerate every costed layer of the autoencoder, mirroring models.py."""
    channels = spec.scaled_channels()
    stages = spec.encoder_stages
    layers: list[LayerCost] = []
    h, w = height, width

    def conv(name, kind, c_in, c_out, k, bias, h_out, w_out, depthwise=False):
        if depthwise:
            macs = c_in * k * k * h_out * w_out
            params = c_in * k * k
        else:
            macs = c_in * c_out * k * k * h_out * w_out
            params = c_in * c_out * k * k
        if bias:
            params += c_out
        layers.append(LayerCost(name, kind, macs, params, h_out, w_out))

    def norm(name, c, h_out, w_out):
        layers.append(LayerCost(name, "norm", 0, 2 * c, h_out, w_out))

    # encoder
    h, w = h // stages[0].stride, w // stages[0].stride
    conv("enc.stem", "conv", 3, channels[0], 3, False, h, w)
    norm("enc.stem.bn", channels[0], h, w)
    for i in range(1, len(stages)):
        h, w = h // stages[i].stride, w // stages[i].stride
        conv(f"enc.{i}.dw", "depthwise", channels[i - 1], channels[i - 1], 3, False, h, w, depthwise=True)
        norm(f"enc.{i}.dw.bn", channels[i - 1], h, w)
        conv(f"enc.{i}.pw", "pointwise", channels[i - 1], channels[i], 1, False, h, w)
        norm(f"enc.{i}.pw.bn", channels[i], h, w)

    # decoder (mirror)
    for i in range(len(stages) - 1, 0, -1):
        if stages[i].stride == 2:
            h, w = h * 2, w * 2
        conv(f"dec.{i}.dw", "depthwise", channels[i], channels[i], 3, False, h, w, depthwise=True)
        norm(f"dec.{i}.dw.bn", channels[i], h, w)
        conv(f"dec.{i}.pw", "pointwise", channels[i], channels[i - 1], 1, False, h, w)
        norm(f"dec.{i}.pw.bn", channels[i - 1], h, w)
    if stages[0].stride == 2:
        h, w = h * 2, w * 2
    conv("dec.out", "conv", channels[0], 3, 3, True, h, w)
    return layers


def count_macs(
    spec: AutoencoderSpec, input_resolution: Optional[tuple[int, int]] = None
) -> EfficiencyReport:
    """Full per-layer MAC/param report at the given (height, width)."""
    if input_resolution is None:
        input_resolution = (spec.input_height, spec.input_width)
    height, width = input_resolution
    sp = spec.stride_product
    if height % sp or width % sp:
        raise ConfigurationError(
            f"resolution {width}x{height} incompatible with stride product {sp}"
        )
    return EfficiencyReport(
        layers=tuple(_plan_layers(spec, height, width)),
        input_resolution=(height, width),
    )


def count_params(spec: AutoencoderSpec) -> float:
    """Total stored parameters, in millions."""
    return count_macs(spec).params_m


def width_sweep(
    alphas: Sequence[float],
    run_fn: Callable[[AutoencoderSpec], float],
    base_spec: AutoencoderSpec = AutoencoderSpec(),
    plot_path=None,
) -> list[dict]:
    """Train/evaluate an obfuscator per width multiplier and record (MACs, AP).

    `run_fn` receives the scaled spec and returns person AP (%); a failed run
    is recorded with its error and the sweep continues.
    """
    results = []
    for alpha in alphas:
        spec = AutoencoderSpec(
            width_multiplier=alpha,
            encoder_stages=base_spec.encoder_stages,
            input_height=base_spec.input_height,
            input_width=base_spec.input_width,
        )
        entry = {"alpha": alpha, "macs_gops": count_macs(spec).macs_gops}
        try:
            entry["person_ap"] = run_fn(spec)
        except Exception as exc:  # record and continue; the sweep is best-effort
            entry["person_ap"] = None
            entry["error"] = f"{type(exc).__name__}: {exc}"
        results.append(entry)
    if plot_path is not None:
        plot_sweep(results, plot_path)
    return results


def plot_sweep(results: Iterable[dict], plot_path) -> None:
    """Accuracy as a function of MACs (x: MACs in Gops, y: person AP %)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    ok = [r for r in results if r.get("person_ap") is not None]
    fig, ax = plt.subplots(figsize=(5, 4))
    xs = [r["macs_gops"] for r in ok]
    ys = [r["person_ap"] for r in ok]
    ax.plot(xs, ys, "o-")
    for r in ok:
        ax.annotate(f"α={r['alpha']}", (r["macs_gops"], r["person_ap"]))
    ax.set_xlabel("MACs (Gops)")
    ax.set_ylabel("Person AP (%)")
    ax.set_title("Accuracy vs compute")
    fig.tight_layout()
    fig.savefig(plot_path)
    plt.close(fig)
