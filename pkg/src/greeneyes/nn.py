"""Network layers and the assembled GreenEyes regressor.

Sequences are laid out time-major as ``(..., T, channels)``; any leading
axes are treated as a batch. Parameters live as plain float64 arrays on
:class:`GreenEyesModel` and are wrapped into tape-tracked tensors per call.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor, Tape

ATTENTION_KINDS = ("temporal", "dot_product", "none")


@dataclass(frozen=True)
class CausalConvParams:
    weight: Tensor  # (out_channels, in_channels, kernel_size)
    bias: Tensor  # (out_channels,)
    dilation: int = 1

    @property
    def kernel_size(self) -> int:
        return self.weight.shape[2]


@dataclass(frozen=True)
class WaveNetLayerParams:
    filter_conv: CausalConvParams
    gate_conv: CausalConvParams
    residual_proj: CausalConvParams
    skip_proj: CausalConvParams


@dataclass(frozen=True)
class WaveNetBlockParams:
    layers: tuple[WaveNetLayerParams, ...]

    @property
    def dilations(self) -> list[int]:
        return [layer.filter_conv.dilation for layer in self.layers]


@dataclass(frozen=True)
class AttentionParams:
    kind: str
    weight: Tensor | None = None  # (features, 1)
    bias: Tensor | None = None  # (1,)

    def __post_init__(self):
        if self.kind not in ATTENTION_KINDS:
            raise ValueError(f"unknown attention kind {self.kind!r}")
        has = self.weight is not None and self.bias is not None
        if has != (self.kind == "temporal"):
            raise ValueError("score weights are required for, and only for, temporal attention")


@dataclass(frozen=True)
class LstmDirection:
    w_x: Tensor  # (input_dim, 4H), gate order i, f, o, g
    w_h: Tensor  # (H, 4H)
    bias: Tensor  # (4H,)


@dataclass(frozen=True)
class LstmParams:
    input_dim: int
    hidden_dim: int
    forward: LstmDirection
    backward: LstmDirection | None = None

    @property
    def bidirectional(self) -> bool:
        return self.backward is not None


# ---------------------------------------------------------------- layer ops


def causal_conv1d(x: Tensor, p: CausalConvParams) -> Tensor:
    """Dilated causal convolution along the time axis, length preserving.

    ``y[t] = bias + sum_j W[:, :, j] @ x[t - (k-1-j)*d]`` with zeros before t=0.
    """
    cout, cin, k = p.weight.shape
    if x.ndim < 2 or x.shape[-1] != cin:
        raise ShapeError(f"causal_conv1d: expected (..., T, {cin}) input, got {x.shape}")
    if p.dilation < 1:
        raise ValueError("dilation must be >= 1")
    if k == 1:
        cols = x
    else:
        taps = [T.shift(x, (k - 1 - j) * p.dilation, axis=-2) for j in range(k)]
        cols = T.reshape(T.stack(taps, axis=-1), x.shape[:-1] + (cin * k,))
    kernel = T.transpose(T.reshape(p.weight, (cout, cin * k)))
    return T.matmul(cols, kernel) + p.bias


def gated_activation(xf: Tensor, xg: Tensor) -> Tensor:
    if xf.shape != xg.shape:
        raise ShapeError(f"gated_activation: {xf.shape} vs {xg.shape}")
    return T.tanh(xf) * T.sigmoid(xg)


def wavenet_layer_forward(x: Tensor, p: WaveNetLayerParams) -> tuple[Tensor, Tensor]:
    z = gated_activation(causal_conv1d(x, p.filter_conv), causal_conv1d(x, p.gate_conv))
    residual = x + causal_conv1d(z, p.residual_proj)
    skip = causal_conv1d(z, p.skip_proj)
    return residual, skip


def wavenet_block_forward(x: Tensor, p: WaveNetBlockParams) -> tuple[Tensor, Tensor]:
    if not p.layers:
        raise ValueError("WaveNet block needs at least one layer")
    skip_sum = None
    for layer in p.layers:
        x, skip = wavenet_layer_forward(x, layer)
        skip_sum = skip if skip_sum is None else skip_sum + skip
    return x, skip_sum


def temporal_attention(V: Tensor, p: AttentionParams) -> Tensor:
    """Reweight each timestep by exp(tanh(W.v_t + b)); no normalisation over time."""
    if p.kind != "temporal":
        raise ValueError("temporal_attention needs kind='temporal'")
    if V.shape[-1] != p.weight.shape[0]:
        raise ShapeError(f"temporal_attention: {V.shape[-1]} features vs W {p.weight.shape}")
    scores = T.matmul(V, p.weight) + p.bias
    return T.exp(T.tanh(scores)) * V


def dot_product_attention(X: Tensor) -> Tensor:
    """Self attention with X as query, key and value: softmax(X X^T) X."""
    weights = T.softmax(T.matmul(X, T.transpose(X)), axis=-1)
    return T.matmul(weights, X)


def apply_attention(V: Tensor, p: AttentionParams) -> Tensor:
    if p.kind == "temporal":
        return temporal_attention(V, p)
    if p.kind == "dot_product":
        return dot_product_attention(V)
    return V


def _lstm_run(seq: Tensor, cell: LstmDirection, hidden: int, reverse: bool) -> list[Tensor]:
    # hidden states in processing order; seq is (B, T, F)
    xp = T.matmul(seq, cell.w_x) + cell.bias
    steps = seq.shape[-2]
    h = c = Tensor(np.zeros(seq.shape[:-2] + (hidden,)))
    out = []
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    for t in order:
        z = T.take(xp, t, axis=-2) + T.matmul(h, cell.w_h)
        s = T.sigmoid(T.slice_axis(z, 0, 3 * hidden))
        g = T.tanh(T.slice_axis(z, 3 * hidden, 4 * hidden))
        i = T.slice_axis(s, 0, hidden)
        f = T.slice_axis(s, hidden, 2 * hidden)
        o = T.slice_axis(s, 2 * hidden, 3 * hidden)
        c = f * c + i * g
        h = o * T.tanh(c)
        out.append(h)
    return out


def _batched(seq: Tensor, p: LstmParams) -> tuple[Tensor, bool]:
    if seq.shape[-1] != p.input_dim:
        raise ShapeError(f"LSTM expects {p.input_dim} features, got {seq.shape[-1]}")
    if seq.ndim == 2:
        return T.reshape(seq, (1,) + seq.shape), True
    return seq, False


def lstm_sequence(seq: Tensor, p: LstmParams, direction: str = "forward") -> Tensor:
    """All hidden states (..., T, H), in time order for either direction."""
    seq, squeeze = _batched(seq, p)
    if direction == "forward":
        hs = _lstm_run(seq, p.forward, p.hidden_dim, reverse=False)
    elif direction == "backward":
        if p.backward is None:
            raise ValueError("LSTM has no backward direction")
        hs = _lstm_run(seq, p.backward, p.hidden_dim, reverse=True)[::-1]
    else:
        raise ValueError(f"unknown direction {direction!r}")
    out = T.stack(hs, axis=-2)
    return T.reshape(out, out.shape[1:]) if squeeze else out


def bilstm_readout(seq: Tensor, p: LstmParams) -> Tensor:
    """Terminal forward state h_T, concatenated with backward state h_1 if bidirectional."""
    seq, squeeze = _batched(seq, p)
    parts = [_lstm_run(seq, p.forward, p.hidden_dim, reverse=False)[-1]]
    if p.backward is not None:
        parts.append(_lstm_run(seq, p.backward, p.hidden_dim, reverse=True)[-1])
    out = parts[0] if len(parts) == 1 else T.concat(parts, axis=-1)
    return T.reshape(out, out.shape[1:]) if squeeze else out


def avg_pool_time(x: Tensor, factor: int) -> Tensor:
    """Non-overlapping means over time; a trailing partial window is dropped."""
    if factor < 1:
        raise ValueError("pool factor must be >= 1")
    steps = x.shape[-2]
    if factor > steps:
        raise ShapeError(f"pool factor {factor} exceeds sequence length {steps}")
    if factor == 1:
        return x
    n = steps // factor
    x = T.slice_axis(x, 0, n * factor, axis=-2)
    x = T.reshape(x, x.shape[:-2] + (n, factor, x.shape[-1]))
    return T.reduce("mean", x, axis=-2)


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    return T.matmul(x, weight) + bias


# ---------------------------------------------------------------- the model


@dataclass
class ModelConfig:
    window_size: int = 7200
    input_channels: int = 1
    block_layers: tuple[int, ...] = (8, 5, 3)
    kernel_size: int = 3
    filters: int = 16
    attention_kind: str = "temporal"
    use_lstm: bool = True
    lstm_hidden: int = 32
    bidirectional: bool = True
    pool_factor: int = 1
    head_hidden: tuple[int, ...] = ()
    seed: int = 0

    def __post_init__(self):
        self.block_layers = tuple(int(n) for n in self.block_layers)
        self.head_hidden = tuple(int(n) for n in self.head_hidden)
        if self.attention_kind == "dot":
            self.attention_kind = "dot_product"
        self.validate()

    def validate(self) -> None:
        positive = ("window_size", "input_channels", "kernel_size", "filters", "lstm_hidden", "pool_factor")
        for name in positive:
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.block_layers or min(self.block_layers) < 1:
            raise ValueError("block_layers must be a nonempty list of positive counts")
        if self.attention_kind not in ATTENTION_KINDS:
            raise ValueError(f"attention_kind must be one of {ATTENTION_KINDS}")
        if self.pool_factor > self.window_size:
            raise ValueError("pool_factor exceeds window_size")

    @property
    def receptive_field(self) -> int:
        dilations = sum(2**j for n in self.block_layers for j in range(n))
        return 1 + (self.kernel_size - 1) * dilations

    def to_dict(self) -> dict:
        d = asdict(self)
        d["block_layers"] = list(self.block_layers)
        d["head_hidden"] = list(self.head_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass(frozen=True)
class ParamSpec:
    shape: tuple[int, ...]
    fan_in: int
    fan_out: int
    kind: str  # "weight" | "bias" | "forget_bias"


def parameter_specs(cfg: ModelConfig) -> dict[str, ParamSpec]:
    """Ordered name -> shape/fan table for every parameter of ``cfg``."""
    F, k = cfg.filters, cfg.kernel_size
    specs: dict[str, ParamSpec] = {}

    def conv(name, cout, cin, ksize):
        specs[f"{name}.weight"] = ParamSpec((cout, cin, ksize), cin * ksize, cout * ksize, "weight")
        specs[f"{name}.bias"] = ParamSpec((cout,), 0, 0, "bias")

    def linear(name, n_in, n_out):
        specs[f"{name}.weight"] = ParamSpec((n_in, n_out), n_in, n_out, "weight")
        specs[f"{name}.bias"] = ParamSpec((n_out,), 0, 0, "bias")

    conv("input_proj", F, cfg.input_channels, 1)
    for b, n_layers in enumerate(cfg.block_layers):
        for j in range(n_layers):
            prefix = f"blocks.{b}.layers.{j}"
            conv(f"{prefix}.filter", F, F, k)
            conv(f"{prefix}.gate", F, F, k)
            conv(f"{prefix}.residual", F, F, 1)
            conv(f"{prefix}.skip", F, F, 1)
    if cfg.attention_kind == "temporal":
        linear("attention", F, 1)
    if cfg.use_lstm:
        H = cfg.lstm_hidden
        for direction in ("forward", "backward") if cfg.bidirectional else ("forward",):
            prefix = f"lstm.{direction}"
            specs[f"{prefix}.w_x"] = ParamSpec((F, 4 * H), F, 4 * H, "weight")
            specs[f"{prefix}.w_h"] = ParamSpec((H, 4 * H), H, 4 * H, "weight")
            specs[f"{prefix}.bias"] = ParamSpec((4 * H,), 0, 0, "forget_bias")
        width = 2 * H if cfg.bidirectional else H
    else:
        width = F
    for i, hidden in enumerate(cfg.head_hidden):
        linear(f"head.{i}", width, hidden)
        width = hidden
    linear(f"head.{len(cfg.head_hidden)}", width, 1)
    return specs


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def _param_rng(seed: int, name: str) -> np.random.Generator:
    # one stream per parameter name, so ablated configs share the other weights
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


def init_params(config: ModelConfig, seed: int | None = None) -> GreenEyesModel:
    """Glorot-uniform weights, zero biases, LSTM forget-gate bias 1."""
    seed = config.seed if seed is None else seed
    params = {}
    for name, spec in parameter_specs(config).items():
        if spec.kind == "weight":
            bound = glorot_bound(spec.fan_in, spec.fan_out)
            params[name] = _param_rng(seed, name).uniform(-bound, bound, spec.shape)
        else:
            value = np.zeros(spec.shape)
            if spec.kind == "forget_bias":
                H = spec.shape[0] // 4
                value[H : 2 * H] = 1.0
            params[name] = value
    return GreenEyesModel(config, params)


@dataclass
class GreenEyesModel:
    config: ModelConfig
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        specs = parameter_specs(self.config)
        if set(specs) != set(self.params):
            missing = sorted(set(specs) - set(self.params))
            extra = sorted(set(self.params) - set(specs))
            raise ShapeError(f"parameter names do not match config (missing {missing}, unexpected {extra})")
        ordered = {}
        for name, spec in specs.items():
            arr = np.asarray(self.params[name], dtype=np.float64)
            if arr.shape != spec.shape:
                raise ShapeError(f"parameter {name}: shape {arr.shape}, config expects {spec.shape}")
            ordered[name] = arr
        self.params = ordered

    def num_parameters(self) -> int:
        return sum(a.size for a in self.params.values())

    def copy(self) -> GreenEyesModel:
        return GreenEyesModel(self.config, {k: v.copy() for k, v in self.params.items()})

    # -- structure

    def _structure(self, p: dict[str, Tensor]):
        cfg = self.config

        def conv(name, dilation=1):
            return CausalConvParams(p[f"{name}.weight"], p[f"{name}.bias"], dilation)

        blocks = []
        for b, n_layers in enumerate(cfg.block_layers):
            layers = []
            for j in range(n_layers):
                prefix = f"blocks.{b}.layers.{j}"
                layers.append(
                    WaveNetLayerParams(
                        conv(f"{prefix}.filter", 2**j),
                        conv(f"{prefix}.gate", 2**j),
                        conv(f"{prefix}.residual"),
                        conv(f"{prefix}.skip"),
                    )
                )
            blocks.append(WaveNetBlockParams(tuple(layers)))

        if cfg.attention_kind == "temporal":
            attention = AttentionParams("temporal", p["attention.weight"], p["attention.bias"])
        else:
            attention = AttentionParams(cfg.attention_kind)

        lstm = None
        if cfg.use_lstm:
            def direction(name):
                return LstmDirection(p[f"lstm.{name}.w_x"], p[f"lstm.{name}.w_h"], p[f"lstm.{name}.bias"])

            lstm = LstmParams(
                cfg.filters,
                cfg.lstm_hidden,
                direction("forward"),
                direction("backward") if cfg.bidirectional else None,
            )

        head = [(p[f"head.{i}.weight"], p[f"head.{i}.bias"]) for i in range(len(cfg.head_hidden) + 1)]
        return conv("input_proj"), blocks, attention, lstm, head

    def tensors(self, requires_grad: bool = False) -> dict[str, Tensor]:
        return {name: Tensor(value, requires_grad=requires_grad) for name, value in self.params.items()}

    def _check_window(self, window) -> tuple[Tensor, bool]:
        x = window if isinstance(window, Tensor) else Tensor(window)
        want = (self.config.window_size, self.config.input_channels)
        if x.ndim == 2 and x.shape == want:
            return T.reshape(x, (1,) + want), True
        if x.ndim == 3 and x.shape[1:] == want:
            return x, False
        raise ShapeError(f"window shape {x.shape} does not match config (window_size, channels) = {want}")

    # -- forward passes

    def features(self, window, p: dict[str, Tensor] | None = None) -> Tensor:
        """Pre-attention features: relu of the summed block skip outputs."""
        x, squeeze = self._check_window(window)
        out = self._features(x, p if p is not None else self.tensors())
        return T.reshape(out, out.shape[1:]) if squeeze else out

    def _features(self, x: Tensor, p: dict[str, Tensor]) -> Tensor:
        input_proj, blocks, _, _, _ = self._structure(p)
        h = causal_conv1d(x, input_proj)
        total = None
        for block in blocks:
            h, skip = wavenet_block_forward(h, block)
            total = skip if total is None else total + skip
        return T.relu(total)

    def forward(self, window, p: dict[str, Tensor] | None = None) -> Tensor:
        """Scalar prediction for a (window, channels) input, or (B,) for a batch."""
        x, squeeze = self._check_window(window)
        p = p if p is not None else self.tensors()
        _, _, attention, lstm, head = self._structure(p)
        h = self._features(x, p)
        h = apply_attention(h, attention)
        h = avg_pool_time(h, self.config.pool_factor)
        if lstm is not None:
            h = bilstm_readout(h, lstm)
        else:
            h = T.reduce("mean", h, axis=-2)
        for weight, bias in head[:-1]:
            h = T.relu(dense(h, weight, bias))
        out = dense(h, *head[-1])
        out = T.reshape(out, out.shape[:-1])
        return T.reshape(out, ()) if squeeze else out

    __call__ = forward

    def predict(self, inputs: np.ndarray, batch_size: int = 64) -> np.ndarray:
        """Batched inference on an (N, window, channels) array."""
        inputs = np.asarray(inputs, dtype=np.float64)
        p = self.tensors()
        out = [self.forward(inputs[i : i + batch_size], p).data for i in range(0, len(inputs), batch_size)]
        return np.concatenate(out) if out else np.zeros(0)

    def loss_and_grads(self, inputs, targets) -> tuple[float, np.ndarray, dict[str, np.ndarray]]:
        """Mean squared error of a batch and its gradient for every parameter."""
        targets = Tensor(np.asarray(targets, dtype=np.float64))
        with Tape() as tape:
            p = self.tensors(requires_grad=True)
            pred = self.forward(inputs, p)
            diff = pred - targets
            loss = T.reduce("mean", diff * diff)
        grads = T.backward(tape, loss)
        return loss.item(), pred.data, {name: grads[t.node_id].data for name, t in p.items()}


def model_forward(window, m: GreenEyesModel) -> Tensor:
    return m.forward(window)


def receptive_field(block_layers: Sequence[int], kernel_size: int) -> int:
    return 1 + (kernel_size - 1) * sum(2**j for n in block_layers for j in range(n))
