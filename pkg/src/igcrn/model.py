"""Inplace gated convolutional recurrent network (IGCRN).

Encoder: six GLU blocks ``ELU(BN(conv_main(x) * sigmoid(conv_gate(x))))``
with 5x1 kernels, frequency stride 1 and frequency padding 2 so the
frequency extent never shrinks. Bottleneck: the frequency axis is folded
into the batch axis and one 2-layer bidirectional LSTM is shared by all
frequency slots, followed by a linear projection back to the encoder width.
Two decoders (amplitude, phase) of six transpose-GLU blocks mirror the
encoder with U-Net skips; each of their two output maps passes a
frequency-wise affine layer.

The ``downsample_stages = k`` variants put frequency stride 2 on the last k
encoder blocks (doubling channels each time) and mirror it in the decoders.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import NamedTuple

import numpy as np

from . import nn
from . import tensor as T
from .nn import BatchNormState, ConfigError, Initializer, ParameterStore
from .tensor import Tensor

PHASE_EPS = 1e-12
LSTM_CAP = 2048


@dataclass(frozen=True)
class ModelConfig:
    base_channels: int = 64
    downsample_stages: int = 0
    freq_bins: int = 256
    in_channels: int = 4
    encoder_layers: int = 6
    kernel_freq: int = 5
    lstm_layers: int = 2
    lstm_hidden: int | None = None

    def __post_init__(self):
        if self.encoder_layers < 1:
            raise ConfigError("need at least one encoder layer")
        if not 0 <= self.downsample_stages <= self.encoder_layers:
            raise ConfigError(
                f"downsample_stages must be in [0, {self.encoder_layers}], got {self.downsample_stages}")
        if self.kernel_freq % 2 != 1:
            raise ConfigError("kernel_freq must be odd for inplace padding")
        if self.freq_bins % (2 ** self.downsample_stages):
            raise ConfigError("freq_bins must be divisible by 2**downsample_stages")
        if self.base_channels < 1 or self.lstm_layers < 1:
            raise ConfigError("channel and layer counts must be positive")

    @property
    def padding(self) -> int:
        return self.kernel_freq // 2

    def downsamples(self) -> list[bool]:
        """Per encoder block: does it halve the frequency extent?"""
        n, k = self.encoder_layers, self.downsample_stages
        return [i >= n - k for i in range(n)]

    def encoder_channels(self) -> list[int]:
        """Channel extents ``[input, after block 1, ..., after block n]``."""
        chans = [self.in_channels]
        c = self.base_channels
        for i, ds in enumerate(self.downsamples()):
            if ds:
                c *= 2
            chans.append(c)
        return chans

    def encoder_freqs(self) -> list[int]:
        freqs = [self.freq_bins]
        for ds in self.downsamples():
            freqs.append(freqs[-1] // 2 if ds else freqs[-1])
        return freqs

    @property
    def bottleneck_channels(self) -> int:
        return self.encoder_channels()[-1]

    @property
    def lstm_width(self) -> int:
        if self.lstm_hidden is not None:
            return self.lstm_hidden
        return min(self.bottleneck_channels, LSTM_CAP)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown model config keys {sorted(unknown)}")
        return cls(**d)


VARIANTS: dict[str, ModelConfig] = {
    "IGCRN64": ModelConfig(base_channels=64),
    "IGCRN80": ModelConfig(base_channels=80),
    **{f"IGCRN64-{k}DS": ModelConfig(base_channels=64, downsample_stages=k) for k in range(1, 7)},
}


def variant_config(name: str) -> ModelConfig:
    try:
        return VARIANTS[name]
    except KeyError:
        raise ConfigError(f"unknown variant {name!r}; known: {', '.join(VARIANTS)}") from None


class NetworkOutput(NamedTuple):
    amplitude_mask: Tensor  # [B,1,F,T]
    amplitude_map: Tensor  # [B,1,F,T]
    phase_raw: Tensor  # [B,2,F,T]


class IGCRN:
    """Network parameters plus the forward pass."""

    def __init__(self, cfg: ModelConfig = ModelConfig(), seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.params = ParameterStore()
        self._build(Initializer(np.random.default_rng(seed), self.dtype))

    # ------------------------------------------------------------ construction

    def _glu_params(self, prefix: str, c_in: int, c_out: int, init: Initializer, transpose: bool):
        k = self.cfg.kernel_freq
        fan_in = c_in * k
        shape = (c_in, c_out, k, 1) if transpose else (c_out, c_in, k, 1)
        for branch in ("main", "gate"):
            self.params.add(f"{prefix}.{branch}.weight", init.uniform(shape, fan_in))
            self.params.add(f"{prefix}.{branch}.bias", init.uniform((c_out,), fan_in))
        self.params.add(f"{prefix}.bn.gamma", np.ones(c_out, dtype=self.dtype))
        self.params.add(f"{prefix}.bn.beta", np.zeros(c_out, dtype=self.dtype))
        self.params.add_bn(f"{prefix}.bn", BatchNormState.create(c_out, dtype=self.dtype))

    def _build(self, init: Initializer) -> None:
        cfg = self.cfg
        chans = cfg.encoder_channels()
        for i in range(cfg.encoder_layers):
            self._glu_params(f"enc{i + 1}", chans[i], chans[i + 1], init, transpose=False)

        hid, width = cfg.lstm_width, cfg.bottleneck_channels
        for layer in range(cfg.lstm_layers):
            d_in = width if layer == 0 else 2 * hid
            for direction in ("fwd", "bwd"):
                p = f"lstm.l{layer}.{direction}"
                self.params.add(f"{p}.w_ih", init.uniform((4 * hid, d_in), d_in))
                self.params.add(f"{p}.w_hh", init.uniform((4 * hid, hid), hid))
                b = init.uniform((4 * hid,), hid)
                b[hid:2 * hid] += 1.0
                self.params.add(f"{p}.bias", b)
        self.params.add("lstm.proj.weight", init.uniform((width, 2 * hid), 2 * hid))
        self.params.add("lstm.proj.bias", init.uniform((width,), 2 * hid))

        n = cfg.encoder_layers
        f = cfg.freq_bins
        for dec in ("amp", "phase"):
            for j in range(1, n + 1):
                e = n + 1 - j  # mirrored encoder block
                c_in = 2 * chans[e]
                c_out = 2 if j == n else chans[e - 1]
                self._glu_params(f"{dec}_dec{j}", c_in, c_out, init, transpose=True)
            self.params.add(f"{dec}_head.weight", init.uniform((2, f, f), f))
            self.params.add(f"{dec}_head.bias", init.uniform((2, f), f))

    # ------------------------------------------------------------ forward

    def _glu(self, prefix: str, x: Tensor, training: bool, transpose: bool, downsample: bool) -> Tensor:
        p = self.params
        pad = (self.cfg.padding, 0)
        stride = (2, 1) if downsample else (1, 1)
        axis = 1 if transpose else 0
        w = T.concat([p[f"{prefix}.main.weight"], p[f"{prefix}.gate.weight"]], axis=axis)
        b = T.concat([p[f"{prefix}.main.bias"], p[f"{prefix}.gate.bias"]], axis=0)
        if transpose:
            z = nn.conv_transpose2d(x, w, b, stride, pad, (1, 0) if downsample else (0, 0))
        else:
            z = nn.conv2d(x, w, b, stride, pad)
        return nn.gated_norm_elu(z, p[f"{prefix}.bn.gamma"], p[f"{prefix}.bn.beta"],
                                 p.bn(f"{prefix}.bn"), training)

    def lstm_stage(self, x: Tensor, trace: list | None = None) -> Tensor:
        """Frequency-shared Bi-LSTM + projection on ``[B, C, F, T]``."""
        b, c, f, t = x.shape
        seq = nn.reshape_freq_to_batch(x)
        _log(trace, "reshape", x, seq)
        h = seq
        for layer in range(self.cfg.lstm_layers):
            p = f"lstm.l{layer}"
            outs = [nn.lstm_layer(h, self.params[f"{p}.{d}.w_ih"], self.params[f"{p}.{d}.w_hh"],
                                  self.params[f"{p}.{d}.bias"], reverse=(d == "bwd"))
                    for d in ("fwd", "bwd")]
            h = T.concat(outs, axis=2)
        _log(trace, "blstm", seq, h)
        proj = nn.linear(h, self.params["lstm.proj.weight"], self.params["lstm.proj.bias"])
        _log(trace, "linear", h, proj)
        out = nn.reshape_batch_to_freq(proj, b, f)
        _log(trace, "reshape_back", proj, out)
        return out

    def forward(self, x: Tensor, training: bool = False, trace: list | None = None) -> NetworkOutput:
        """Map ``[B, 4, F, T]`` features to mask, map and raw phase heads.

        ``trace``, when given, collects ``(layer, input_shape, output_shape)``.
        """
        cfg = self.cfg
        if x.ndim != 4 or x.shape[1] != cfg.in_channels or x.shape[2] != cfg.freq_bins:
            raise ConfigError(
                f"expected input [B, {cfg.in_channels}, {cfg.freq_bins}, T], got {x.shape}")
        n = cfg.encoder_layers
        ds = cfg.downsamples()
        skips = []
        h = x
        for i in range(n):
            out = self._glu(f"enc{i + 1}", h, training, transpose=False, downsample=ds[i])
            _log(trace, f"iGLU{i + 1}", h, out)
            skips.append(out)
            h = out
        mid = self.lstm_stage(h, trace)

        heads = []
        for dec in ("amp", "phase"):
            d = mid
            for j in range(1, n + 1):
                e = n + 1 - j
                inp = T.concat([d, skips[e - 1]], axis=1)
                d = self._glu(f"{dec}_dec{j}", inp, training, transpose=True, downsample=ds[e - 1])
                _log(trace, f"{dec}.iTGLU{e}", inp, d)
            head = nn.freq_linear(d, self.params[f"{dec}_head.weight"], self.params[f"{dec}_head.bias"])
            _log(trace, f"{dec}.head", d, head)
            heads.append(head)
        mask, amp_map = T.split(heads[0], [1, 1], axis=1)
        return NetworkOutput(mask, amp_map, heads[1])

    __call__ = forward

    def count_params(self) -> int:
        return self.params.count()


def _log(trace, name, a, b) -> None:
    if trace is not None:
        trace.append((name, tuple(a.shape), tuple(b.shape)))


# ---------------------------------------------------------------- spectrum recovery and loss


def recover_spectrum(out: NetworkOutput, noisy_amp: np.ndarray) -> tuple[Tensor, Tensor]:
    """Amplitude = max(mask * |noisy| + map, 0); phase = raw / |raw| (epsilon-guarded)."""
    mask, amp_map, raw = out
    noisy_amp = np.asarray(noisy_amp, dtype=mask.dtype)
    amp = T.clamp_min(T.add(T.mul(mask, noisy_amp), amp_map), 0.0)
    r, i = T.split(raw, [1, 1], axis=1)
    norm = T.sqrt(T.add(T.add(T.square(r), T.square(i)), PHASE_EPS))
    phase = T.concat([T.div(r, norm), T.div(i, norm)], axis=1)
    return amp, phase


def compressed_loss(amp_est: Tensor, phase_est: Tensor, amp_clean: np.ndarray,
                    phase_clean: np.ndarray) -> Tensor:
    """Power-law compressed amplitude + amplitude-weighted phase error, averaged over bins."""
    if amp_est.shape != np.shape(amp_clean) or phase_est.shape != np.shape(phase_clean):
        raise T.ShapeError("estimate and target shapes differ")
    dt = amp_est.dtype
    cs = np.cbrt(np.asarray(amp_clean, dtype=dt))
    pc = np.asarray(phase_clean, dtype=dt)
    ca = T.cube_root(amp_est)
    pr, pi = T.split(phase_est, [1, 1], axis=1)
    t1 = T.square(T.sub(ca, cs))
    t2 = T.square(T.sub(T.mul(ca, pr), cs * pc[:, 0:1]))
    t3 = T.square(T.sub(T.mul(ca, pi), cs * pc[:, 1:2]))
    return T.add(T.add(T.mean_all(t1), T.mean_all(t2)), T.mean_all(t3))


# ---------------------------------------------------------------- accounting


def count_params_and_macs(cfg: ModelConfig, frames_per_second: float = 62.5) -> tuple[int, float]:
    """Exact trainable parameter count and multiply-accumulates per second of audio.

    MACs cover convolutions, LSTM matrix products, the projection and the
    output heads for one forward pass at ``frames_per_second``.
    """
    k = cfg.kernel_freq
    chans = cfg.encoder_channels()
    freqs = cfg.encoder_freqs()
    n = cfg.encoder_layers
    params = 0
    macs = 0  # per frame

    def glu(c_in, c_out, positions):
        nonlocal params, macs
        params += 2 * (c_in * c_out * k + c_out) + 2 * c_out
        macs += 2 * c_in * c_out * k * positions

    for i in range(n):
        glu(chans[i], chans[i + 1], freqs[i + 1])
    hid, width, fb = cfg.lstm_width, cfg.bottleneck_channels, freqs[-1]
    for layer in range(cfg.lstm_layers):
        d_in = width if layer == 0 else 2 * hid
        params += 2 * (4 * hid * (d_in + hid) + 4 * hid)
        macs += 2 * 4 * hid * (d_in + hid) * fb
    params += width * 2 * hid + width
    macs += width * 2 * hid * fb
    f = cfg.freq_bins
    for _ in range(2):
        for j in range(1, n + 1):
            e = n + 1 - j
            c_out = 2 if j == n else chans[e - 1]
            # transpose convs counted over output positions (zero-insertion form)
            glu(2 * chans[e], c_out, freqs[e - 1])
        params += 2 * (f * f + f)
        macs += 2 * f * f
    return params, macs * frames_per_second


def build_variant(spec: str | ModelConfig, seed: int = 0, dtype=np.float32) -> IGCRN:
    cfg = variant_config(spec) if isinstance(spec, str) else spec
    return IGCRN(cfg, seed=seed, dtype=dtype)
