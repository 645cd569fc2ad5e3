"""Versioned binary checkpoints: magic "CQN1", little-endian float64 payload.

Layout, in order: layer geometry, online net parameters, target net
parameters (with its sync generation), Adam moments and counters, feature
normalization stats, optional dose binners, and the training-config echo.
Parameter arrays are written in canonical layer order (trunk layers, value
head, advantage head; weights row-major, then biases), so a save/load round
trip is bit-exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .clinical import DoseBinners, QuartileBinner
from .data import NormStats
from .errors import SchemaError
from .mlp import Activation, AdamState, DenseLayer
from .qnet import DuelingQNet, TargetNet, net_from_layers

MAGIC = b"CQN1"

_ACT_CODES = {Activation.IDENTITY: 0, Activation.LEAKY_RELU: 1}
_ACT_FROM_CODE = {code: act for act, code in _ACT_CODES.items()}


@dataclass
class Checkpoint:
    """Everything needed to resume training or run evaluation self-contained."""

    net: DuelingQNet
    target: TargetNet
    adam: AdamState
    norm_stats: NormStats
    binners: DoseBinners | None
    config_text: str


def _write_array(out, arr: np.ndarray) -> None:
    out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    layers = ckpt.net.layers()
    out = [MAGIC, struct.pack("<I", len(layers))]
    for layer in layers:
        out.append(struct.pack("<IIB", layer.fan_out, layer.fan_in, _ACT_CODES[layer.activation]))

    for layer in layers:
        _write_array(out, layer.weights)
        _write_array(out, layer.biases)

    out.append(struct.pack("<Q", ckpt.target.generation))
    for layer in ckpt.target.net.layers():
        _write_array(out, layer.weights)
        _write_array(out, layer.biases)

    out.append(
        struct.pack(
            "<Qddd", ckpt.adam.step, ckpt.adam.beta1, ckpt.adam.beta2, ckpt.adam.epsilon
        )
    )
    for group in (ckpt.adam.m_weights, ckpt.adam.m_biases, ckpt.adam.v_weights, ckpt.adam.v_biases):
        for arr in group:
            _write_array(out, arr)

    out.append(struct.pack("<I", ckpt.norm_stats.means.size))
    _write_array(out, ckpt.norm_stats.means)
    _write_array(out, ckpt.norm_stats.stds)

    if ckpt.binners is None:
        out.append(struct.pack("<B", 0))
    else:
        out.append(struct.pack("<B", 1))
        b = ckpt.binners
        out.append(
            struct.pack(
                "<6d2Q",
                b.iv.q1, b.iv.q2, b.iv.q3, b.vp.q1, b.vp.q2, b.vp.q3,
                b.iv.n_fit, b.vp.n_fit,
            )
        )

    config_bytes = ckpt.config_text.encode("utf-8")
    out.append(struct.pack("<Q", len(config_bytes)))
    out.append(config_bytes)
    Path(path).write_bytes(b"".join(out))


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise SchemaError(f"{self.path}: truncated checkpoint")
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, shape) -> np.ndarray:
        count = int(np.prod(shape))
        raw = self.take(8 * count)
        return np.frombuffer(raw, dtype="<f8", count=count).astype(np.float64).reshape(shape)


def load_checkpoint(path) -> Checkpoint:
    reader = _Reader(Path(path).read_bytes(), path)
    if reader.take(4) != MAGIC:
        raise SchemaError(f"{path}: not a checkpoint file (bad magic)")
    (n_layers,) = reader.unpack("<I")
    if n_layers < 3:
        raise SchemaError(f"{path}: checkpoint must contain at least 3 layers")
    shapes = []
    for _ in range(n_layers):
        fan_out, fan_in, code = reader.unpack("<IIB")
        if code not in _ACT_FROM_CODE:
            raise SchemaError(f"{path}: unknown activation code {code}")
        shapes.append((fan_out, fan_in, _ACT_FROM_CODE[code]))

    def read_layers() -> list:
        layers = []
        for fan_out, fan_in, act in shapes:
            weights = reader.array((fan_out, fan_in))
            biases = reader.array((fan_out,))
            layers.append(DenseLayer(weights, biases, act))
        return layers

    net = net_from_layers(read_layers())
    (generation,) = reader.unpack("<Q")
    target = TargetNet(net=net_from_layers(read_layers()), generation=generation)

    step, beta1, beta2, epsilon = reader.unpack("<Qddd")

    def read_weight_group() -> list:
        return [reader.array((fan_out, fan_in)) for fan_out, fan_in, _act in shapes]

    def read_bias_group() -> list:
        return [reader.array((fan_out,)) for fan_out, _fan_in, _act in shapes]

    # Moment groups follow the save order: m_weights, m_biases, v_weights, v_biases.
    adam = AdamState(
        m_weights=read_weight_group(),
        m_biases=read_bias_group(),
        v_weights=read_weight_group(),
        v_biases=read_bias_group(),
        step=step,
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
    )

    (n_features,) = reader.unpack("<I")
    norm_stats = NormStats(
        means=reader.array((n_features,)), stds=reader.array((n_features,))
    )

    (has_binners,) = reader.unpack("<B")
    binners = None
    if has_binners:
        iv_q1, iv_q2, iv_q3, vp_q1, vp_q2, vp_q3, iv_n, vp_n = reader.unpack("<6d2Q")
        binners = DoseBinners(
            iv=QuartileBinner(iv_q1, iv_q2, iv_q3, int(iv_n)),
            vp=QuartileBinner(vp_q1, vp_q2, vp_q3, int(vp_n)),
        )

    (config_len,) = reader.unpack("<Q")
    config_text = reader.take(config_len).decode("utf-8")
    if reader.pos != len(reader.buf):
        raise SchemaError(f"{path}: trailing bytes after checkpoint payload")
    return Checkpoint(
        net=net,
        target=target,
        adam=adam,
        norm_stats=norm_stats,
        binners=binners,
        config_text=config_text,
    )
