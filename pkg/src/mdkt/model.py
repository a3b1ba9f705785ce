"""Feed-forward frame embedders with a classifier head, and clip pooling."""

import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, FormatError, ShapeError, UnsupportedVersionError

MAGIC = b"MDKTCKPT"
VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    layer_dims: tuple = (64, 64, 32)
    n_classes: int = 50
    init_seed: int = 0
    normalize: bool = False

    def __post_init__(self):
        object.__setattr__(self, "layer_dims", tuple(int(d) for d in self.layer_dims))

    @property
    def frame_dim(self):
        return self.layer_dims[0]

    @property
    def embedding_dim(self):
        return self.layer_dims[-1]

    def validate(self):
        if len(self.layer_dims) < 3:
            raise ConfigError("layer_dims needs input, at least one hidden and an embedding size", "layer_dims")
        if any(d < 1 for d in self.layer_dims):
            raise ConfigError("layer_dims entries must be positive", "layer_dims")
        if self.embedding_dim < 2:
            raise ConfigError("embedding_dim must be >= 2", "layer_dims")
        if self.n_classes < 1:
            raise ConfigError("n_classes must be >= 1", "n_classes")
        if not 0 <= self.init_seed < 2**64:
            raise ConfigError("init_seed must be an unsigned 64-bit integer", "init_seed")
        return self


@dataclass(eq=False)
class EmbeddingNet:
    config: ModelConfig
    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)
    head_weight: Tensor = None
    head_bias: Tensor = None

    def parameters(self):
        """All trainable tensors in checkpoint order: layers first, then the head."""
        params = []
        for w, b in zip(self.weights, self.biases):
            params += [w, b]
        return params + [self.head_weight, self.head_bias]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def n_parameters(self):
        return sum(p.size for p in self.parameters())


def _glorot(rng, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True)


def init(config):
    config.validate()
    rng = np.random.default_rng(config.init_seed)
    net = EmbeddingNet(config)
    dims = config.layer_dims
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        net.weights.append(_glorot(rng, fan_in, fan_out))
        net.biases.append(Tensor(np.zeros(fan_out), requires_grad=True))
    net.head_weight = _glorot(rng, config.embedding_dim, config.n_classes)
    net.head_bias = Tensor(np.zeros(config.n_classes), requires_grad=True)
    return net


def clone(net):
    """Independent copy of ``net`` with fresh leaves and no gradients."""
    out = EmbeddingNet(net.config)
    out.weights = [Tensor(w.data, requires_grad=True) for w in net.weights]
    out.biases = [Tensor(b.data, requires_grad=True) for b in net.biases]
    out.head_weight = Tensor(net.head_weight.data, requires_grad=True)
    out.head_bias = Tensor(net.head_bias.data, requires_grad=True)
    return out


def embed_frames(net, frames):
    """Per-frame embeddings for an ``(n, frame_dim)`` batch of frames."""
    x = ad.as_tensor(frames)
    if x.ndim != 2 or x.shape[1] != net.config.frame_dim:
        raise ShapeError(f"expected frames of shape (n, {net.config.frame_dim}), got {x.shape}")
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        x = x @ w + b
        if i < last:
            x = ad.relu(x)
    if net.config.normalize:
        x = x / ad.sqrt(ad.tsum(x * x, axis=1, keepdims=True) + 1e-12)
    return x


def video_representation(frame_embeddings):
    """Temporal average pooling of ``(T, d)`` frame embeddings into a ``(d,)`` vector."""
    e = ad.as_tensor(frame_embeddings)
    if e.ndim != 2 or e.shape[0] < 1:
        raise ShapeError(f"expected (T, d) frame embeddings, got {e.shape}")
    return ad.mean(e, axis=0)


def encode_clips(net, frames):
    """Clip representations for a ``(B, n_frames, frame_dim)`` array: embed, then average over frames."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 3:
        raise ShapeError(f"expected (B, n_frames, frame_dim), got {frames.shape}")
    B, n, F = frames.shape
    emb = embed_frames(net, frames.reshape(B * n, F))
    return ad.mean(ad.reshape(emb, (B, n, net.config.embedding_dim)), axis=1)


def logits(net, clip_embedding):
    """Classifier scores (no softmax) for a ``(d,)`` or ``(B, d)`` embedding."""
    e = ad.as_tensor(clip_embedding)
    d = net.config.embedding_dim
    if e.shape[-1:] != (d,) or e.ndim > 2:
        raise ShapeError(f"expected embedding dim {d}, got shape {e.shape}")
    if e.ndim == 1:
        return ad.reshape(ad.reshape(e, (1, d)) @ net.head_weight + net.head_bias, (net.config.n_classes,))
    return e @ net.head_weight + net.head_bias


# -- checkpoints --------------------------------------------------------------------

def to_bytes(net):
    c = net.config
    parts = [MAGIC, bytes([VERSION]),
             struct.pack("<I", len(c.layer_dims)),
             struct.pack(f"<{len(c.layer_dims)}I", *c.layer_dims),
             struct.pack("<IQB", c.n_classes, c.init_seed, int(c.normalize))]
    parts += [np.ascontiguousarray(p.data, dtype="<f8").tobytes() for p in net.parameters()]
    return b"".join(parts)


def from_bytes(raw):
    if raw[:len(MAGIC)] != MAGIC:
        raise FormatError("missing MDKTCKPT magic", 0)
    pos = len(MAGIC)
    if len(raw) <= pos:
        raise FormatError("truncated before version byte", pos)
    if raw[pos] != VERSION:
        raise UnsupportedVersionError(f"unsupported checkpoint version {raw[pos]}", pos)
    pos += 1
    try:
        (n_dims,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        if not 3 <= n_dims <= 64:
            raise FormatError(f"implausible layer count {n_dims}", pos - 4)
        dims = struct.unpack_from(f"<{n_dims}I", raw, pos)
        pos += 4 * n_dims
        n_classes, seed, normalize = struct.unpack_from("<IQB", raw, pos)
        pos += struct.calcsize("<IQB")
    except struct.error:
        raise FormatError("truncated header", len(raw)) from None
    try:
        config = ModelConfig(dims, n_classes, seed, bool(normalize)).validate()
    except ConfigError as exc:
        raise FormatError(f"invalid header: {exc}", len(MAGIC) + 1) from None
    net = init(config)
    for p in net.parameters():
        nbytes = p.size * 8
        if len(raw) < pos + nbytes:
            raise FormatError("truncated parameter block", len(raw))
        p.data = np.frombuffer(raw, dtype="<f8", count=p.size, offset=pos).astype(np.float64).reshape(p.shape)
        pos += nbytes
    if pos != len(raw):
        raise FormatError("trailing bytes after parameters", pos)
    return net


def save_checkpoint(net, path):
    with open(path, "wb") as fh:
        fh.write(to_bytes(net))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return from_bytes(fh.read())


def parameters_equal(a, b):
    return a.config == b.config and all(
        np.array_equal(p.data, q.data) for p, q in zip(a.parameters(), b.parameters()))


__all__ = ["ModelConfig", "EmbeddingNet", "init", "clone", "embed_frames", "video_representation",
           "encode_clips", "logits", "save_checkpoint", "load_checkpoint", "to_bytes", "from_bytes",
           "parameters_equal"]
