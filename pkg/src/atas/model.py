"""Miniature pre-norm vision transformer: one class token plus n patch tokens.

The same architecture serves as frozen teacher and trainable student. Both
the class token and the patch tokens go through the final layer norm and the
output projection, so they share one embedding space.
"""

from __future__ import annotations

import functools
import hashlib
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import checkpoint
from . import numerics as nx
from .errors import CheckpointError, ConfigError, ShapeError
from .numerics import Tensor


@dataclass(frozen=True)
class ModelConfig:
    image_side: int = 32
    patch_size: int = 8
    embed_dim: int = 64
    num_layers: int = 4
    num_heads: int = 4
    mlp_ratio: float = 4.0
    channels: int = 3

    def __post_init__(self):
        if self.patch_size < 1 or self.image_side < 1:
            raise ConfigError("image_side and patch_size must be positive")
        if self.image_side % self.patch_size:
            raise ConfigError(f"image_side {self.image_side} is not divisible by patch_size {self.patch_size}")
        if self.embed_dim % self.num_heads:
            raise ConfigError(f"embed_dim {self.embed_dim} is not divisible by num_heads {self.num_heads}")
        if self.num_layers < 1 or self.mlp_ratio <= 0:
            raise ConfigError("num_layers must be >= 1 and mlp_ratio > 0")

    @property
    def grid_side(self) -> int:
        return self.image_side // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid_side**2

    @property
    def patch_dim(self) -> int:
        return self.channels * self.patch_size**2

    @property
    def mlp_dim(self) -> int:
        return int(round(self.embed_dim * self.mlp_ratio))

    def to_dict(self):
        return asdict(self)


@dataclass
class EncoderOutput:
    """``cls`` is (d,) or (B, d); ``patches`` is (n, d) or (B, n, d)."""

    cls: Tensor
    patches: Tensor
    source_role: str = "student"


class ModelParams:
    """Named parameter tensors in a fixed order."""

    def __init__(self, config: ModelConfig, tensors: dict, frozen: bool = False):
        self.config = config
        self.tensors = dict(tensors)
        self.frozen = frozen

    def __getitem__(self, name) -> Tensor:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def __len__(self):
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def names(self):
        return list(self.tensors)

    def arrays(self):
        return {k: t.data for k, t in self.tensors.items()}

    def copy(self, trainable: bool = True) -> ModelParams:
        return ModelParams(
            self.config,
            {k: Tensor(t.data, requires_grad=trainable) for k, t in self.tensors.items()},
            frozen=not trainable and self.frozen,
        )

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def num_parameters(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def digest(self) -> str:
        h = hashlib.sha256()
        for name, t in self.tensors.items():
            h.update(name.encode())
            h.update(np.asarray(t.shape, dtype="<u4").tobytes())
            h.update(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
        return h.hexdigest()

    def equal(self, other: ModelParams) -> bool:
        return self.names() == other.names() and all(
            np.array_equal(self[k].data, other[k].data) for k in self.tensors
        )


def _trunc_normal(rng, shape, std=0.02):
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out


def param_shapes(config: ModelConfig):
    d, n = config.embed_dim, config.num_patches
    shapes = {
        "patch_embed.weight": (config.patch_dim, d),
        "patch_embed.bias": (d,),
        "cls_token": (d,),
        "pos_embed": (n + 1, d),
    }
    for layer in range(config.num_layers):
        p = f"blocks.{layer}."
        shapes.update(
            {
                p + "ln1.weight": (d,),
                p + "ln1.bias": (d,),
                p + "attn.q.weight": (d, d),
                p + "attn.q.bias": (d,),
                p + "attn.k.weight": (d, d),
                p + "attn.k.bias": (d,),
                p + "attn.v.weight": (d, d),
                p + "attn.v.bias": (d,),
                p + "attn.proj.weight": (d, d),
                p + "attn.proj.bias": (d,),
                p + "ln2.weight": (d,),
                p + "ln2.bias": (d,),
                p + "mlp.fc1.weight": (d, config.mlp_dim),
                p + "mlp.fc1.bias": (config.mlp_dim,),
                p + "mlp.fc2.weight": (config.mlp_dim, d),
                p + "mlp.fc2.bias": (d,),
            }
        )
    shapes["ln_final.weight"] = (d,)
    shapes["ln_final.bias"] = (d,)
    shapes["proj.weight"] = (d, d)
    return shapes


def init_params(config: ModelConfig, seed: int = 0, trainable: bool = True) -> ModelParams:
    """Truncated-normal (std 0.02) weights, zero biases, unit layer-norm gains."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".bias"):
            value = np.zeros(shape)
        elif name.endswith(".weight") and name.split(".")[-2].startswith("ln"):
            value = np.ones(shape)
        else:
            value = _trunc_normal(rng, shape)
        tensors[name] = Tensor(value, requires_grad=trainable)
    return ModelParams(config, tensors)


def freeze(params: ModelParams) -> ModelParams:
    """Return a copy whose tensors never require grad."""
    frozen = ModelParams(params.config, {k: Tensor(t.data) for k, t in params.items()}, frozen=True)
    return frozen


# --- patches ------------------------------------------------------------------


def patchify_array(images: np.ndarray, patch_size: int) -> np.ndarray:
    """(B, C, H, W) -> (B, n, C*P*P), patches in row-major grid order."""
    b, c, h, w = images.shape
    if h % patch_size or w % patch_size:
        raise ConfigError(f"image size {h}x{w} is not divisible by patch size {patch_size}")
    gh, gw = h // patch_size, w // patch_size
    x = images.reshape(b, c, gh, patch_size, gw, patch_size)
    return np.ascontiguousarray(x.transpose(0, 2, 4, 1, 3, 5)).reshape(b, gh * gw, c * patch_size * patch_size)


def patchify(image, config: ModelConfig) -> Tensor:
    image = np.asarray(image.data if isinstance(image, Tensor) else image, dtype=np.float64)
    if image.shape != (config.channels, config.image_side, config.image_side):
        raise ShapeError(
            f"patchify: image shape {image.shape} does not match "
            f"{(config.channels, config.image_side, config.image_side)}"
        )
    return Tensor(patchify_array(image[None], config.patch_size)[0])


def unpatchify_array(patches: np.ndarray, channels: int, patch_size: int) -> np.ndarray:
    n = patches.shape[0]
    g = math.isqrt(n)
    x = patches.reshape(g, g, channels, patch_size, patch_size).transpose(2, 0, 3, 1, 4)
    return x.reshape(channels, g * patch_size, g * patch_size)


@functools.lru_cache(maxsize=None)
def _resize_1d(src: int, dst: int) -> np.ndarray:
    # half-pixel centres, edge clamped
    a = np.zeros((dst, src))
    for i in range(dst):
        pos = min(max((i + 0.5) * src / dst - 0.5, 0.0), src - 1.0)
        lo = int(math.floor(pos))
        hi = min(lo + 1, src - 1)
        frac = pos - lo
        a[i, lo] += 1.0 - frac
        a[i, hi] += frac
    return a


@functools.lru_cache(maxsize=None)
def bilinear_matrix(src_side: int, dst_side: int) -> np.ndarray:
    """Linear map taking a row-major src_side^2 grid to dst_side^2 by bilinear resampling."""
    a = _resize_1d(src_side, dst_side)
    m = np.kron(a, a)
    m.flags.writeable = False
    return m


def _linear(x, params, name, bias=True):
    y = x @ params[name + ".weight"]
    return y + params[name + ".bias"] if bias else y


def _heads(x, b, t, h, dh):
    return x.reshape(b, t, h, dh).transpose(0, 2, 1, 3)


def encode_batch(images, params: ModelParams, role: str = "student") -> EncoderOutput:
    """Encode (B, C, H, W) images. H = W must be a multiple of the patch size."""
    config = params.config
    images = np.asarray(images.data if isinstance(images, Tensor) else images, dtype=np.float64)
    if images.ndim != 4 or images.shape[1] != config.channels or images.shape[2] != images.shape[3]:
        raise ShapeError(f"encode: expected (B, {config.channels}, S, S) images, got {images.shape}")
    b = images.shape[0]
    d, h = config.embed_dim, config.num_heads
    dh = d // h
    tokens = Tensor(patchify_array(images, config.patch_size))
    n = tokens.shape[1]
    grid = math.isqrt(n)

    x = _linear(tokens, params, "patch_embed")
    cls = nx.broadcast_to(params["cls_token"].reshape(1, 1, d), (b, 1, d))
    x = nx.concat([cls, x], axis=1)
    pos = params["pos_embed"]
    if grid != config.grid_side:
        pos = nx.concat([pos[0:1], Tensor(bilinear_matrix(config.grid_side, grid)) @ pos[1:]], axis=0)
    x = x + pos
    t = n + 1
    attn_temp = math.sqrt(dh)

    for layer in range(config.num_layers):
        p = f"blocks.{layer}."
        y = nx.layer_norm(x, params[p + "ln1.weight"], params[p + "ln1.bias"])
        q = _heads(_linear(y, params, p + "attn.q"), b, t, h, dh)
        k = _heads(_linear(y, params, p + "attn.k"), b, t, h, dh)
        v = _heads(_linear(y, params, p + "attn.v"), b, t, h, dh)
        att = nx.softmax(q @ k.transpose(0, 1, 3, 2), temperature=attn_temp)
        y = (att @ v).transpose(0, 2, 1, 3).reshape(b, t, d)
        x = x + _linear(y, params, p + "attn.proj")
        y = nx.layer_norm(x, params[p + "ln2.weight"], params[p + "ln2.bias"])
        y = _linear(nx.gelu(_linear(y, params, p + "mlp.fc1")), params, p + "mlp.fc2")
        x = x + y

    x = nx.layer_norm(x, params["ln_final.weight"], params["ln_final.bias"])
    x = _linear(x, params, "proj", bias=False)
    return EncoderOutput(cls=x[:, 0], patches=x[:, 1:], source_role=role)


def encode(image, params: ModelParams, role: str = "student") -> EncoderOutput:
    """Encode one (C, H, W) image."""
    image = np.asarray(image.data if isinstance(image, Tensor) else image, dtype=np.float64)
    if image.ndim != 3:
        raise ShapeError(f"encode: expected a (C, H, W) image, got {image.shape}")
    out = encode_batch(image[None], params, role)
    return EncoderOutput(cls=out.cls[0], patches=out.patches[0], source_role=role)


def encode_arrays(images, params: ModelParams, batch: int = 64):
    """Gradient-free encoding; returns numpy (cls, patches)."""
    images = np.asarray(images, dtype=np.float64)
    cls, patches = [], []
    with nx.no_grad():
        for start in range(0, images.shape[0], batch):
            out = encode_batch(images[start : start + batch], params, role="eval")
            cls.append(out.cls.data)
            patches.append(out.patches.data)
    return np.concatenate(cls), np.concatenate(patches)


def model_config_entries(config: ModelConfig, prefix="model.") -> dict:
    return {prefix + k: v for k, v in config.to_dict().items()}


def model_config_from_entries(entries: dict, prefix="model.") -> ModelConfig:
    kwargs = {}
    for f in ModelConfig.__dataclass_fields__.values():
        key = prefix + f.name
        if key in entries:
            kwargs[f.name] = float(entries[key]) if f.type == "float" else int(entries[key])
    return ModelConfig(**kwargs)


def save_params(path, params: ModelParams, extra_config=None, extra_tensors=None) -> None:
    config = {"kind": "teacher" if params.frozen else "student"}
    config.update(model_config_entries(params.config))
    config.update(extra_config or {})
    tensors = {name: t.data for name, t in params.items()}
    tensors.update(extra_tensors or {})
    checkpoint.save(path, config, tensors)


def load_params(path, trainable=False):
    """Returns (params, config entries, all stored tensors)."""
    config, tensors = checkpoint.load(path)
    model_config = model_config_from_entries(config)
    names = list(param_shapes(model_config))
    missing = [n for n in names if n not in tensors]
    if missing:
        raise CheckpointError(f"checkpoint lacks parameters: {missing[:3]}")
    params = ModelParams(model_config, {n: Tensor(tensors[n], requires_grad=trainable) for n in names})
    params.frozen = not trainable and config.get("kind") == "teacher"
    return params, config, tensors
