"""
Toy Diffusion Transformer noise predictor.

The network patchifies an image, adds fixed 2-D sin-cos position embeddings,
and runs `depth` transformer layers. Each layer contributes two cacheable
blocks without their residual connection: an Attention block (even index)
and an FFN (odd index), so N = 2 · depth. Conditioning (sinusoidal timestep
embedding through a 2-layer MLP, plus a class embedding that includes a null
class for classifier-free guidance) is added to every block input after its
layer norm. The final projection is zero-initialised.
"""

import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from dit_cache.common.autodiff import (
    Tensor, add, as_tensor, expand, gelu, index, layernorm, linear, matmul, mul,
    parameter, reshape, scale, softmax, sub, take_rows, transpose,
)
from dit_cache.common.errors import DimensionError
from dit_cache.debug_system import get_debug_logger, LogCategory
from dit_cache.tools.Feature_Cache.Core import Cache, CacheMode

# Module-level debug logger
debug_logger = get_debug_logger()

MLP_RATIO = 4


#######################################################
@dataclass
class DiTConfig:
    """Shape of the toy DiT; N = 2 · depth cacheable blocks"""
    image_size: int = 8
    channels: int = 1
    patch_size: int = 2
    d_model: int = 64
    n_heads: int = 4
    depth: int = 4
    n_classes: int = 4
    seed: int = 0

    @property
    def n_blocks(self) -> int:
        return 2 * self.depth

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def n_tokens(self) -> int:
        return self.grid * self.grid

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels

    @property
    def null_class(self) -> int:
        return self.n_classes

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        return (self.channels, self.image_size, self.image_size)

    def violations(self) -> List[str]:
        problems = []
        for name in ("image_size", "channels", "patch_size", "d_model", "n_heads", "depth", "n_classes"):
            if getattr(self, name) < 1:
                problems.append(f"model.{name} must be ≥ 1")
        if self.patch_size >= 1 and self.image_size % self.patch_size:
            problems.append(f"model.image_size ({self.image_size}) must be divisible by "
                            f"model.patch_size ({self.patch_size})")
        if self.n_heads >= 1 and self.d_model % self.n_heads:
            problems.append(f"model.d_model ({self.d_model}) must be divisible by "
                            f"model.n_heads ({self.n_heads})")
        if self.d_model % 2:
            problems.append("model.d_model must be even (sinusoidal embeddings)")
        return problems

    def to_dict(self) -> Dict[str, int]:
        return asdict(self)


@dataclass(frozen=True)
class Condition:
    """Timestep(s) (training-step index in [1, T_train]) and class label(s)"""
    timestep: Union[int, Tuple[int, ...]]
    class_id: Union[int, Tuple[int, ...]]

    def timesteps(self, batch: int) -> np.ndarray:
        steps = np.atleast_1d(np.asarray(self.timestep, dtype=np.float64))
        if steps.size == 1:
            return np.full(batch, float(steps[0]))
        if steps.size != batch:
            raise DimensionError("one timestep per batch element is required", steps.shape, (batch,))
        return steps

    def class_ids(self, batch: int) -> np.ndarray:
        ids = np.atleast_1d(np.asarray(self.class_id, dtype=np.int64))
        if ids.size == 1:
            return np.full(batch, int(ids[0]), dtype=np.int64)
        if ids.size != batch:
            raise DimensionError("one class id per batch element is required", ids.shape, (batch,))
        return ids

    def with_class(self, class_id) -> "Condition":
        return Condition(self.timestep, class_id)


def timestep_embedding(timestep, dim: int, max_period: float = 10000.0) -> np.ndarray:
    """Sinusoidal embedding, cos half then sin half; shape (dim,) for a scalar, (B, dim) for a vector"""
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half, dtype=np.float64) / half)
    args = np.multiply.outer(np.asarray(timestep, dtype=np.float64), freqs)
    return np.concatenate([np.cos(args), np.sin(args)], axis=-1)


def sincos_pos_embed_2d(dim: int, grid: int) -> np.ndarray:
    """Fixed 2-D sin-cos position embedding, shape (grid², dim)"""
    ys, xs = np.meshgrid(np.arange(grid, dtype=np.float64), np.arange(grid, dtype=np.float64), indexing="ij")
    half = dim // 2

    def encode(pos):
        quarter = half // 2
        omega = 1.0 / 10000 ** (np.arange(quarter, dtype=np.float64) / max(quarter, 1))
        out = pos.reshape(-1)[:, None] * omega[None, :]
        emb = np.concatenate([np.sin(out), np.cos(out)], axis=1)
        if emb.shape[1] < half:
            emb = np.pad(emb, ((0, 0), (0, half - emb.shape[1])))
        return emb

    return np.concatenate([encode(ys), encode(xs)], axis=1)


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


#######################################################
class DiTModel:
    """ε_θ(x_t, t, cond) with an exposed list of N cacheable blocks"""

    def __init__(self, config: DiTConfig, params: Dict[str, Tensor]):
        problems = config.violations()
        if problems:
            raise ValueError("; ".join(problems))
        self.config = config
        self.params = params
        self.pos_embed = sincos_pos_embed_2d(config.d_model, config.grid)
        missing = [name for name in self.parameter_shapes(config) if name not in params]
        if missing:
            raise KeyError(f"missing model parameters: {missing[:5]}")

    @staticmethod
    def parameter_shapes(config: DiTConfig) -> Dict[str, Tuple[int, ...]]:
        d, p = config.d_model, config.patch_dim
        shapes = {
            "patch_embed.w": (p, d), "patch_embed.b": (d,),
            "t_mlp.w1": (d, d), "t_mlp.b1": (d,),
            "t_mlp.w2": (d, d), "t_mlp.b2": (d,),
            "class_embed": (config.n_classes + 1, d),
        }
        for i in range(config.n_blocks):
            prefix = f"blocks.{i}"
            shapes[f"{prefix}.ln.g"] = (d,)
            shapes[f"{prefix}.ln.b"] = (d,)
            if i % 2 == 0:
                shapes[f"{prefix}.qkv.w"] = (d, 3 * d)
                shapes[f"{prefix}.qkv.b"] = (3 * d,)
                shapes[f"{prefix}.proj.w"] = (d, d)
                shapes[f"{prefix}.proj.b"] = (d,)
            else:
                shapes[f"{prefix}.fc1.w"] = (d, MLP_RATIO * d)
                shapes[f"{prefix}.fc1.b"] = (MLP_RATIO * d,)
                shapes[f"{prefix}.fc2.w"] = (MLP_RATIO * d, d)
                shapes[f"{prefix}.fc2.b"] = (d,)
        shapes["final.ln.g"] = (d,)
        shapes["final.ln.b"] = (d,)
        shapes["final.w"] = (d, p)
        shapes["final.b"] = (p,)
        return shapes

    @classmethod
    def initialize(cls, config: DiTConfig, zero_final: bool = True) -> "DiTModel":
        """Xavier-uniform weights, zero biases, unit norms; final projection zero unless asked otherwise"""
        problems = config.violations()
        if problems:
            raise ValueError("; ".join(problems))
        rng = np.random.default_rng(config.seed)
        params = {}
        for name, shape in cls.parameter_shapes(config).items():
            if name.endswith(".g"):
                value = np.ones(shape)
            elif name == "class_embed":
                value = rng.normal(0.0, 0.02, size=shape)
            elif len(shape) == 2:
                value = _xavier(rng, *shape)
            else:
                value = np.zeros(shape)
            params[name] = parameter(value)
        if zero_final:
            params["final.w"].data[...] = 0.0
        debug_logger.debug(LogCategory.MODEL, "Initialized DiT", {
            **config.to_dict(), "n_parameters": sum(p.size for p in params.values())})
        return cls(config, params)

    @property
    def n_blocks(self) -> int:
        return self.config.n_blocks

    def parameters(self) -> List[Tensor]:
        return [self.params[name] for name in sorted(self.params)]

    def requires_grad_(self, flag: bool) -> "DiTModel":
        for p in self.params.values():
            p.requires_grad = flag
            p.zero_grad()
        return self

    def copy(self) -> "DiTModel":
        params = {name: parameter(p.data.copy()) for name, p in self.params.items()}
        for name, p in self.params.items():
            params[name].requires_grad = p.requires_grad
        return DiTModel(DiTConfig(**self.config.to_dict()), params)

    #######################################################
    # Pieces, public so reference computations can be stepped by hand

    def patchify(self, x: Tensor) -> Tensor:
        c = self.config
        b = x.shape[0]
        g, p = c.grid, c.patch_size
        x = reshape(x, (b, c.channels, g, p, g, p))
        x = transpose(x, (0, 2, 4, 3, 5, 1))
        return reshape(x, (b, c.n_tokens, c.patch_dim))

    def unpatchify(self, tokens: Tensor) -> Tensor:
        c = self.config
        b = tokens.shape[0]
        g, p = c.grid, c.patch_size
        x = reshape(tokens, (b, g, g, p, p, c.channels))
        x = transpose(x, (0, 5, 1, 3, 2, 4))
        return reshape(x, (b, c.channels, c.image_size, c.image_size))

    def condition_vector(self, cond: Condition, batch: int) -> Tensor:
        """Timestep MLP output plus class embedding, shape (batch, d_model)"""
        c, params = self.config, self.params
        ids = cond.class_ids(batch)
        if ids.min() < 0 or ids.max() > c.null_class:
            raise ValueError(f"unknown class id in {ids.tolist()} (valid: 0..{c.null_class})")
        temb = Tensor(timestep_embedding(cond.timesteps(batch), c.d_model))
        t = linear(gelu(linear(temb, params["t_mlp.w1"], params["t_mlp.b1"])),
                   params["t_mlp.w2"], params["t_mlp.b2"])
        return add(t, take_rows(params["class_embed"], ids))

    def embed(self, x: Tensor, cond: Condition) -> Tuple[Tensor, Tensor]:
        """Token features h_0 and the condition vector cs"""
        x = as_tensor(x)
        if x.ndim != 4 or tuple(x.shape[1:]) != self.config.image_shape:
            raise DimensionError("input does not match the configured image shape",
                                 x.shape, ("B",) + self.config.image_shape)
        b = x.shape[0]
        params = self.params
        h = linear(self.patchify(x), params["patch_embed.w"], params["patch_embed.b"])
        h = add(h, Tensor(np.broadcast_to(self.pos_embed, h.shape)))
        return h, self.condition_vector(cond, b)

    def block(self, i: int, h: Tensor, cs: Tensor) -> Tensor:
        """b_i(h, cs): Attention for even i, FFN for odd i, no residual"""
        if not 0 <= i < self.n_blocks:
            raise IndexError(f"block index {i} outside [0, {self.n_blocks})")
        params, prefix = self.params, f"blocks.{i}"
        b, n, d = h.shape
        u = layernorm(h, params[f"{prefix}.ln.g"], params[f"{prefix}.ln.b"])
        u = add(u, expand(reshape(cs, (b, 1, d)), (b, n, d)))
        if i % 2 == 0:
            return self._attention(prefix, u)
        return self._ffn(prefix, u)

    def _attention(self, prefix: str, u: Tensor) -> Tensor:
        params = self.params
        b, n, d = u.shape
        heads = self.config.n_heads
        dh = d // heads
        qkv = linear(u, params[f"{prefix}.qkv.w"], params[f"{prefix}.qkv.b"])

        def split(k):
            part = index(qkv, (Ellipsis, slice(k * d, (k + 1) * d)))
            return transpose(reshape(part, (b, n, heads, dh)), (0, 2, 1, 3))

        q, k, v = split(0), split(1), split(2)
        scores = scale(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
        out = matmul(softmax(scores), v)
        out = reshape(transpose(out, (0, 2, 1, 3)), (b, n, d))
        return linear(out, params[f"{prefix}.proj.w"], params[f"{prefix}.proj.b"])

    def _ffn(self, prefix: str, u: Tensor) -> Tensor:
        params = self.params
        hidden = gelu(linear(u, params[f"{prefix}.fc1.w"], params[f"{prefix}.fc1.b"]))
        return linear(hidden, params[f"{prefix}.fc2.w"], params[f"{prefix}.fc2.b"])

    def head(self, h: Tensor) -> Tensor:
        params = self.params
        out = layernorm(h, params["final.ln.g"], params["final.ln.b"])
        out = linear(out, params["final.w"], params["final.b"])
        return self.unpatchify(out)


#######################################################
# Forward passes

def forward_plain(model: DiTModel, x: Tensor, cond: Condition) -> Tensor:
    """Predicted noise with every block computed fresh"""
    h, cs = model.embed(x, cond)
    for i in range(model.n_blocks):
        h = add(h, model.block(i, h, cs))
    return model.head(h)


def forward_cached(model: DiTModel, x: Tensor, cond: Condition, router_row: Sequence,
                   tau: float, cache: Cache, mode: CacheMode = CacheMode.HARD) -> Tensor:
    """
    Predicted noise with block outputs taken from, and written back to, the cache.

    Args:
        model: the noise predictor
        x: noisy input x_t, shape (B, C, H, W)
        cond: timestep and class condition
        router_row: N gate values for this step; floats, or scalar tensors in soft mode
        tau: threshold; a gate above it computes the block and refreshes its slot
        cache: single-owner cache for this sampling run / guidance branch
        mode: HARD applies o = b or c; SOFT blends o = r·b + (1 - r)·c

    Returns:
        Predicted noise with the same shape as x
    """
    mode = CacheMode(mode)
    n = model.n_blocks
    if len(router_row) != n or len(cache) != n:
        raise DimensionError("router row and cache must both have N entries",
                             (len(router_row),), (len(cache),), (n,))

    gates = [g if isinstance(g, Tensor) else float(g) for g in router_row]
    values = [g.item() if isinstance(g, Tensor) else g for g in gates]
    if any(not 0.0 < v <= 1.0 for v in values):
        raise ValueError(f"router row values must lie in (0, 1], got {values}")

    h, cs = model.embed(x, cond)
    batch = h.shape[0]
    for i in range(n):
        r, value = gates[i], values[i]
        compute = value > tau
        if mode is CacheMode.HARD:
            if compute:
                o = model.block(i, h, cs)
                cache.write(i, o)
                cache.computed += 1
            else:
                o = cache.read(i, batch)
                cache.reused += 1
        else:
            fresh = model.block(i, h, cs)
            cache.computed += 1
            if not isinstance(r, Tensor) and value == 1.0:
                o = fresh
            else:
                cached = cache.read(i, batch)
                cache.reused += 1
                o = add(mul(r, fresh), mul(sub(1.0, r), cached))
            if compute:
                cache.write(i, fresh)
        h = add(h, o)
    return model.head(h)
