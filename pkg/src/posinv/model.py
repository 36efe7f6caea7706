"""Decoder-only transformer runtime.

RMS-norm, rotary embeddings, grouped-query attention, gated FFN, greedy
decoding.  The KV cache stores keys BEFORE rotary rotation: the
re-assigning attention modes give the same key different positions for
different queries, so rotation happens lazily per attention row.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .kernels import ShapeError, matmul, rms_norm, swiglu
from .modes import AttentionMode, attention_forward
from .prompts import SequenceLayout
from .rope import apply_rope  # noqa: F401  (re-exported runtime op)

_DTYPES = {"F32": np.float32, "F64": np.float64}
_DTYPE_NAMES = {np.dtype(np.float32): "F32", np.dtype(np.float64): "F64"}


class WeightError(ValueError):
    """Weight container or config contents violate the schema."""


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int
    n_heads: int
    n_kv_heads: int
    d_model: int
    d_head: int
    d_ff: int
    vocab_size: int
    rope_theta: float = 10000.0
    norm_eps: float = 1e-5
    max_seq_len: int = 2048
    tie_embeddings: bool = False

    def __post_init__(self):
        if self.d_model != self.n_heads * self.d_head:
            raise WeightError(
                f"d_model {self.d_model} != n_heads {self.n_heads} * d_head {self.d_head}"
            )
        if self.n_heads % self.n_kv_heads != 0:
            raise WeightError(f"n_heads {self.n_heads} not divisible by n_kv_heads {self.n_kv_heads}")
        if self.d_head % 2 != 0:
            raise WeightError(f"d_head {self.d_head} must be even for rotary encoding")


def _tensor_schema(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, dh, dff = config.d_model, config.d_head, config.d_ff
    schema: dict[str, tuple[int, ...]] = {"embed.weight": (config.vocab_size, d)}
    for i in range(config.n_layers):
        p = f"layers.{i}."
        schema[p + "attn_norm.weight"] = (d,)
        schema[p + "q_proj.weight"] = (d, config.n_heads * dh)
        schema[p + "k_proj.weight"] = (d, config.n_kv_heads * dh)
        schema[p + "v_proj.weight"] = (d, config.n_kv_heads * dh)
        schema[p + "o_proj.weight"] = (config.n_heads * dh, d)
        schema[p + "ffn_norm.weight"] = (d,)
        schema[p + "gate_proj.weight"] = (d, dff)
        schema[p + "up_proj.weight"] = (d, dff)
        schema[p + "down_proj.weight"] = (dff, d)
    schema["final_norm.weight"] = (d,)
    if not config.tie_embeddings:
        schema["lm_head.weight"] = (d, config.vocab_size)
    return schema


@dataclass
class Weights:
    tensors: dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def validate(self, config: ModelConfig) -> "Weights":
        schema = _tensor_schema(config)
        for name, shape in schema.items():
            if name not in self.tensors:
                raise WeightError(f"missing tensor {name!r}")
            got = self.tensors[name].shape
            if tuple(got) != shape:
                raise WeightError(f"tensor {name!r} has shape {tuple(got)}, expected {shape}")
            if not np.isfinite(self.tensors[name]).all():
                raise WeightError(f"tensor {name!r} contains non-finite values")
        return self


@dataclass
class Model:
    config: ModelConfig
    weights: Weights

    def head_matrix(self) -> np.ndarray:
        if self.config.tie_embeddings:
            return self.weights["embed.weight"].T
        return self.weights["lm_head.weight"]


# ---------------------------------------------------------------------------
# Weight container: 8-byte little-endian header length, UTF-8 JSON header
# mapping tensor names to {dtype, shape, data_offsets}, then a contiguous
# little-endian payload.


def save_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    header: dict[str, dict] = {}
    offset = 0
    payload = []
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        if arr.dtype not in _DTYPE_NAMES:
            raise WeightError(f"tensor {name!r}: unsupported dtype {arr.dtype}")
        raw = arr.astype(arr.dtype.newbyteorder("<")).tobytes()
        header[name] = {
            "dtype": _DTYPE_NAMES[arr.dtype],
            "shape": list(arr.shape),
            "data_offsets": [offset, offset + len(raw)],
        }
        payload.append(raw)
        offset += len(raw)
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for raw in payload:
            f.write(raw)


def load_tensors(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 8:
        raise WeightError(f"{path}: truncated container")
    (header_len,) = struct.unpack("<Q", data[:8])
    try:
        header = json.loads(data[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WeightError(f"{path}: malformed header: {exc}") from exc
    payload = data[8 + header_len :]
    tensors = {}
    for name, meta in header.items():
        if meta["dtype"] not in _DTYPES:
            raise WeightError(f"tensor {name!r}: unsupported dtype {meta['dtype']}")
        dt = np.dtype(_DTYPES[meta["dtype"]]).newbyteorder("<")
        s, e = meta["data_offsets"]
        arr = np.frombuffer(payload[s:e], dtype=dt).astype(_DTYPES[meta["dtype"]])
        expected = int(np.prod(meta["shape"], dtype=np.int64)) if meta["shape"] else 1
        if arr.size != expected:
            raise WeightError(f"tensor {name!r}: payload size {arr.size} != shape {meta['shape']}")
        tensors[name] = arr.reshape(meta["shape"])
    return tensors


def save_config(path, config: ModelConfig) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for key, value in vars(config).items():
            f.write(f"{key}={value}\n")


def load_config(path) -> ModelConfig:
    fields = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise WeightError(f"{path}: bad config line {line!r}")
            key, value = line.split("=", 1)
            fields[key.strip()] = value.strip()
    kwargs = {}
    for key, value in fields.items():
        if key in ("rope_theta", "norm_eps"):
            kwargs[key] = float(value)
        elif key == "tie_embeddings":
            kwargs[key] = value.lower() in ("true", "1", "yes")
        else:
            kwargs[key] = int(value)
    try:
        return ModelConfig(**kwargs)
    except TypeError as exc:
        raise WeightError(f"{path}: {exc}") from exc


def save_weights(weights_path, config_path, model: Model) -> None:
    save_config(config_path, model.config)
    save_tensors(weights_path, model.weights.tensors)


def load_weights(weights_path, config_path) -> tuple[ModelConfig, Weights]:
    config = load_config(config_path)
    weights = Weights(load_tensors(weights_path)).validate(config)
    return config, weights


def init_random(config: ModelConfig, seed: int) -> Weights:
    """Seeded normal(0, 0.02) projections, unit norm gains.  Tensors are
    drawn in schema order so equal seeds give bitwise-equal weights."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in _tensor_schema(config).items():
        if name.endswith("norm.weight"):
            tensors[name] = np.ones(shape, dtype=np.float32)
        else:
            tensors[name] = rng.normal(0.0, 0.02, size=shape).astype(np.float32)
    return Weights(tensors).validate(config)


@dataclass
class GenerationParams:
    max_new_tokens: int
    mode: AttentionMode
    eos_token: int | None = None
    canonical: bool = True


@dataclass
class KVCache:
    """Per-layer un-rotated keys and values for one generation stream."""

    layout: SequenceLayout
    k_raw: list[np.ndarray] = field(default_factory=list)  # per layer [t, n_kv, d_head]
    v: list[np.ndarray] = field(default_factory=list)

    @property
    def n_cached(self) -> int:
        return 0 if not self.k_raw else self.k_raw[0].shape[0]


def _layer_forward(model: Model, x: np.ndarray, layer: int, cache: KVCache,
                   mode: AttentionMode, q_indices: list[int] | None, canonical: bool,
                   append: bool) -> np.ndarray:
    cfg = model.config
    w = model.weights
    p = f"layers.{layer}."
    h = rms_norm(x, w[p + "attn_norm.weight"], cfg.norm_eps)
    q = matmul(h, w[p + "q_proj.weight"]).reshape(-1, cfg.n_heads, cfg.d_head)
    k = matmul(h, w[p + "k_proj.weight"]).reshape(-1, cfg.n_kv_heads, cfg.d_head)
    v = matmul(h, w[p + "v_proj.weight"]).reshape(-1, cfg.n_kv_heads, cfg.d_head)
    if append:
        if len(cache.k_raw) <= layer:
            cache.k_raw.append(k)
            cache.v.append(v)
        else:
            cache.k_raw[layer] = np.concatenate([cache.k_raw[layer], k], axis=0)
            cache.v[layer] = np.concatenate([cache.v[layer], v], axis=0)
    attn = attention_forward(
        mode, q, cache.k_raw[layer], cache.v[layer], cache.layout,
        q_indices=q_indices, rope_theta=cfg.rope_theta, canonical=canonical,
    )
    x = x + matmul(attn.reshape(attn.shape[0], -1), w[p + "o_proj.weight"])
    h2 = rms_norm(x, w[p + "ffn_norm.weight"], cfg.norm_eps)
    gate = matmul(h2, w[p + "gate_proj.weight"])
    up = matmul(h2, w[p + "up_proj.weight"])
    x = x + matmul(swiglu(gate, up), w[p + "down_proj.weight"])
    return x


def _logits(model: Model, x_last: np.ndarray) -> np.ndarray:
    h = rms_norm(x_last, model.weights["final_norm.weight"], model.config.norm_eps)
    return matmul(h, model.head_matrix())[0]


def prefill(
    model: Model,
    tokens: list[int],
    layout: SequenceLayout,
    mode: AttentionMode,
    canonical: bool = True,
) -> tuple[KVCache, np.ndarray]:
    """Run the whole prompt; returns the filled cache and the logits of
    the last prompt token."""
    cfg = model.config
    if len(tokens) > cfg.max_seq_len:
        raise ShapeError(f"prompt length {len(tokens)} exceeds max_seq_len {cfg.max_seq_len}")
    if len(tokens) != layout.n:
        raise ShapeError(f"token count {len(tokens)} != layout.n {layout.n}")
    cache = KVCache(layout=layout)
    x = model.weights["embed.weight"][np.asarray(tokens, dtype=np.int64)]
    for layer in range(cfg.n_layers):
        x = _layer_forward(model, x, layer, cache, mode, None, canonical, append=True)
    return cache, _logits(model, x[-1:])


def decode_step(
    model: Model,
    cache: KVCache,
    token: int,
    mode: AttentionMode,
    canonical: bool = True,
) -> np.ndarray:
    """Append one token to the cache and return next-token logits."""
    cfg = model.config
    t = cache.n_cached
    if t == 0:
        raise ShapeError("decode_step: cache is empty; run prefill first")
    if t >= cfg.max_seq_len:
        raise ShapeError(f"decode_step: cache full at max_seq_len {cfg.max_seq_len}")
    x = model.weights["embed.weight"][np.asarray([token], dtype=np.int64)]
    for layer in range(cfg.n_layers):
        x = _layer_forward(model, x, layer, cache, mode, [t], canonical, append=True)
    return _logits(model, x)


def greedy_pick(logits: np.ndarray) -> int:
    """Argmax with ties broken toward the lowest token id."""
    return int(np.argmax(logits))


def generate(
    model: Model,
    tokens: list[int],
    layout: SequenceLayout,
    params: GenerationParams,
) -> list[int]:
    cache, logits = prefill(model, tokens, layout, params.mode, params.canonical)
    out: list[int] = []
    for _ in range(params.max_new_tokens):
        tok = greedy_pick(logits)
        out.append(tok)
        if params.eos_token is not None and tok == params.eos_token:
            break
        if len(out) == params.max_new_tokens:
            break
        logits = decode_step(model, cache, tok, params.mode, params.canonical)
    return out


def continuation_logprob(
    model: Model,
    tokens: list[int],
    layout: SequenceLayout,
    mode: AttentionMode,
    continuation: list[int],
    canonical: bool = True,
) -> float:
    """Teacher-forced total log-probability of a continuation."""
    cache, logits = prefill(model, tokens, layout, mode, canonical)
    total = 0.0
    for i, tok in enumerate(continuation):
        z = logits.astype(np.float64)
        z = z - z.max()
        total += float(z[tok] - np.log(np.exp(z).sum()))
        if i + 1 < len(continuation):
            logits = decode_step(model, cache, tok, mode, canonical)
    return total
