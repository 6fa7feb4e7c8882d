"""
Forward-only numpy reference of the colour/geometry fusion block.

The block fuses an rgb feature sequence ``F_I`` (H·W tokens) with a geometry
sequence ``F_p`` (N tokens):

1. each modality is max-pooled into one global query that attends over the other
   modality (multi-head cross attention), and the resulting global vector is added
   to every token of the attended-from sequence;
2. both sequences are concatenated, rgb block first, into an L = H·W + N sequence;
3. a positional embedding is added and pre-norm transformer layers run over it;
4. the result is split back into its rgb and geometry blocks in the original order.

Row-vector convention throughout: a projection is ``x @ W``. This module is a
readable math reference sized for unit tests, not a training or inference path.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Tuple

import numpy as np
from numpy.typing import ArrayLike
from scipy.special import erf

from .errors import InvalidInput, ShapeError

MAX_CHANNELS = 64
MAX_LENGTH = 1024
LAYER_NORM_EPS = 1e-12
MLP_EXPANSION = 4
SOFTMAX_TOLERANCE = 1e-6
QUERY_SOURCES = ("rgb", "depth", "both")


class Modality(str, Enum):
    RGB = "rgb"
    GEOMETRY = "geometry"
    FUSED = "fused"


@dataclass(frozen=True, eq=False)
class FeatureSequence:
    """
    An L × C sequence of feature tokens.

    Parameters
    ----------
    data : array_like
        (L, C) finite features.
    modality : Modality or str
        ``"rgb"``, ``"geometry"`` or ``"fused"``.
    block_lengths : tuple of int, optional
        ``(rgb_length, geo_length)`` for a fused sequence; needed by
        :func:`split_fused`.
    """

    data: np.ndarray
    modality: Modality
    block_lengths: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ShapeError(f"feature sequence must be 2-D (L, C), got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise InvalidInput("feature sequence has non-finite entries")
        length, channels = data.shape
        if channels == 0 or channels > MAX_CHANNELS:
            raise ShapeError(f"channel count must lie in [1, {MAX_CHANNELS}], got {channels}")
        if length > MAX_LENGTH:
            raise ShapeError(f"sequence length {length} exceeds {MAX_LENGTH}")

        modality = Modality(self.modality)
        block_lengths = self.block_lengths
        if block_lengths is not None:
            block_lengths = tuple(int(n) for n in block_lengths)
            if len(block_lengths) != 2 or min(block_lengths) < 0 or sum(block_lengths) != length:
                raise ShapeError(
                    f"block lengths {block_lengths} do not add up to the sequence length {length}"
                )
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "modality", modality)
        object.__setattr__(self, "block_lengths", block_lengths)

    @classmethod
    def from_feature_map(cls, feature_map: ArrayLike) -> "FeatureSequence":
        """Flatten an (H, W, C) rgb feature map row by row into H·W tokens."""
        values = np.asarray(feature_map, dtype=np.float64)
        if values.ndim != 3:
            raise ShapeError(f"feature map must be (H, W, C), got shape {values.shape}")
        return cls(values.reshape(-1, values.shape[2]), Modality.RGB)

    @property
    def length(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[1]


def _as_square(value: ArrayLike, channels: int, name: str) -> np.ndarray:
    matrix = np.array(value, dtype=np.float64)
    if matrix.shape != (channels, channels):
        raise ShapeError(f"{name} must be ({channels}, {channels}), got {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise InvalidInput(f"{name} has non-finite entries")
    matrix.flags.writeable = False
    return matrix


@dataclass(frozen=True, eq=False)
class AttentionWeights:
    """
    Projections of one multi-head attention.

    ``w_q`` projects the query (the pooled global query in cross attention), ``w_k``
    and ``w_v`` the key/value tokens, ``w_o`` the concatenated heads. ``heads`` must
    divide the channel count; each head sees ``d_k = C / heads`` contiguous columns.
    """

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    heads: int = 1

    def __post_init__(self):
        channels = np.shape(self.w_q)[0] if np.ndim(self.w_q) == 2 else -1
        if channels < 1:
            raise ShapeError(f"w_q must be a square matrix, got shape {np.shape(self.w_q)}")
        for name in ("w_q", "w_k", "w_v", "w_o"):
            object.__setattr__(self, name, _as_square(getattr(self, name), channels, name))
        if self.heads < 1 or channels % self.heads != 0:
            raise ShapeError(f"{self.heads} heads do not divide {channels} channels")

    @property
    def channels(self) -> int:
        return self.w_q.shape[0]

    @property
    def head_dim(self) -> int:
        return self.channels // self.heads

    @classmethod
    def random(cls, channels: int, heads: int, rng: np.random.Generator) -> "AttentionWeights":
        scale = 1.0 / np.sqrt(channels)
        w_q, w_k, w_v, w_o = (rng.normal(0.0, scale, (channels, channels)) for _ in range(4))
        return cls(w_q, w_k, w_v, w_o, heads)


def _vector(value: Optional[ArrayLike], size: int, name: str, default: float) -> np.ndarray:
    if value is None:
        return np.full(size, default)
    vector = np.array(value, dtype=np.float64)
    if vector.shape != (size,):
        raise ShapeError(f"{name} must have shape ({size},), got {vector.shape}")
    return vector


@dataclass(frozen=True, eq=False)
class TransformerLayerWeights:
    """
    Parameters of one pre-norm transformer layer.

    Parameters
    ----------
    attention : AttentionWeights
        Self-attention projections.
    mlp_w1, mlp_b1, mlp_w2, mlp_b2 : array_like
        Two-layer MLP of hidden width ``4 C``: ``(C, 4C)``, ``(4C,)``, ``(4C, C)``,
        ``(C,)``.
    ln1_scale, ln1_shift, ln2_scale, ln2_shift : array_like, optional
        Layer-norm affine parameters; identity by default.
    positional : array_like, optional
        (L, C) positional embedding added before the layer. Only the first layer of
        a block carries one.
    """

    attention: AttentionWeights
    mlp_w1: np.ndarray
    mlp_b1: np.ndarray
    mlp_w2: np.ndarray
    mlp_b2: np.ndarray
    ln1_scale: Optional[np.ndarray] = None
    ln1_shift: Optional[np.ndarray] = None
    ln2_scale: Optional[np.ndarray] = None
    ln2_shift: Optional[np.ndarray] = None
    positional: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        c = self.attention.channels
        hidden = MLP_EXPANSION * c
        expected = {"mlp_w1": (c, hidden), "mlp_b1": (hidden,),
                    "mlp_w2": (hidden, c), "mlp_b2": (c,)}
        for name, shape in expected.items():
            value = np.array(getattr(self, name), dtype=np.float64)
            if value.shape != shape:
                raise ShapeError(f"{name} must have shape {shape}, got {value.shape}")
            object.__setattr__(self, name, value)
        object.__setattr__(self, "ln1_scale", _vector(self.ln1_scale, c, "ln1_scale", 1.0))
        object.__setattr__(self, "ln1_shift", _vector(self.ln1_shift, c, "ln1_shift", 0.0))
        object.__setattr__(self, "ln2_scale", _vector(self.ln2_scale, c, "ln2_scale", 1.0))
        object.__setattr__(self, "ln2_shift", _vector(self.ln2_shift, c, "ln2_shift", 0.0))
        if self.positional is not None:
            positional = np.array(self.positional, dtype=np.float64)
            if positional.ndim != 2 or positional.shape[1] != c:
                raise ShapeError(f"positional embedding must be (L, {c}), got {positional.shape}")
            object.__setattr__(self, "positional", positional)

    @classmethod
    def random(cls, channels: int, heads: int, rng: np.random.Generator,
               length: Optional[int] = None) -> "TransformerLayerWeights":
        hidden = MLP_EXPANSION * channels
        positional = None if length is None else rng.normal(0.0, 0.1, (length, channels))
        return cls(
            attention=AttentionWeights.random(channels, heads, rng),
            mlp_w1=rng.normal(0.0, 1.0 / np.sqrt(channels), (channels, hidden)),
            mlp_b1=rng.normal(0.0, 0.1, hidden),
            mlp_w2=rng.normal(0.0, 1.0 / np.sqrt(hidden), (hidden, channels)),
            mlp_b2=rng.normal(0.0, 0.1, channels),
            positional=positional,
        )


@dataclass(frozen=True, eq=False)
class DFTrBlockWeights:
    """
    All weights of one fusion block.

    ``geo_to_rgb`` drives the update of the rgb tokens (geometry query attending
    over rgb tokens) and ``rgb_to_geo`` the update of the geometry tokens.
    """

    rgb_to_geo: AttentionWeights
    geo_to_rgb: AttentionWeights
    layers: Tuple[TransformerLayerWeights, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        channels = {self.rgb_to_geo.channels, self.geo_to_rgb.channels}
        channels.update(layer.attention.channels for layer in layers)
        if len(channels) != 1:
            raise ShapeError(f"block weights disagree on the channel count: {sorted(channels)}")
        if any(layer.positional is not None for layer in layers[1:]):
            raise ShapeError("only the first transformer layer may carry a positional embedding")
        object.__setattr__(self, "layers", layers)

    @classmethod
    def random(cls, c: int, rgb_length: int, geo_length: int, heads: int = 1,
               layers: int = 1, seed: int = 0) -> "DFTrBlockWeights":
        """
        Seeded pseudo-random weights.

        Parameters
        ----------
        c : int
            Channel count.
        rgb_length, geo_length : int
            Token counts H·W and N; the positional embedding covers their sum.
        heads : int, optional
            Attention heads, dividing ``c``.
        layers : int, optional
            Transformer layers in the block, 1 by default.
        seed : int, optional
            Seed of the ``numpy.random.default_rng`` stream.
        """
        if layers < 0:
            raise InvalidInput(f"layers must be >= 0, got {layers}")
        rng = np.random.default_rng(seed)
        rgb_to_geo = AttentionWeights.random(c, heads, rng)
        geo_to_rgb = AttentionWeights.random(c, heads, rng)
        length = rgb_length + geo_length
        stack = tuple(
            TransformerLayerWeights.random(c, heads, rng, length if i == 0 else None)
            for i in range(layers)
        )
        return cls(rgb_to_geo, geo_to_rgb, stack)


def softmax(scores: ArrayLike) -> np.ndarray:
    """Row-wise softmax over the last axis, shifted by the row max for stability."""
    values = np.asarray(scores, dtype=np.float64)
    exp = np.exp(values - values.max(axis=-1, keepdims=True))
    result = exp / exp.sum(axis=-1, keepdims=True)
    if not np.all(np.abs(result.sum(axis=-1) - 1.0) <= SOFTMAX_TOLERANCE):
        raise InvalidInput("softmax rows do not sum to one; scores must be finite")
    return result


def layer_norm(x: ArrayLike, scale: Optional[ArrayLike] = None,
               shift: Optional[ArrayLike] = None, eps: float = LAYER_NORM_EPS) -> np.ndarray:
    """Normalize each row to mean 0 and (population) variance 1, then scale and shift."""
    values = np.asarray(x, dtype=np.float64)
    mean = values.mean(axis=-1, keepdims=True)
    var = values.var(axis=-1, keepdims=True)
    normalized = (values - mean) / np.sqrt(var + eps)
    if scale is not None:
        normalized = normalized * np.asarray(scale)
    if shift is not None:
        normalized = normalized + np.asarray(shift)
    return normalized


def gelu(x: ArrayLike) -> np.ndarray:
    """Exact gaussian-error linear unit ``x Phi(x)``."""
    values = np.asarray(x, dtype=np.float64)
    return 0.5 * values * (1.0 + erf(values / np.sqrt(2.0)))


def multi_head_attention(queries: np.ndarray, tokens: np.ndarray,
                         weights: AttentionWeights) -> np.ndarray:
    """
    Scaled dot-product attention of (Lq, C) queries over (Lk, C) tokens.

    Queries and tokens are raw features; all four projections are applied here.
    """
    c = weights.channels
    if queries.shape[1] != c or tokens.shape[1] != c:
        raise ShapeError(
            f"attention over {c} channels got queries {queries.shape} and tokens {tokens.shape}"
        )
    h, d_k = weights.heads, weights.head_dim
    q = (queries @ weights.w_q).reshape(-1, h, d_k).transpose(1, 0, 2)
    k = (tokens @ weights.w_k).reshape(-1, h, d_k).transpose(1, 0, 2)
    v = (tokens @ weights.w_v).reshape(-1, h, d_k).transpose(1, 0, 2)

    attention = softmax(q @ k.transpose(0, 2, 1) / np.sqrt(d_k))
    heads = (attention @ v).transpose(1, 0, 2).reshape(queries.shape[0], c)
    return heads @ weights.w_o


def pooled_query(features: FeatureSequence) -> np.ndarray:
    """Column-wise max over the tokens, as a (1, C) global feature."""
    if features.length == 0:
        raise ShapeError("cannot pool an empty feature sequence")
    return features.data.max(axis=0, keepdims=True)


def cross_attention(query_source: FeatureSequence, kv_source: FeatureSequence,
                    weights: AttentionWeights) -> np.ndarray:
    """
    Global vector of ``query_source`` attending over the tokens of ``kv_source``.

    Returns
    -------
    np.ndarray
        (1, C) output ``concat_i(softmax(Q_i K_i^T / sqrt(d_k)) V_i) W_O`` where
        ``Q = pooled_query(query_source) W_q``.
    """
    if query_source.channels != kv_source.channels:
        raise ShapeError(
            f"channel mismatch: {query_source.channels} vs {kv_source.channels}"
        )
    if kv_source.length == 0:
        raise ShapeError("cannot attend over an empty feature sequence")
    return multi_head_attention(pooled_query(query_source), kv_source.data, weights)


def concatenate(rgb: FeatureSequence, geo: FeatureSequence) -> FeatureSequence:
    """Fused sequence holding the rgb block followed by the geometry block."""
    if rgb.channels != geo.channels:
        raise ShapeError(f"channel mismatch: {rgb.channels} vs {geo.channels}")
    return FeatureSequence(np.vstack([rgb.data, geo.data]), Modality.FUSED,
                           (rgb.length, geo.length))


def fuse_bidirectional(rgb: FeatureSequence, geo: FeatureSequence,
                       w_rgb_to_geo: AttentionWeights,
                       w_geo_to_rgb: AttentionWeights,
                       query_source: str = "both") -> FeatureSequence:
    """
    Cross-modality fusion of an rgb and a geometry sequence.

    The pooled geometry query attends over the rgb tokens and the resulting global
    vector is repeated onto every rgb token; symmetrically the pooled rgb query
    attends over the geometry tokens to update the geometry block.

    Parameters
    ----------
    rgb, geo : FeatureSequence
        Colour and geometry tokens with a shared channel count.
    w_rgb_to_geo, w_geo_to_rgb : AttentionWeights
        Weights of the rgb-queried and the geometry-queried attention.
    query_source : str, optional
        ``"rgb"`` keeps only the rgb-queried update (of the geometry block),
        ``"depth"`` only the geometry-queried update (of the rgb block), and
        ``"both"`` applies the two.

    Returns
    -------
    FeatureSequence
        Fused sequence (rgb block first) with its block lengths recorded.
    """
    if rgb.channels != geo.channels:
        raise ShapeError(f"channel mismatch: {rgb.channels} vs {geo.channels}")
    if query_source not in QUERY_SOURCES:
        raise InvalidInput(f"query_source must be one of {QUERY_SOURCES}, got '{query_source}'")
    rgb_data, geo_data = rgb.data, geo.data
    if query_source in ("depth", "both"):
        rgb_data = rgb_data + cross_attention(geo, rgb, w_geo_to_rgb)
    if query_source in ("rgb", "both"):
        geo_data = geo_data + cross_attention(rgb, geo, w_rgb_to_geo)
    return concatenate(FeatureSequence(rgb_data, Modality.RGB),
                       FeatureSequence(geo_data, Modality.GEOMETRY))


def transformer_layer(seq: FeatureSequence, weights: TransformerLayerWeights,
                      add_positional: bool = True) -> FeatureSequence:
    """
    One pre-norm transformer layer.

    ``F0' = F + sigma_pos`` (when the layer carries an embedding and
    ``add_positional`` is set), ``F' = MSA(LN(F0')) + F0'``,
    ``F'' = MLP(LN(F')) + F'``. Block lengths are carried through.
    """
    if seq.channels != weights.attention.channels:
        raise ShapeError(
            f"layer expects {weights.attention.channels} channels, got {seq.channels}"
        )
    x = seq.data
    if add_positional and weights.positional is not None:
        if weights.positional.shape != x.shape:
            raise ShapeError(
                f"positional embedding {weights.positional.shape} does not match "
                f"sequence {x.shape}"
            )
        x = x + weights.positional

    normed = layer_norm(x, weights.ln1_scale, weights.ln1_shift)
    x = x + multi_head_attention(normed, normed, weights.attention)

    normed = layer_norm(x, weights.ln2_scale, weights.ln2_shift)
    hidden = gelu(normed @ weights.mlp_w1 + weights.mlp_b1)
    x = x + hidden @ weights.mlp_w2 + weights.mlp_b2
    return FeatureSequence(x, seq.modality, seq.block_lengths)


def split_fused(seq: FeatureSequence) -> Tuple[FeatureSequence, FeatureSequence]:
    """Undo the concatenation of :func:`fuse_bidirectional`, preserving token order."""
    if seq.block_lengths is None:
        raise InvalidInput("sequence carries no block lengths to split on")
    rgb_length = seq.block_lengths[0]
    return (FeatureSequence(seq.data[:rgb_length], Modality.RGB),
            FeatureSequence(seq.data[rgb_length:], Modality.GEOMETRY))


def dftr_block(rgb: FeatureSequence, geo: FeatureSequence, block_weights: DFTrBlockWeights,
               use_cross_attention: bool = True,
               use_positional_embedding: bool = True,
               query_source: str = "both") -> Tuple[FeatureSequence, FeatureSequence]:
    """
    Full fusion block: fuse, run the transformer layers, split.

    Parameters
    ----------
    rgb, geo : FeatureSequence
        Colour and geometry tokens with a shared channel count.
    block_weights : DFTrBlockWeights
        Cross-attention and transformer weights.
    use_cross_attention : bool, optional
        When off the two sequences are concatenated without the cross-modality
        update.
    use_positional_embedding : bool, optional
        When off the first layer's embedding is skipped.
    query_source : str, optional
        Which pooled query drives the cross-modality update, see
        :func:`fuse_bidirectional`.

    Returns
    -------
    Tuple[FeatureSequence, FeatureSequence]
        Updated rgb and geometry sequences with their input lengths.
    """
    if query_source not in QUERY_SOURCES:
        raise InvalidInput(f"query_source must be one of {QUERY_SOURCES}, got '{query_source}'")
    if use_cross_attention:
        seq = fuse_bidirectional(rgb, geo, block_weights.rgb_to_geo, block_weights.geo_to_rgb,
                                 query_source)
    else:
        seq = concatenate(rgb, geo)
    for layer in block_weights.layers:
        seq = transformer_layer(seq, layer, add_positional=use_positional_embedding)
    return split_fused(seq)
