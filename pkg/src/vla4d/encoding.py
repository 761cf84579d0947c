"""Spatial (3-D coordinate) and relative temporal embeddings, and the layout
of the multimodal token sequence."""

import math
from dataclasses import dataclass

import numpy as np

from .errors import CurrentFrameMissing, DataError, FutureFrame

DEFAULT_EXTENT = ((-2.0, 2.0), (-2.0, 2.0), (-2.0, 2.0))


def fourier_dim(bands):
    return 3 + 6 * bands


def fourier_features(xyz, bands):
    """``[x, y, z, sin(2^b pi x), cos(2^b pi x), ...]`` over the last axis of ``xyz``.

    Frequencies are grouped per axis: all bands of x, then y, then z.
    """
    xyz = np.asarray(xyz, dtype=np.float64)
    parts = [xyz]
    freqs = (2.0 ** np.arange(bands)) * math.pi
    for axis in range(3):
        ang = xyz[..., axis : axis + 1] * freqs
        sc = np.stack([np.sin(ang), np.cos(ang)], axis=-1)
        parts.append(sc.reshape(*xyz.shape[:-1], 2 * bands))
    return np.concatenate(parts, axis=-1)


@dataclass(frozen=True)
class SpatialEmbedder:
    bands: int
    W: np.ndarray
    extent: tuple = DEFAULT_EXTENT
    mode: str = "fourier_linear"

    def __post_init__(self):
        W = np.array(self.W, dtype=np.float64)
        if W.ndim != 2 or W.shape[0] != fourier_dim(self.bands) or W.shape[1] < 1:
            raise DataError(f"W must be ({fourier_dim(self.bands)}, out_dim)")
        ext = np.array(self.extent, dtype=np.float64)
        if ext.shape != (3, 2) or np.any(ext[:, 0] >= ext[:, 1]):
            raise DataError("extent must be three (min, max) pairs with min < max")
        if self.mode != "fourier_linear":
            raise DataError(f"unknown spatial mode {self.mode!r}")
        W.setflags(write=False)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "extent", tuple(map(tuple, ext.tolist())))

    @property
    def out_dim(self):
        return self.W.shape[1]

    @classmethod
    def random(cls, bands, out_dim, rng, extent=DEFAULT_EXTENT):
        d = fourier_dim(bands)
        lim = 1.0 / math.sqrt(d)
        W = (rng.uniform_array(d * out_dim) * 2.0 - 1.0) * lim
        return cls(bands, W.reshape(d, out_dim), extent)

    def normalize(self, xyz):
        ext = np.array(self.extent)
        lo, hi = ext[:, 0], ext[:, 1]
        return np.clip(2.0 * (np.asarray(xyz) - lo) / (hi - lo) - 1.0, -1.0, 1.0)

    def embed_points(self, xyz):
        """Embed an ``(..., 3)`` array of world points to ``(..., out_dim)``."""
        return fourier_features(self.normalize(xyz), self.bands) @ self.W


def spatial_embed(pg, emb):
    """Feature grid ``[out_dim, rows, cols]`` for a point grid; masked cells are zero."""
    xyz = np.moveaxis(pg.points, 0, -1)
    feats = emb.embed_points(xyz)
    feats = np.where(pg.mask[..., None], feats, 0.0)
    return np.moveaxis(feats, -1, 0), pg.mask.copy()


def fuse_spatial(feature_map, pg, emb):
    """Element-wise addition of the coordinate embedding onto a visual feature map."""
    fm = np.asarray(feature_map, dtype=np.float64)
    spatial, _ = spatial_embed(pg, emb)
    if fm.shape != spatial.shape:
        raise DataError(f"feature map {fm.shape} does not match embedding {spatial.shape}")
    return fm + spatial


@dataclass(frozen=True)
class TemporalEmbedder:
    out_dim: int
    n_max: int
    mode: str = "learnable"
    table: np.ndarray = None

    def __post_init__(self):
        if self.out_dim < 1 or self.n_max < 0:
            raise DataError("out_dim must be >= 1 and n_max >= 0")
        if self.mode == "learnable":
            if self.table is None:
                raise DataError("learnable temporal embedder needs a table")
            tab = np.array(self.table, dtype=np.float64)
            if tab.shape != (self.n_max + 1, self.out_dim):
                raise DataError(f"table must be ({self.n_max + 1}, {self.out_dim})")
            tab.setflags(write=False)
            object.__setattr__(self, "table", tab)
        elif self.mode != "sinusoidal":
            raise DataError(f"unknown temporal mode {self.mode!r}")

    @classmethod
    def random(cls, out_dim, n_max, rng, scale=0.02):
        tab = (rng.uniform_array((n_max + 1) * out_dim) * 2.0 - 1.0) * scale
        return cls(out_dim, n_max, "learnable", tab.reshape(n_max + 1, out_dim))


def sinusoid(offset, dim, base=10000.0):
    """Interleaved ``sin, cos`` pairs; offset 0 gives ``(0, 1, 0, 1, ...)``."""
    i = np.arange(dim)
    rates = base ** (-(2 * (i // 2)) / dim)
    ang = offset * rates
    return np.where(i % 2 == 0, np.sin(ang), np.cos(ang))


def temporal_embed(t, j, emb):
    """Embedding of the relative offset ``t - j``; never depends on ``j`` alone."""
    if j > t:
        raise FutureFrame(f"frame {j} is after current time {t}")
    offset = t - j
    if emb.mode == "learnable":
        return emb.table[min(offset, emb.n_max)].copy()
    return sinusoid(float(offset), emb.out_dim)


@dataclass(frozen=True)
class TokenDescriptor:
    kind: str
    frame: int = None
    index_in_frame: int = None

    def to_json(self):
        return {"kind": self.kind, "frame": self.frame, "index_in_frame": self.index_in_frame}


def frame_token_count(height, width, patch=14, downsample=4):
    """Visual tokens per frame after a ``patch``-stride encoder and a projector that
    merges ``downsample`` neighbouring features into one token."""
    if height % patch or width % patch:
        raise DataError(f"{height}x{width} not divisible by patch {patch}")
    cells = (height // patch) * (width // patch)
    if cells % downsample:
        raise DataError(f"{cells} cells not divisible by downsample {downsample}")
    return cells // downsample


def assemble_tokens(H, t, tokens_per_frame, text_len, fusion="concat"):
    """Token layout: frames in ascending time, each a temporal token followed by
    its spatial tokens, then the text tokens.

    ``tokens_per_frame`` is an int or a mapping frame -> count (history frames
    can be smaller than the current one).  With ``fusion="additive"`` the
    temporal code is folded into the spatial tokens and gets no slot of its own.
    """
    frames = sorted(set(H))
    if t not in frames:
        raise CurrentFrameMissing(f"current frame {t} not in sampled set")
    if fusion not in ("concat", "additive"):
        raise DataError(f"unknown fusion {fusion!r}")
    if text_len < 0:
        raise DataError("text_len must be >= 0")
    layout = []
    for f in frames:
        m = tokens_per_frame[f] if hasattr(tokens_per_frame, "__getitem__") else tokens_per_frame
        if m < 1:
            raise DataError("tokens_per_frame must be >= 1")
        if fusion == "concat":
            layout.append(TokenDescriptor("temporal", f))
        layout.extend(TokenDescriptor("spatial", f, i) for i in range(m))
    layout.extend(TokenDescriptor("text", None, i) for i in range(text_len))
    return layout


def materialize_tokens(layout, t, temporal, spatial_tokens, text_tokens, fusion="concat"):
    """Stack embeddings following ``layout`` into a ``[len(layout), dim]`` array.

    ``spatial_tokens`` maps frame -> ``[m, dim]``; ``text_tokens`` is ``[L, dim]``.
    """
    rows = []
    for d in layout:
        if d.kind == "temporal":
            rows.append(temporal_embed(t, d.frame, temporal))
        elif d.kind == "spatial":
            tok = np.asarray(spatial_tokens[d.frame][d.index_in_frame], dtype=np.float64)
            if fusion == "additive":
                tok = tok + temporal_embed(t, d.frame, temporal)
            rows.append(tok)
        else:
            rows.append(np.asarray(text_tokens[d.index_in_frame], dtype=np.float64))
    return np.stack(rows)


def layout_to_json(layout):
    return [d.to_json() for d in layout]
