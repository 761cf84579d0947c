"""Keyframe selection over a history window: memory-bank sampling and the
uniform baseline.

Memory-bank sampling walks backwards from the current frame keeping ``k``
frames.  It maintains ``S[i] = sim(H[i-1], H[i])`` for the kept list ``H``;
when a new frame is less similar to the last kept frame than the most
redundant adjacent pair, that pair is merged (the middle frame dropped) and
the new frame appended, otherwise the oldest kept frame slides back in time.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ImageTooSmall, LengthMismatch, MissingFrame

NEG_INF = float("-inf")


@dataclass(frozen=True)
class FeatureSpec:
    kind: str = "pooled_gray"
    pool_size: int = 16

    def __post_init__(self):
        if self.kind not in ("identity", "pooled_gray"):
            raise DataError(f"unknown feature kind {self.kind!r}")
        if self.pool_size < 1:
            raise DataError("pool_size must be >= 1")

    @classmethod
    def parse(cls, text):
        """``"identity"`` or ``"pooled:N"``."""
        if text == "identity":
            return cls("identity")
        if text.startswith("pooled:"):
            try:
                return cls("pooled_gray", int(text.split(":", 1)[1]))
            except ValueError:
                pass
        raise DataError(f"bad feature spec {text!r}")


@dataclass(frozen=True)
class SimilaritySpec:
    kind: str = "neg_l2"

    def __post_init__(self):
        if self.kind not in ("neg_l2", "cosine"):
            raise DataError(f"unknown similarity {self.kind!r}")


def _bins(n, p):
    size = n // p
    edges = [i * size for i in range(p)] + [n]
    return edges


def extract_feature(img, spec=FeatureSpec()):
    a = np.asarray(getattr(img, "array", img), dtype=np.float64)
    if spec.kind == "identity":
        return a.reshape(-1).copy()
    if a.ndim != 2:
        raise DataError("pooled_gray expects a 2-D image")
    h, w = a.shape
    p = spec.pool_size
    if h < p or w < p:
        raise ImageTooSmall(f"{h}x{w} image smaller than pool {p}")
    rows, cols = _bins(h, p), _bins(w, p)
    out = np.empty((p, p))
    for i in range(p):
        for j in range(p):
            blk = a[rows[i] : rows[i + 1], cols[j] : cols[j + 1]]
            # offset by one pixel so flat regions pool to their exact value
            out[i, j] = blk.flat[0] + (blk - blk.flat[0]).mean()
    return out.reshape(-1)


def similarity(a, b, spec=SimilaritySpec()):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise LengthMismatch(f"feature lengths {a.size} and {b.size} differ")
    if spec.kind == "neg_l2":
        return -float(np.linalg.norm(a - b))
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 and nb == 0.0:
        return 1.0
    if na == 0.0 or nb == 0.0:
        return 0.0
    return max(-1.0, min(1.0, float(a @ b) / (na * nb)))


def window_timestamps(t, frames, n):
    """Timestamps ``t, t-1, ...`` inside the window that the history can supply.

    The history is bounded below by the earliest timestamp in ``frames``;
    any gap between that and ``t`` raises :class:`MissingFrame`.
    """
    if t not in frames:
        raise MissingFrame(f"current frame {t} absent")
    earliest = min(frames)
    out = []
    for j in range(n):
        ts = t - j
        if ts < earliest:
            break
        if ts not in frames:
            raise MissingFrame(f"frame {ts} inside window absent")
        out.append(ts)
    return out


def memory_bank_reference(t, frames, n, k, sim=SimilaritySpec()):
    """Line-by-line transcription of the published pseudo-code, kept as a test oracle.

    Two readings are applied: the replace branch compares against frame
    ``t-j`` and drops ``S[-1]`` together with ``H[-1]``.
    """
    if k < 1 or n < 1:
        raise DataError("k and n must be >= 1")
    window = window_timestamps(t, frames, n)
    if k == 1:
        return [t]
    phi = lambda ts: frames[ts]  # noqa: E731
    H = [t]
    S = [NEG_INF]
    for j in range(1, len(window)):
        s = similarity(phi(H[-1]), phi(t - j), sim)
        if len(H) < k:
            H.append(t - j)
            S.append(s)
        else:
            m = int(np.argmax(S))
            if s < S[m]:
                H.append(t - j)
                S.append(s)
                s2 = similarity(phi(H[m - 1]), phi(H[m + 1]), sim)
                del H[m]
                S[m + 1] = s2
                del S[m]
            else:
                s2 = similarity(phi(H[-2]), phi(t - j), sim)
                del H[-1]
                del S[-1]
                H.append(t - j)
                S.append(s2)
    return sorted(H)


class SampleState:
    """Incremental memory-bank state, fed frames from newest to oldest.

    With ``debug=True`` the structural invariants are re-verified after every
    step (``|S| == |H|``, ``H`` strictly decreasing, ``S[i]`` equal to the
    similarity of neighbours).
    """

    def __init__(self, t, feature, k, sim=SimilaritySpec(), debug=False):
        if k < 1:
            raise DataError("k must be >= 1")
        self.k = k
        self.sim = sim
        self.debug = debug
        self.H = [t]
        self.S = [NEG_INF]
        self._feat = {t: np.asarray(feature, dtype=np.float64)}

    def _s(self, a, b):
        return similarity(self._feat[a], self._feat[b], self.sim)

    def push(self, ts, feature):
        if ts >= self.H[-1]:
            raise DataError("frames must be pushed in strictly decreasing time")
        if self.k == 1:
            return
        H, S, feat = self.H, self.S, self._feat
        feat[ts] = np.asarray(feature, dtype=np.float64)
        s = self._s(H[-1], ts)
        if len(H) < self.k:
            H.append(ts)
            S.append(s)
        else:
            # index of the first maximum; S[0] is -inf so m >= 1
            m = max(range(len(S)), key=S.__getitem__)
            if s < S[m]:
                H.append(ts)
                S.append(s)
                S[m + 1] = self._s(H[m - 1], H[m + 1])
                del feat[H[m]]
                del H[m], S[m]
            else:
                del feat[H[-1]]
                H[-1] = ts
                S[-1] = self._s(H[-2], ts)
        if self.debug:
            self.check()

    def check(self):
        H, S = self.H, self.S
        assert len(H) == len(S), "len(S) != len(H)"
        assert all(a > b for a, b in zip(H, H[1:])), "H not strictly decreasing"
        assert S[0] == NEG_INF
        for i in range(1, len(H)):
            assert S[i] == self._s(H[i - 1], H[i]), f"S[{i}] stale"

    @property
    def selected(self):
        return sorted(self.H)


def memory_bank_sample(t, frames, n, k, sim=SimilaritySpec(), debug=False):
    """Select up to ``k`` timestamps from the ``n``-frame window ending at ``t``.

    ``frames`` maps timestamp -> feature vector.  Returns ascending timestamps,
    always including ``t``; argmax ties resolve to the smallest index, i.e.
    the newest redundant pair.
    """
    if k < 1 or n < 1:
        raise DataError("k and n must be >= 1")
    window = window_timestamps(t, frames, n)
    state = SampleState(t, frames[t], k, sim, debug=debug)
    if k == 1:
        return [t]
    for ts in window[1:]:
        state.push(ts, frames[ts])
    return state.selected


def uniform_sample(t, n, k, earliest=0):
    """``t - round(i (n-1)/(k-1))`` for ``i < k``, clamped at ``earliest``, deduplicated."""
    if k < 1 or n < 1:
        raise DataError("k and n must be >= 1")
    if k == 1:
        return [t]
    den = 2 * (k - 1)
    picked = {max(earliest, t - (2 * i * (n - 1) + (k - 1)) // den) for i in range(k)}
    picked.add(t)
    return sorted(picked)
