"""Forward-only Mamba-Swin layer: a global state-space scan and local
windowed attention run in parallel on the same feature volume, then mixed
by a learned sigmoid gate.

Features are channel-major arrays of shape ``(C, nx, ny, nz)``. Nothing
here is trained; the block exists so its algebra can be checked.
"""

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter
from scipy.special import expit, softmax

DEFAULT_WINDOW = (4, 4, 4)


@dataclass(frozen=True)
class FeatureTensor:
    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.ndim != 4 or data.shape[0] < 1 or min(data.shape[1:]) < 1:
            raise ValueError(f"expected (C, nx, ny, nz) features, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("features must be finite")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def channels(self):
        return self.data.shape[0]

    @property
    def dims(self):
        return self.data.shape[1:]


@dataclass(frozen=True)
class SsmParams:
    """Diagonal SSM shared across channels, with a per-channel step.

    ``A`` has shape (N,), ``B`` and ``C_out`` shape (C, N), ``delta`` (C,).
    """

    A: np.ndarray
    B: np.ndarray
    C_out: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=np.float64)
        B = np.atleast_2d(np.asarray(self.B, dtype=np.float64))
        C_out = np.atleast_2d(np.asarray(self.C_out, dtype=np.float64))
        delta = np.atleast_1d(np.asarray(self.delta, dtype=np.float64))
        if A.ndim != 1 or np.any(A > 0):
            raise ValueError("A must be a vector of non-positive reals")
        if B.shape != C_out.shape or B.shape[1] != A.size or delta.shape != (B.shape[0],):
            raise ValueError(f"inconsistent SSM shapes: A {A.shape}, B {B.shape}, "
                             f"C_out {C_out.shape}, delta {delta.shape}")
        if np.any(delta <= 0):
            raise ValueError("delta must be positive")
        for name, v in (("A", A), ("B", B), ("C_out", C_out), ("delta", delta)):
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, v)

    @property
    def state_dim(self):
        return self.A.size

    def discretize(self):
        """Zero-order hold: ``A_bar = exp(delta A)``, ``B_bar = delta B``, each (C, N)."""
        return np.exp(self.delta[:, None] * self.A[None, :]), self.delta[:, None] * self.B


@dataclass(frozen=True)
class AttnParams:
    Wq: np.ndarray
    Wk: np.ndarray
    Wv: np.ndarray
    window: tuple = DEFAULT_WINDOW
    shift: tuple = (0, 0, 0)
    scale: float = None

    def __post_init__(self):
        window = tuple(int(w) for w in self.window)
        shift = tuple(int(s) for s in self.shift)
        if len(window) != 3 or min(window) < 1:
            raise ValueError(f"window must be 3 positive integers, got {self.window}")
        if len(shift) != 3 or any(s < 0 or s >= w for s, w in zip(shift, window)):
            raise ValueError(f"shift {shift} must satisfy 0 <= shift < window {window}")
        mats = [np.atleast_2d(np.asarray(m, dtype=np.float64)) for m in (self.Wq, self.Wk, self.Wv)]
        c = mats[0].shape[0]
        if any(m.shape != (c, c) for m in mats):
            raise ValueError("Wq, Wk, Wv must all be C x C")
        scale = 1.0 / np.sqrt(c) if self.scale is None else float(self.scale)
        if scale <= 0:
            raise ValueError("scale must be positive")
        object.__setattr__(self, "window", window)
        object.__setattr__(self, "shift", shift)
        object.__setattr__(self, "scale", scale)
        for name, m in zip(("Wq", "Wk", "Wv"), mats):
            object.__setattr__(self, name, m)


@dataclass(frozen=True)
class GateParams:
    Wg: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        Wg = np.atleast_2d(np.asarray(self.Wg, dtype=np.float64))
        bias = np.atleast_1d(np.asarray(self.bias, dtype=np.float64))
        if Wg.shape != (bias.size, 2 * bias.size):
            raise ValueError(f"Wg must be C x 2C for C={bias.size}, got {Wg.shape}")
        if not (np.all(np.isfinite(Wg)) and np.all(np.isfinite(bias))):
            raise ValueError("gate parameters must be finite")
        object.__setattr__(self, "Wg", Wg)
        object.__setattr__(self, "bias", bias)


def _data(z):
    return z.data if isinstance(z, FeatureTensor) else np.asarray(z, dtype=np.float64)


def serialize(z, order="raster-xyz"):
    """(L, C) sequence in raster order, index ``x + nx * (y + ny * z)``."""
    if order != "raster-xyz":
        raise ValueError(f"unsupported serialization order {order!r}")
    data = _data(z)
    return data.reshape(data.shape[0], -1, order="F").T.copy()


def deserialize(seq, dims, order="raster-xyz"):
    if order != "raster-xyz":
        raise ValueError(f"unsupported serialization order {order!r}")
    seq = np.asarray(seq, dtype=np.float64)
    return FeatureTensor(seq.T.reshape((seq.shape[1], *dims), order="F"))


def ssm_scan(seq, p):
    """Run ``h_t = A_bar h_{t-1} + B_bar x_t``, ``y_t = C_out h_t`` per channel, ``h_0 = 0``.

    ``seq`` has shape (L, C); each (channel, state) pair is a first-order
    recursive filter.
    """
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[0] == 0:
        raise ValueError("ssm_scan needs a non-empty (L, C) sequence")
    if seq.shape[1] != p.B.shape[0]:
        raise ValueError(f"sequence has {seq.shape[1]} channels, params expect {p.B.shape[0]}")
    a_bar, b_bar = p.discretize()
    out = np.zeros_like(seq)
    for c in range(seq.shape[1]):
        for n in range(p.state_dim):
            h = lfilter([b_bar[c, n]], [1.0, -a_bar[c, n]], seq[:, c])
            out[:, c] += p.C_out[c, n] * h
    return out


def _pad_to_windows(data, window):
    pads = [(0, 0)] + [(0, (-n) % w) for n, w in zip(data.shape[1:], window)]
    return np.pad(data, pads, mode="edge")


def _partition(data, window):
    c = data.shape[0]
    (nx, ny, nz), (wx, wy, wz) = data.shape[1:], window
    blocks = data.reshape(c, nx // wx, wx, ny // wy, wy, nz // wz, wz)
    blocks = blocks.transpose(1, 3, 5, 2, 4, 6, 0)
    return blocks.reshape(-1, wx * wy * wz, c)


def _merge(windows, shape, window):
    c, (nx, ny, nz), (wx, wy, wz) = shape[0], shape[1:], window
    blocks = windows.reshape(nx // wx, ny // wy, nz // wz, wx, wy, wz, c)
    return blocks.transpose(6, 0, 3, 1, 4, 2, 5).reshape(shape)


def window_attention(z, p, return_weights=False):
    """Self-attention inside each (optionally shifted) window.

    The volume is edge-padded to window multiples, rolled by ``-shift``,
    split into windows, attended, then rolled back and cropped.
    """
    data = _data(z)
    dims = data.shape[1:]
    if data.shape[0] != p.Wq.shape[0]:
        raise ValueError(f"features have {data.shape[0]} channels, params expect {p.Wq.shape[0]}")
    padded = _pad_to_windows(data, p.window)
    shifted = np.roll(padded, [-s for s in p.shift], axis=(1, 2, 3))
    x = _partition(shifted, p.window)
    q, k, v = x @ p.Wq.T, x @ p.Wk.T, x @ p.Wv.T
    weights = softmax(q @ k.transpose(0, 2, 1) * p.scale, axis=-1)
    out = _merge(weights @ v, padded.shape, p.window)
    out = np.roll(out, list(p.shift), axis=(1, 2, 3))
    out = FeatureTensor(out[:, :dims[0], :dims[1], :dims[2]])
    return (out, weights) if return_weights else out


_GATE_LO = np.finfo(np.float64).tiny
_GATE_HI = np.nextafter(1.0, 0.0)


def gate_values(z_m, z_s, p):
    a, b = _data(z_m), _data(z_s)
    logits = np.einsum("ck,k...->c...", p.Wg, np.concatenate([a, b], axis=0))
    logits += p.bias.reshape(-1, 1, 1, 1)
    return np.clip(expit(logits), _GATE_LO, _GATE_HI)


def gate_fuse(z_m, z_s, p):
    """``G * z_m + (1 - G) * z_s`` with ``G = sigmoid(Wg [z_m; z_s] + bias)``."""
    a, b = _data(z_m), _data(z_s)
    if a.shape != b.shape:
        raise ValueError(f"branch shapes differ: {a.shape} vs {b.shape}")
    if a.shape[0] != p.bias.size:
        raise ValueError(f"features have {a.shape[0]} channels, gate expects {p.bias.size}")
    g = gate_values(a, b, p)
    out = g * a + (1.0 - g) * b
    # rounding can step one ulp outside the segment; the convex bound is exact
    return FeatureTensor(np.clip(out, np.minimum(a, b), np.maximum(a, b)))


def msl_forward(z, ssm, attn, gate):
    data = _data(z)
    z_m = deserialize(ssm_scan(serialize(data), ssm), data.shape[1:])
    z_s = window_attention(data, attn)
    return gate_fuse(z_m, z_s, gate)


def random_params(channels, state_dim=4, window=DEFAULT_WINDOW, shift=(0, 0, 0), seed=0):
    """Fixed-seed test parameters: weights in [-0.5, 0.5], A in [-1, -0.01]."""
    rng = np.random.default_rng(seed)
    c, n = channels, state_dim
    ssm = SsmParams(A=rng.uniform(-1.0, -0.01, n), B=rng.uniform(-0.5, 0.5, (c, n)),
                    C_out=rng.uniform(-0.5, 0.5, (c, n)), delta=rng.uniform(0.05, 0.5, c))
    attn = AttnParams(*(rng.uniform(-0.5, 0.5, (c, c)) for _ in range(3)), window=window, shift=shift)
    gate = GateParams(rng.uniform(-0.5, 0.5, (c, 2 * c)), rng.uniform(-0.5, 0.5, c))
    return ssm, attn, gate
