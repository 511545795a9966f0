"""Executable property suite for the Mamba-Swin layer.

Each check returns ``(name, passed, detail)``; ``run_checks`` runs them all.
The reference implementations here are deliberately naive loops so they
share no code path with the vectorised block.
"""

import math
import time

import numpy as np

from .msl import (AttnParams, GateParams, deserialize, gate_fuse, gate_values, msl_forward,
                  random_params, serialize, ssm_scan, window_attention)


def unrolled_scan(seq, p):
    """Recurrence written out step by step in extended precision."""
    seq = np.asarray(seq, dtype=np.longdouble)
    A = p.A.astype(np.longdouble)
    length, channels = seq.shape
    out = np.zeros((length, channels), dtype=np.longdouble)
    for c in range(channels):
        d = np.longdouble(p.delta[c])
        a_bar = np.exp(d * A)
        b_bar = d * p.B[c].astype(np.longdouble)
        h = np.zeros(p.state_dim, dtype=np.longdouble)
        for t in range(length):
            h = a_bar * h + b_bar * seq[t, c]
            out[t, c] = np.sum(p.C_out[c].astype(np.longdouble) * h)
    return out


def naive_window_attention(data, p):
    """Per-query loops; window membership from explicit shifted coordinates."""
    c, nx, ny, nz = data.shape
    w, s = p.window, p.shift
    px, py, pz = (n + (-n) % k for n, k in zip((nx, ny, nz), w))
    ex = lambda i, n: min(i, n - 1)  # edge padding
    groups = {}
    for i in range(px):
        for j in range(py):
            for k in range(pz):
                key = (((i - s[0]) % px) // w[0], ((j - s[1]) % py) // w[1], ((k - s[2]) % pz) // w[2])
                groups.setdefault(key, []).append((i, j, k))
    out = np.zeros((c, px, py, pz))
    for members in groups.values():
        feats = [data[:, ex(i, nx), ex(j, ny), ex(k, nz)] for i, j, k in members]
        qs = [p.Wq @ f for f in feats]
        ks = [p.Wk @ f for f in feats]
        vs = [p.Wv @ f for f in feats]
        for q, (i, j, k) in zip(qs, members):
            logits = [float(q @ kk) * p.scale for kk in ks]
            top = max(logits)
            e = [math.exp(v - top) for v in logits]
            total = sum(e)
            acc = np.zeros(c)
            for wgt, v in zip(e, vs):
                acc += (wgt / total) * v
            out[:, i, j, k] = acc
    return out[:, :nx, :ny, :nz]


def naive_gate(a, b, p):
    c = a.shape[0]
    out = np.zeros_like(a)
    for idx in np.ndindex(*a.shape[1:]):
        cat = np.concatenate([a[(slice(None), *idx)], b[(slice(None), *idx)]])
        for ch in range(c):
            logit = sum(p.Wg[ch, k] * cat[k] for k in range(2 * c)) + p.bias[ch]
            g = 1.0 / (1.0 + math.exp(-logit))
            out[(ch, *idx)] = g * a[(ch, *idx)] + (1.0 - g) * b[(ch, *idx)]
    return out


def naive_forward(data, ssm, attn, gate):
    c, nx, ny, nz = data.shape
    seq = [data[:, x, y, z] for z in range(nz) for y in range(ny) for x in range(nx)]
    scanned = unrolled_scan(np.array(seq), ssm).astype(np.float64)
    z_m = np.zeros_like(data)
    t = 0
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                z_m[:, x, y, z] = scanned[t]
                t += 1
    return naive_gate(z_m, naive_window_attention(data, attn), gate)


def check_serialize_order():
    rng = np.random.default_rng(1)
    z = rng.normal(size=(2, 3, 2, 2))
    seq = serialize(z)
    ok = all(np.array_equal(seq[x + 3 * (y + 2 * k)], z[:, x, y, k])
             for x in range(3) for y in range(2) for k in range(2))
    ok &= np.array_equal(deserialize(seq, (3, 2, 2)).data, z)
    return "serialize raster order and round trip", bool(ok), ""


def check_scan_oracle():
    worst = 0.0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        ssm, _, _ = random_params(3, 4, seed=seed)
        seq = rng.uniform(-1, 1, (64, 3))
        worst = max(worst, float(np.max(np.abs(ssm_scan(seq, ssm) - unrolled_scan(seq, ssm)))))
    return "ssm_scan matches unrolled recurrence (<= 1e-6)", worst <= 1e-6, f"max error {worst:.2e}"


def check_scan_causal_linear():
    rng = np.random.default_rng(2)
    ssm, _, _ = random_params(2, 3, seed=2)
    x, y = rng.normal(size=(16, 2)), rng.normal(size=(16, 2))
    bumped = x.copy()
    bumped[2] += 1.0
    causal = np.array_equal(ssm_scan(x, ssm)[:2], ssm_scan(bumped, ssm)[:2])
    lin = np.max(np.abs(ssm_scan(2.0 * x - 3.0 * y, ssm) - (2.0 * ssm_scan(x, ssm) - 3.0 * ssm_scan(y, ssm))))
    return "ssm_scan causal and linear", bool(causal and lin <= 1e-6), f"linearity error {lin:.2e}"


def check_scan_stability():
    ssm, _, _ = random_params(2, 4, seed=3)
    impulse = np.zeros((40, 2))
    impulse[0] = 1.0
    a_bar, b_bar = ssm.discretize()
    # per-state impulse responses b_bar * a_bar**t decay monotonically
    t = np.arange(40)[:, None, None]
    resp = np.abs(b_bar[None] * a_bar[None] ** t)
    ok = bool(np.all(np.diff(resp, axis=0) <= 1e-15))
    ok &= bool(np.all(np.isfinite(ssm_scan(impulse, ssm))))
    return "ssm impulse response non-increasing", ok, ""


def check_attention_rows():
    rng = np.random.default_rng(4)
    _, attn, _ = random_params(3, seed=4, shift=(1, 2, 3))
    _, weights = window_attention(rng.normal(size=(3, 6, 5, 7)), attn, return_weights=True)
    err = float(np.max(np.abs(weights.sum(axis=-1) - 1.0)))
    return "attention rows sum to 1 (<= 1e-6)", err <= 1e-6, f"max deviation {err:.2e}"


def check_attention_locality():
    rng = np.random.default_rng(5)
    _, attn, _ = random_params(2, seed=5)
    z = rng.normal(size=(2, 8, 8, 8))
    masked = np.zeros_like(z)
    masked[:, :4, :4, :4] = z[:, :4, :4, :4]
    a = window_attention(z, attn).data[:, :4, :4, :4]
    b = window_attention(masked, attn).data[:, :4, :4, :4]
    return "zero-shift window locality", bool(np.array_equal(a, b)), ""


def check_shift_connectivity():
    rng = np.random.default_rng(6)
    c = 2
    mats = [rng.uniform(-0.5, 0.5, (c, c)) for _ in range(3)]
    z = rng.normal(size=(c, 8, 8, 8))
    bumped = z.copy()
    bumped[:, 4, 0, 0] += 1.0
    plain = AttnParams(*mats, window=(4, 4, 4), shift=(0, 0, 0))
    shifted = AttnParams(*mats, window=(4, 4, 4), shift=(2, 2, 2))
    before = np.array_equal(window_attention(z, plain).data[:, 3, 0, 0],
                            window_attention(bumped, plain).data[:, 3, 0, 0])
    after = not np.array_equal(window_attention(z, shifted).data[:, 3, 0, 0],
                               window_attention(bumped, shifted).data[:, 3, 0, 0])
    return "shifted windows connect neighbouring windows", bool(before and after), ""


def check_attention_oracle():
    rng = np.random.default_rng(7)
    _, attn, _ = random_params(2, seed=7, window=(2, 3, 2), shift=(1, 1, 0))
    z = rng.normal(size=(2, 5, 4, 3))
    err = float(np.max(np.abs(window_attention(z, attn).data - naive_window_attention(z, attn))))
    return "window_attention matches per-query loops (<= 1e-10)", err <= 1e-10, f"max error {err:.2e}"


def check_gate():
    rng = np.random.default_rng(8)
    _, _, gate = random_params(3, seed=8)
    a, b = rng.normal(size=(2, 3, 4, 4, 4)) * 3
    out = gate_fuse(a, b, gate).data
    g = gate_values(a, b, gate)
    bounded = bool(np.all(out >= np.minimum(a, b)) and np.all(out <= np.maximum(a, b)))
    strict = bool(np.all((g > 0) & (g < 1)))
    err = float(np.max(np.abs(out - naive_gate(a, b, gate))))
    half = GateParams(np.zeros((3, 6)), np.zeros(3))
    mean_ok = np.allclose(gate_fuse(a, b, half).data, (a + b) / 2, atol=1e-15)
    ok = bounded and strict and err <= 1e-10 and mean_ok
    return "gate fusion bounded by branch min/max", bool(ok), f"oracle error {err:.2e}"


def check_forward_oracle():
    rng = np.random.default_rng(9)
    ssm, attn, gate = random_params(2, 3, seed=9, shift=(2, 2, 2))
    z = rng.normal(size=(2, 4, 4, 4))
    err = float(np.max(np.abs(msl_forward(z, ssm, attn, gate).data - naive_forward(z, ssm, attn, gate))))
    return "msl_forward matches straight-line reimplementation (<= 1e-8)", err <= 1e-8, f"max error {err:.2e}"


CHECKS = (check_serialize_order, check_scan_oracle, check_scan_causal_linear, check_scan_stability,
          check_attention_rows, check_attention_locality, check_shift_connectivity,
          check_attention_oracle, check_gate, check_forward_oracle)


def run_checks():
    """Run every property; returns a list of ``(name, passed, detail, seconds)``."""
    results = []
    for check in CHECKS:
        start = time.perf_counter()
        name, passed, detail = check()
        results.append((name, passed, detail, time.perf_counter() - start))
    return results
