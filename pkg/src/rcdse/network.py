"""Residual MLP shared across time-frequency bins, standing in for the spectral backbone.

Every bin of the state spectrogram is one row. Its features are the real and
imaginary parts of a ``(2 rf + 1) x (2 rt + 1)`` neighbourhood of the state x
and of the conditioning y (zero-padded at the edges) plus a sinusoidal
embedding of the bin's frequency; a sinusoidal embedding of t enters the
first layer through its own weight matrix::

    h0 = act(feat @ W_in + emb(t) @ W_t + b_in)
    h_l = h_{l-1} + act(h_{l-1} @ W_l + b_l)          l = 1..n_layers
    out = h_L @ W_out + feat @ W_skip + b_out          (Re, Im) of the bin

Items never interact, so outputs are independent of batch order.

Gradients with respect to a complex output are packed as
``dL/dRe + 1j * dL/dIm`` throughout the package.
"""
import hashlib
import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .errors import (ArgumentError, CheckpointError, MissingFileError, NumericalError,
                     StaleCacheError)


@dataclass(frozen=True)
class NetworkSpec:
    n_freq: int = 257
    hidden_dim: int = 32
    n_layers: int = 2
    time_embed_dim: int = 16
    activation: str = "silu"
    freq_radius: int = 1
    time_radius: int = 1
    freq_embed_dim: int = 4

    def __post_init__(self):
        for name in ("n_freq", "hidden_dim", "time_embed_dim"):
            if getattr(self, name) < 1:
                raise ArgumentError(f"{name} must be >= 1")
        for name in ("n_layers", "freq_radius", "time_radius", "freq_embed_dim"):
            if getattr(self, name) < 0:
                raise ArgumentError(f"{name} must be >= 0")
        if self.time_embed_dim % 2 or self.freq_embed_dim % 2:
            raise ArgumentError("embedding sizes must be even")
        if self.activation not in _ACTIVATIONS:
            raise ArgumentError(f"unknown activation {self.activation!r}")

    @property
    def patch_size(self):
        return (2 * self.freq_radius + 1) * (2 * self.time_radius + 1)

    @property
    def local_dim(self):
        """Per-bin features: x and y patches (re, im) plus the frequency embedding."""
        return 4 * self.patch_size + self.freq_embed_dim

    @property
    def input_dim(self):
        return self.local_dim + self.time_embed_dim

    @property
    def output_dim(self):
        return 2

    def layer_shapes(self):
        h = self.hidden_dim
        shapes = [("w_in", (self.local_dim, h)), ("w_t", (self.time_embed_dim, h)), ("b_in", (h,))]
        for i in range(self.n_layers):
            shapes += [(f"w_{i}", (h, h)), (f"b_{i}", (h,))]
        shapes += [("w_out", (h, 2)), ("w_skip", (self.local_dim, 2)), ("b_out", (2,))]
        return shapes

    def to_dict(self):
        return asdict(self)


def _silu(z):
    s = np.tanh(0.5 * z)
    s += 1.0
    s *= 0.5
    a = z * s
    # d/dz z s(z) = s + z s (1 - s) = s + a (1 - s)
    da = 1.0 - s
    da *= a
    da += s
    return a, da


def _tanh(z):
    a = np.tanh(z)
    return a, 1.0 - a * a


def _relu(z):
    mask = z > 0
    return np.where(mask, z, 0.0), mask.astype(np.float64)


# each maps pre-activations to (activation, derivative)
_ACTIVATIONS = {"silu": _silu, "tanh": _tanh, "relu": _relu}


def time_embedding(t, dim):
    """Sinusoidal embedding of t in [0, 1]; shape ``t.shape + (dim,)``."""
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    arg = 1000.0 * np.asarray(t, dtype=np.float64)[..., None] * freqs
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=-1)


def freq_embedding(n_freq, dim):
    pos = np.arange(n_freq) / max(n_freq - 1, 1)
    k = np.arange(1, dim // 2 + 1)
    arg = np.pi * pos[:, None] * k
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


def patch_features(x, y, spec):
    """``(B, F, L, local_dim)`` per-bin feature tensor."""
    b, f, n = x.shape
    rf, rt = spec.freq_radius, spec.time_radius
    p = spec.patch_size
    feat = np.empty((b, f, n, spec.local_dim))
    for slot, src in enumerate((x, y)):
        padded = np.pad(src, ((0, 0), (rf, rf), (rt, rt)))
        j = 0
        for df in range(2 * rf + 1):
            for dl in range(2 * rt + 1):
                win = padded[:, df : df + f, dl : dl + n]
                feat[..., 2 * slot * p + j] = win.real
                feat[..., (2 * slot + 1) * p + j] = win.imag
                j += 1
    feat[..., 4 * p :] = freq_embedding(f, spec.freq_embed_dim)[None, :, None, :]
    return feat


class Params:
    """Flat parameter vector with named per-layer views.

    ``version`` increments on every in-place change, which lets backward
    detect activations cached against an older state.
    """

    def __init__(self, theta, shapes):
        self.shapes = list(shapes)
        total = sum(int(np.prod(s)) for _, s in self.shapes)
        theta = np.ascontiguousarray(theta, dtype=np.float64)
        if theta.shape != (total,):
            raise ArgumentError(f"theta has {theta.size} entries, layers need {total}")
        if not np.all(np.isfinite(theta)):
            raise NumericalError("non-finite parameter")
        self.theta = theta
        self.version = 0

    def views(self):
        out = {}
        i = 0
        for name, shape in self.shapes:
            n = int(np.prod(shape))
            out[name] = self.theta[i : i + n].reshape(shape)
            i += n
        return out

    def assign(self, theta):
        self.theta[:] = theta
        self.version += 1

    def add_(self, delta):
        self.theta += delta
        self.version += 1

    def copy(self):
        return Params(self.theta.copy(), self.shapes)

    def checksum(self):
        return hashlib.sha256(self.theta.astype("<f8").tobytes()).hexdigest()


class Network:
    """F(x, y, t) over complex spectrograms shaped ``(F, L)`` or ``(B, F, L)``."""

    def __init__(self, spec, params=None):
        self.spec = spec
        if params is None:
            params = Params(np.zeros(sum(int(np.prod(s)) for _, s in spec.layer_shapes())),
                            spec.layer_shapes())
        self.params = params

    @classmethod
    def init(cls, spec, rng, out_scale=0.1):
        """Gaussian fan-in initialization; output-side weights are scaled by ``out_scale``."""
        net = cls(spec)
        for name, arr in net.params.views().items():
            if name.startswith("w"):
                std = 1.0 / np.sqrt(arr.shape[0])
                if name in ("w_out", "w_skip"):
                    std *= out_scale
                arr[...] = std * rng.normal(arr.size).reshape(arr.shape)
        return net

    @property
    def n_params(self):
        return self.params.theta.size

    def copy(self):
        return Network(self.spec, self.params.copy())

    def _prepare(self, x, y, t):
        x = np.asarray(x, dtype=np.complex128)
        y = np.asarray(y, dtype=np.complex128)
        if x.shape != y.shape:
            raise ArgumentError(f"shape mismatch: x{x.shape} vs y{y.shape}")
        squeeze = x.ndim == 2
        if squeeze:
            x, y = x[None], y[None]
        if x.ndim != 3 or x.shape[1] != self.spec.n_freq:
            raise ArgumentError(f"expected (B, {self.spec.n_freq}, L) spectrograms, got {x.shape}")
        b = x.shape[0]
        t = np.asarray(t, dtype=np.float64)
        t_items = np.broadcast_to(t, (b,)) if t.ndim == 0 else t
        if t_items.shape != (b,):
            raise ArgumentError(f"need one time per item, got {t.shape} for batch {b}")
        return x, y, t_items, squeeze

    def forward(self, x, y, t):
        """Return ``(output, cache)``; cache feeds :meth:`backward`."""
        x, y, t_items, squeeze = self._prepare(x, y, t)
        b, f, n = x.shape
        act = _ACTIVATIONS[self.spec.activation]
        p = self.params.views()
        feat = patch_features(x, y, self.spec).reshape(b * f * n, -1)
        temb = time_embedding(t_items, self.spec.time_embed_dim)
        pre = (feat @ p["w_in"]).reshape(b, f * n, -1)
        pre += (temb @ p["w_t"] + p["b_in"])[:, None, :]
        pre = pre.reshape(b * f * n, -1)
        h, da = act(pre)
        dacts, hs = [da], [feat, h]
        for i in range(self.spec.n_layers):
            a, da = act(h @ p[f"w_{i}"] + p[f"b_{i}"])
            h = h + a
            dacts.append(da)
            hs.append(h)
        out = h @ p["w_out"] + feat @ p["w_skip"] + p["b_out"]
        if not np.all(np.isfinite(out)):
            names = ["input"] + [f"residual_{i}" for i in range(self.spec.n_layers)]
            bad = next((nm for nm, a in zip(names, hs[1:]) if not np.all(np.isfinite(a))), "output")
            raise NumericalError(f"non-finite activations in layer {bad}")
        out = out.reshape(b, f, n, 2)
        cplx = out[..., 0] + 1j * out[..., 1]
        if squeeze:
            cplx = cplx[0]
        cache = {"version": self.params.version, "params": self.params, "temb": temb,
                 "dacts": dacts, "hs": hs, "layout": (b, f, n, squeeze)}
        return cplx, cache

    def apply(self, x, y, t):
        return self.forward(x, y, t)[0]

    __call__ = apply

    def backward(self, grad_out, cache):
        """dLoss/dtheta given the packed complex dLoss/dOutput."""
        if cache is None or cache["params"] is not self.params or cache["version"] != self.params.version:
            raise StaleCacheError("activation cache does not match the current parameters")
        b, f, n, squeeze = cache["layout"]
        g = np.asarray(grad_out, dtype=np.complex128)
        if squeeze:
            g = g[None]
        dout = np.stack([g.real, g.imag], axis=-1).reshape(b * f * n, 2)
        p = self.params.views()
        grad = np.zeros_like(self.params.theta)
        gv = Params(grad, self.params.shapes).views()
        hs, dacts = cache["hs"], cache["dacts"]
        gv["w_out"][...] = hs[-1].T @ dout
        gv["w_skip"][...] = hs[0].T @ dout
        gv["b_out"][...] = dout.sum(axis=0)
        dh = dout @ p["w_out"].T
        for i in reversed(range(self.spec.n_layers)):
            dz = dh * dacts[i + 1]
            gv[f"w_{i}"][...] = hs[i + 1].T @ dz
            gv[f"b_{i}"][...] = dz.sum(axis=0)
            dh = dh + dz @ p[f"w_{i}"].T
        dz = dh * dacts[0]
        gv["w_in"][...] = hs[0].T @ dz
        per_item = dz.reshape(b, f * n, -1).sum(axis=1)
        gv["w_t"][...] = cache["temb"].T @ per_item
        gv["b_in"][...] = per_item.sum(axis=0)
        return grad


@dataclass
class EmaShadow:
    theta_minus: np.ndarray
    decay: float

    @classmethod
    def of(cls, params, decay):
        return cls(params.theta.copy(), decay)


def ema_update(shadow, params, decay=None):
    """Return a new shadow ``decay * theta_minus + (1 - decay) * theta``."""
    mu = shadow.decay if decay is None else decay
    theta = params.theta if isinstance(params, Params) else np.asarray(params)
    if theta.shape != shadow.theta_minus.shape:
        raise ArgumentError("EMA shadow and parameters differ in length")
    # interpolation form: exact no-op when theta equals theta_minus
    return EmaShadow(shadow.theta_minus + (1.0 - mu) * (theta - shadow.theta_minus), shadow.decay)


# Checkpoint container:
#   MAGIC (8 bytes) | header length (uint32 LE) | header JSON (utf-8)
#   | payload: n_params float64 LE | sha256(header + payload) (32 bytes)
MAGIC = b"RCDSECK1"


def save_checkpoint(path, net, kind="model", meta=None):
    header = json.dumps(
        {"kind": kind, "spec": net.spec.to_dict(), "n_params": net.n_params,
         "shapes": [[n, list(s)] for n, s in net.params.shapes], "meta": meta or {}},
        sort_keys=True,
    ).encode()
    payload = net.params.theta.astype("<f8").tobytes()
    digest = hashlib.sha256(header + payload).digest()
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<I", len(header)) + header + payload + digest)


def load_checkpoint(path, expect_kind=None):
    """Return ``(network, header)``; raises :class:`CheckpointError` on any mismatch."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except FileNotFoundError as exc:
        raise MissingFileError(f"{path}: no such checkpoint") from exc
    if blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint")
    try:
        (hlen,) = struct.unpack("<I", blob[8:12])
        header_bytes = blob[12 : 12 + hlen]
        header = json.loads(header_bytes)
        n = int(header["n_params"])
        payload = blob[12 + hlen : 12 + hlen + 8 * n]
        digest = blob[12 + hlen + 8 * n :]
        spec = NetworkSpec(**header["spec"])
    except (struct.error, ValueError, KeyError, TypeError, ArgumentError) as exc:
        raise CheckpointError(f"{path}: malformed header ({exc})") from exc
    if len(payload) != 8 * n or hashlib.sha256(header_bytes + payload).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch")
    if expect_kind is not None and header["kind"] != expect_kind:
        raise CheckpointError(f"{path}: expected a {expect_kind} checkpoint, got {header['kind']}")
    theta = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    return Network(spec, Params(theta, spec.layer_shapes())), header
