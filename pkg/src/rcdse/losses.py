"""Training objectives and their exact gradients.

Spectrogram-domain losses accept a single item ``(F, L)`` with a scalar t, or
a batch ``(B, F, L)`` with per-item times; batch losses are the mean of the
per-item values. Gradients are returned with respect to network parameters
(``score_matching_loss``, ``denoising_loss``) or to the estimate waveform.
"""
import math
import subprocess
from dataclasses import asdict, dataclass

import numpy as np

from . import precond, sde
from .errors import ArgumentError
from .numerics import complex_gaussian_like
from .signal import StftConfig, stft, stft_adjoint

SI_SDR_CAP = 100.0


@dataclass(frozen=True)
class LossWeights:
    """Weights of the joint objective; ``cd_weight`` = 0 gives the loss-only ablations."""

    lambda1: float = 5e-4
    lambda2: float = 5e-5
    cd_weight: float = 1.0

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "cd_weight"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ArgumentError(f"{name} must be finite and >= 0, got {v}")


def unit_weight(t):
    return np.ones_like(np.asarray(t, dtype=np.float64))


def _per_item_sq(a):
    a = np.asarray(a)
    if a.ndim <= 2:
        return np.sum(a.real ** 2 + a.imag ** 2)
    return np.sum(a.real ** 2 + a.imag ** 2, axis=tuple(range(1, a.ndim)))


def _n_items(x):
    return 1 if np.ndim(x) <= 2 else np.shape(x)[0]


def score_residual_loss(score, z, t, params, weight_fn=unit_weight):
    """Per-item ``lambda(t) |score + z / sigma(t)|^2`` for a given score estimate."""
    sigma = sde.expand_t(sde.kernel_std(t, params), np.ndim(z))
    return weight_fn(t) * _per_item_sq(score + z / sigma)


def _perturb(x0, y, t, fns, rng, z):
    if z is None:
        z = complex_gaussian_like(rng, np.shape(x0))
    return sde.sample_perturbed(x0, y, t, fns.sde, rng, z=z), z


def score_matching_loss(net, x0, y, t, rng, fns, weight_fn=unit_weight, z=None):
    """Denoising score matching through the denoiser wrapper; returns ``(loss, grad)``."""
    if np.any(np.asarray(t) <= 0):
        raise ArgumentError("score matching is singular at t <= 0 (sigma = 0)")
    xt, z = _perturb(x0, y, t, fns, rng, z)
    denoised, cache = precond.wrapped_forward(net, xt, y, t, fns)
    var = sde.expand_t(sde.kernel_var(t, fns.sde), np.ndim(xt))
    score = (denoised - xt) / var
    sigma = np.sqrt(var)
    resid = score + z / sigma
    w = sde.expand_t(weight_fn(t), np.ndim(xt))
    b = _n_items(xt)
    loss = float(np.sum(w * (resid.real ** 2 + resid.imag ** 2)) / b)
    grad = precond.wrapped_backward(net, 2.0 * w * resid / var / b, cache)
    return loss, grad


def denoising_loss(net, x0, y, t, rng, fns, weight_fn=unit_weight, z=None):
    """``lambda(t) |D(x_t, y, t) - mean_t(x0, y)|^2``; returns ``(loss, grad)``."""
    xt, z = _perturb(x0, y, t, fns, rng, z)
    mean = sde.kernel_mean(x0, y, t, fns.sde)
    denoised, cache = precond.wrapped_forward(net, xt, y, t, fns)
    diff = denoised - mean
    w = sde.expand_t(weight_fn(t), np.ndim(xt))
    b = _n_items(xt)
    loss = float(np.sum(w * (diff.real ** 2 + diff.imag ** 2)) / b)
    grad = precond.wrapped_backward(net, 2.0 * w * diff / b, cache)
    return loss, grad


def cd_distance(a, b):
    """Mean over complex entries of ``|a - b|^2``.

    Averaging rather than summing keeps the distance on the scale of one bin,
    so the waveform-domain terms of the joint loss are not swamped by the
    spectrogram size.
    """
    d = np.asarray(a) - np.asarray(b)
    if d.size == 0:
        raise ArgumentError("empty input")
    return float(np.mean(d.real ** 2 + d.imag ** 2))


def cd_distance_grad(a, b):
    """Packed gradient of :func:`cd_distance` with respect to ``a``."""
    d = np.asarray(a) - np.asarray(b)
    return 2.0 * d / d.size


# ---------------------------------------------------------------- SI-SDR

def _si_sdr_parts(estimate, reference):
    est = np.asarray(estimate, dtype=np.float64)
    ref = np.asarray(reference, dtype=np.float64)
    if est.shape != ref.shape:
        raise ArgumentError(f"length mismatch: {est.shape} vs {ref.shape}")
    if est.shape[-1] < 2:
        raise ArgumentError("need at least two samples")
    ref_energy = np.sum(ref * ref, axis=-1, keepdims=True)
    if np.any(ref_energy == 0):
        raise ArgumentError("reference is all zeros")
    alpha = np.sum(est * ref, axis=-1, keepdims=True) / ref_energy
    proj = alpha * ref
    resid = est - proj
    return proj, resid


def si_sdr(estimate, reference):
    """Scale-invariant SDR in dB, clipped to +-100 dB."""
    proj, resid = _si_sdr_parts(estimate, reference)
    p = np.sum(proj * proj, axis=-1)
    r = np.sum(resid * resid, axis=-1)
    # ratio first: an exact rescaling of the estimate leaves p / r bit-identical
    with np.errstate(divide="ignore", invalid="ignore"):
        val = 10.0 * np.log10(p / r)
    val = np.clip(np.nan_to_num(val, nan=-SI_SDR_CAP), -SI_SDR_CAP, SI_SDR_CAP)
    return float(val) if np.ndim(val) == 0 else val


def si_sdr_loss_grad(estimate, reference):
    """``(-si_sdr, d(-si_sdr)/d estimate)``; the gradient is zero where the cap binds.

    For batched inputs the loss is the mean over items.
    """
    proj, resid = _si_sdr_parts(estimate, reference)
    p = np.sum(proj * proj, axis=-1, keepdims=True)
    r = np.sum(resid * resid, axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = 10.0 * np.log10(p / r)
        capped = ~(np.abs(raw) < SI_SDR_CAP)
        c = 10.0 / math.log(10.0)
        grad = -c * (2.0 * proj / p - 2.0 * resid / r)
    val = np.clip(np.nan_to_num(raw, nan=-SI_SDR_CAP), -SI_SDR_CAP, SI_SDR_CAP)
    grad = np.where(capped, 0.0, grad)
    n = 1 if proj.ndim == 1 else proj.shape[0]
    return float(-np.mean(val)), grad / n


# ---------------------------------------------------------------- perceptual proxy

@dataclass(frozen=True)
class ProxyConfig:
    """Multi-resolution log-magnitude distance standing in for a PESQ loss."""

    resolutions: tuple = ((512, 128), (256, 64), (1024, 256))
    eps: float = 1e-3

    def __post_init__(self):
        if len(self.resolutions) < 2:
            raise ArgumentError("proxy loss needs at least two resolutions")

    def stft_configs(self):
        return [StftConfig(w, h) for w, h in self.resolutions]

    def to_dict(self):
        return asdict(self)


def perceptual_proxy_loss(estimate, reference, cfg=ProxyConfig()):
    """``sum_r mean_bins |log(|S_r(est)| + eps) - log(|S_r(ref)| + eps)|`` and its gradient.

    For batched inputs the loss is the mean over items.
    """
    est = np.asarray(estimate, dtype=np.float64)
    ref = np.asarray(reference, dtype=np.float64)
    if est.shape != ref.shape:
        raise ArgumentError(f"length mismatch: {est.shape} vs {ref.shape}")
    n_items = 1 if est.ndim == 1 else est.shape[0]
    total = 0.0
    grad = np.zeros_like(est)
    for scfg in cfg.stft_configs():
        se = stft(est, scfg)
        sr = stft(ref, scfg)
        me = np.abs(se)
        diff = np.log(me + cfg.eps) - np.log(np.abs(sr) + cfg.eps)
        n_bins = se.shape[-2] * se.shape[-1]
        total += float(np.sum(np.abs(diff))) / n_bins
        unit = np.divide(se, me, out=np.zeros_like(se), where=me > 0)
        g_spec = np.sign(diff) / (me + cfg.eps) * unit / n_bins
        grad += stft_adjoint(g_spec, scfg, est.shape[-1])
    return total / n_items, grad / n_items


def joint_loss(rcd_term, proxy_term, sisdr_term, weights):
    """``L_rcd + lambda1 * L_proxy + lambda2 * L_sisdr`` (``L_rcd`` scaled by ``cd_weight``)."""
    rcd = rcd_term if weights.cd_weight == 1.0 else weights.cd_weight * rcd_term
    return rcd + weights.lambda1 * proxy_term + weights.lambda2 * sisdr_term


def external_pesq(reference_wav, estimate_wav, executable, timeout=60.0):
    """Score a pair of WAV files with a user-provided PESQ-like program.

    The program is called as ``executable reference.wav estimate.wav`` and the
    last whitespace-separated token of its stdout is parsed as the score.
    Evaluation only; never used for training.
    """
    if not executable:
        raise ArgumentError("no external PESQ executable configured")
    proc = subprocess.run(
        [executable, str(reference_wav), str(estimate_wav)],
        capture_output=True, text=True, timeout=timeout, check=True,
    )
    return float(proc.stdout.split()[-1])
