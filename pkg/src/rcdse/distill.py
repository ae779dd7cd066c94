"""Teacher training and robust consistency distillation.

Random stream layout (so runs with RCD on and off see identical draws for
everything except the injected noise): step ``s`` of a run seeded ``seed``
uses ``Rng(seed).spawn(STREAM_TRAIN).spawn(s)`` and, from that, child 0 for
batch selection and crops, child 1 for the time index n, child 2 for the
perturbation z, child 3 for the injected noise eps. The noise is drawn even
when RCD is disabled.
"""
import contextlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import losses, precond, sde, solvers
from .errors import ArgumentError, NumericalError, TrainingError
from .losses import LossWeights
from .network import EmaShadow, Network, NetworkSpec, Params, ema_update
from .numerics import Rng, complex_gaussian_like
from .signal import (StftConfig, Waveform, istft, istft_adjoint, read_manifest, stft, synth_pair,
                     wav_read)

log = logging.getLogger(__name__)

STREAM_INIT, STREAM_TRAIN, STREAM_VAL = 1, 2, 3
VALIDATION_METRICS = ("si_sdr", "proxy", "joint")


# ---------------------------------------------------------------- data

@dataclass
class PairSet:
    """Clean/noisy waveform pairs and their spectrograms, gain-normalized.

    Each pair is scaled by ``norm_rms / rms(noisy)``; ``gains`` keeps the
    factors so enhanced audio can be returned at the input level.
    """

    clean: np.ndarray
    noisy: np.ndarray
    stft_cfg: StftConfig
    gains: np.ndarray
    ids: list = field(default_factory=list)
    sample_rate: int = 16000

    def __post_init__(self):
        self.x0 = stft(self.clean, self.stft_cfg)
        self.y = stft(self.noisy, self.stft_cfg)

    @classmethod
    def from_waveforms(cls, pairs, stft_cfg, norm_rms=0.05, ids=None):
        if not pairs:
            raise ArgumentError("empty dataset")
        n = min(len(c.samples) for c, _ in pairs)
        clean = np.stack([c.samples[:n] for c, _ in pairs])
        noisy = np.stack([y.samples[:n] for _, y in pairs])
        gains = norm_rms / np.sqrt(np.mean(noisy ** 2, axis=1))
        ids = list(ids) if ids is not None else [str(i) for i in range(len(pairs))]
        return cls(clean * gains[:, None], noisy * gains[:, None], stft_cfg, gains, ids,
                   pairs[0][0].sample_rate)

    @classmethod
    def synthetic(cls, specs, stft_cfg, norm_rms=0.05):
        pairs = [synth_pair(m) for m in specs]
        return cls.from_waveforms(pairs, stft_cfg, norm_rms, ids=[f"mix{i:04d}" for i in range(len(specs))])

    @classmethod
    def from_manifest(cls, path, stft_cfg, norm_rms=0.05, require_clean=True):
        """Load the WAV pairs indexed by a manifest; without clean files the noisy
        signal stands in for the reference (metrics are then meaningless)."""
        rows = read_manifest(path)
        if not rows:
            raise ArgumentError(f"{path}: manifest lists no files")
        pairs = []
        for row in rows:
            noisy = wav_read(row["noisy"])
            if row.get("clean"):
                clean = wav_read(row["clean"])
            elif require_clean:
                raise ArgumentError(f"{path}: item {row['id']} has no clean reference")
            else:
                clean = noisy
            pairs.append((clean, noisy))
        return cls.from_waveforms(pairs, stft_cfg, norm_rms, ids=[r["id"] for r in rows])

    def __len__(self):
        return self.clean.shape[0]

    @property
    def n_samples(self):
        return self.clean.shape[1]

    @property
    def n_frames(self):
        return self.x0.shape[-1]

    def subset(self, idx):
        idx = list(idx)
        out = PairSet.__new__(PairSet)
        out.clean, out.noisy = self.clean[idx], self.noisy[idx]
        out.stft_cfg, out.gains = self.stft_cfg, self.gains[idx]
        out.ids = [self.ids[i] for i in idx]
        out.sample_rate = self.sample_rate
        out.x0, out.y = self.x0[idx], self.y[idx]
        return out

    def seconds(self):
        return len(self) * self.n_samples / self.sample_rate


def crop_batch(data, idx, crop_frames, rng):
    """Random ``crop_frames``-long spectrogram segments for the items ``idx``."""
    n_frames = data.n_frames
    if crop_frames is None or crop_frames >= n_frames:
        return data.x0[idx], data.y[idx]
    starts = rng.integers(0, n_frames - crop_frames, len(idx))
    cols = starts[:, None] + np.arange(crop_frames)
    rows = np.asarray(idx)[:, None]
    x0 = data.x0[rows, :, cols].transpose(0, 2, 1)
    y = data.y[rows, :, cols].transpose(0, 2, 1)
    return x0, y


def _batches(n_items, batch_size, rng):
    order = np.argsort(rng.uniform(n_items), kind="stable")
    return [order[i : i + batch_size] for i in range(0, n_items, batch_size)]


# ---------------------------------------------------------------- optimizer

class Adam:
    def __init__(self, n_params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, params, grad):
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        params.add_(-self.lr * m_hat / (np.sqrt(v_hat) + self.eps))


# ---------------------------------------------------------------- configs

@dataclass(frozen=True)
class TeacherConfig:
    lr: float = 1e-3
    epochs: int = 200
    batch_size: int = 32
    crop_frames: int = 32
    sigma_data: float = 0.5
    seed: int = 0
    validate_every: int = 10

    def __post_init__(self):
        if not self.lr > 0:
            raise ArgumentError("lr must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ArgumentError("epochs must be >= 0 and batch_size >= 1")


@dataclass(frozen=True)
class DistillConfig:
    n_grid: int = 30
    solver: str = solvers.HEUN
    rcd_enabled: bool = True
    weights: LossWeights = LossWeights()
    lr: float = 1e-4
    ema_decay: float = 0.9999
    epochs: int = 100
    batch_size: int = 32
    crop_frames: int = 32
    sigma_data: float = 0.5
    seed: int = 0
    validation_metric: str = "si_sdr"
    validate_every: int = 10
    proxy: losses.ProxyConfig = losses.ProxyConfig()

    def __post_init__(self):
        if not self.lr > 0:
            raise ArgumentError("lr must be positive")
        if not 0 <= self.ema_decay < 1:
            raise ArgumentError("ema_decay must lie in [0, 1)")
        if self.n_grid < 2:
            raise ArgumentError("n_grid must be >= 2")
        if self.solver not in solvers.SOLVERS:
            raise ArgumentError(f"unknown solver {self.solver!r}")
        if self.validation_metric not in VALIDATION_METRICS:
            raise ArgumentError(f"unknown validation metric {self.validation_metric!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ArgumentError("epochs must be >= 0 and batch_size >= 1")

    @property
    def mode(self):
        w = self.weights
        if w.cd_weight == 0:
            return "loss-only"
        if not self.rcd_enabled and w.lambda1 == 0 and w.lambda2 == 0:
            return "vanilla-CD"
        return "RCD" if self.rcd_enabled else "CD"

    def to_dict(self):
        d = asdict(self)
        d["proxy"]["resolutions"] = [list(r) for r in self.proxy.resolutions]
        return d


# ---------------------------------------------------------------- teacher

def _check_finite(value, step):
    if not math.isfinite(value):
        raise TrainingError("non-finite training loss", step=step)


@contextlib.contextmanager
def _diverged_at(step):
    # non-finite activations during training are a divergence of the run
    try:
        yield
    except NumericalError as exc:
        raise TrainingError(f"diverged: {exc}", step=step) from exc


def teacher_validation_loss(net, val, fns, seed, t_points=8):
    """Denoising loss averaged over a fixed t grid and fixed noise draws."""
    rng = Rng(seed).spawn(STREAM_VAL)
    ts = np.linspace(fns.sde.t_min, fns.sde.t_max, t_points)
    total = 0.0
    for t in ts:
        t_items = np.full(len(val), t)
        z = complex_gaussian_like(rng, val.x0.shape)
        xt = sde.sample_perturbed(val.x0, val.y, t_items, fns.sde, rng, z=z)
        d = precond.denoiser_forward(net, xt, val.y, t_items, fns) - sde.kernel_mean(
            val.x0, val.y, t_items, fns.sde)
        total += float(np.sum(d.real ** 2 + d.imag ** 2)) / len(val)
    return total / t_points


def train_teacher(data, spec, sde_params, config, val=None, log_sink=None, init=None):
    """Fit a denoiser-parameterized network with the denoising loss.

    Returns ``(best_network, records)``; selection uses the validation
    denoising loss (``val`` defaults to the training pairs).
    """
    val = data if val is None else val
    fns = precond.denoiser_fns(sde_params, config.sigma_data)
    root = Rng(config.seed)
    net = init.copy() if init is not None else Network.init(spec, root.spawn(STREAM_INIT))
    opt = Adam(net.n_params, config.lr)
    train_rng = root.spawn(STREAM_TRAIN)
    with _diverged_at(0):
        best = (teacher_validation_loss(net, val, fns, config.seed), net.params.theta.copy(), 0)
    records = [{"kind": "teacher", "epoch": 0, "step": 0, "val_loss": best[0]}]
    _emit(log_sink, records[-1])
    step = 0
    t0 = time.perf_counter()
    for epoch in range(1, config.epochs + 1):
        ep_rng = train_rng.spawn(epoch)
        losses_ep = []
        for idx in _batches(len(data), config.batch_size, ep_rng.spawn(0)):
            step += 1
            srng = ep_rng.spawn(step)
            x0, y = crop_batch(data, idx, config.crop_frames, srng.spawn(0))
            t = sde_params.t_min + (sde_params.t_max - sde_params.t_min) * srng.spawn(1).uniform(len(idx))
            with _diverged_at(step):
                loss, grad = losses.denoising_loss(net, x0, y, t, srng.spawn(2), fns)
            _check_finite(loss, step)
            opt.step(net.params, grad)
            losses_ep.append(loss)
        if epoch % config.validate_every == 0 or epoch == config.epochs:
            with _diverged_at(step):
                vl = teacher_validation_loss(net, val, fns, config.seed)
            rec = {"kind": "teacher", "epoch": epoch, "step": step,
                   "loss": float(np.mean(losses_ep)), "val_loss": vl,
                   "wall": time.perf_counter() - t0}
            records.append(rec)
            _emit(log_sink, rec)
            if vl < best[0]:
                best = (vl, net.params.theta.copy(), epoch)
    out = Network(spec, Params(best[1], spec.layer_shapes()))
    return out, records


# ---------------------------------------------------------------- distillation

@dataclass
class TrainState:
    student: Network
    ema: EmaShadow
    teacher: Network
    optimizer: Adam
    sde: sde.SdeParams
    grid: solvers.TimeGrid
    stft_cfg: StftConfig
    seed: int
    step: int = 0
    best: dict = field(default_factory=dict)

    @property
    def target(self):
        return Network(self.student.spec, Params(self.ema.theta_minus, self.student.params.shapes))


def init_state(teacher, sde_params, stft_cfg, config):
    """Student and EMA target both start from the teacher weights."""
    student = teacher.copy()
    return TrainState(
        student=student,
        ema=EmaShadow.of(student.params, config.ema_decay),
        teacher=teacher,
        optimizer=Adam(student.n_params, config.lr),
        sde=sde_params,
        grid=solvers.TimeGrid.for_sde(sde_params, config.n_grid),
        stft_cfg=stft_cfg,
        seed=config.seed,
    )


def step_streams(seed, step):
    """The four child streams of training step ``step`` (see module docstring)."""
    base = Rng(seed).spawn(STREAM_TRAIN).spawn(step)
    return [base.spawn(i) for i in range(4)]


def rcd_terms(state, x0, y, config, streams):
    """Losses and the student parameter gradient for one batch.

    Returns a dict with ``loss`` (joint), ``rcd``, ``proxy``, ``sisdr`` and
    ``grad``. The target branch is evaluated without a cache, so no gradient
    can reach the EMA parameters.
    """
    _, rn, rz, re = streams
    sp = state.sde
    b = x0.shape[0]
    dfns = precond.denoiser_fns(sp, config.sigma_data)
    cfns = precond.consistency_fns(sp, config.sigma_data)
    n = rn.integers(2, config.n_grid, b)
    t_n, t_prev = state.grid[n], state.grid[n - 1]
    z = complex_gaussian_like(rz, x0.shape)
    x_tn = sde.sample_perturbed(x0, y, t_n, sp, None, z=z)
    score = solvers.teacher_score(state.teacher, dfns)
    x_hat = solvers.ode_step(x_tn, y, t_n, t_prev, score, config.solver, sp)
    eps = complex_gaussian_like(re, x0.shape)
    if config.rcd_enabled:
        x_hat = x_hat + sde.expand_t(solvers.injected_noise_std(t_n, t_prev, sp), x_hat.ndim) * eps
    target = precond.consistency_forward(state.target, x_hat, y, t_prev, cfns)
    pred, cache = precond.wrapped_forward(state.student, x_tn, y, t_n, cfns)
    l_rcd = losses.cd_distance(pred, target)
    w = config.weights
    g = w.cd_weight * losses.cd_distance_grad(pred, target)
    l_proxy = l_sisdr = 0.0
    if w.lambda1 > 0 or w.lambda2 > 0:
        wav_pred = istft(pred, state.stft_cfg)
        wav_ref = istft(x0, state.stft_cfg)
        g_wave = np.zeros_like(wav_pred)
        if w.lambda1 > 0:
            l_proxy, gp = losses.perceptual_proxy_loss(wav_pred, wav_ref, config.proxy)
            g_wave += w.lambda1 * gp
        if w.lambda2 > 0:
            l_sisdr, gs = losses.si_sdr_loss_grad(wav_pred, wav_ref)
            g_wave += w.lambda2 * gs
        g = g + istft_adjoint(g_wave, state.stft_cfg, pred.shape[-1])
    total = losses.joint_loss(l_rcd, l_proxy, l_sisdr, w)
    grad = precond.wrapped_backward(state.student, g, cache)
    return {"loss": total, "rcd": l_rcd, "proxy": l_proxy, "sisdr": l_sisdr, "grad": grad}


def rcd_step(state, batch, config, streams=None):
    """One Algorithm-1 update: gradient step on the student, then the EMA update."""
    state.step += 1
    if streams is None:
        streams = step_streams(state.seed, state.step)
    x0, y = batch
    with _diverged_at(state.step):
        terms = rcd_terms(state, x0, y, config, streams)
    _check_finite(terms["loss"], state.step)
    state.optimizer.step(state.student.params, terms.pop("grad"))
    state.ema = ema_update(state.ema, state.student.params, config.ema_decay)
    return state, terms


def validation_score(student, val, sde_params, stft_cfg, config, seed):
    """Higher is better. One-step enhancement of every validation pair."""
    cfns = precond.consistency_fns(sde_params, config.sigma_data)
    rng = Rng(seed).spawn(STREAM_VAL)
    est = solvers.one_step_enhance(student, val.y, cfns, rng)
    wav = istft(est, stft_cfg, val.n_samples)
    if config.validation_metric == "si_sdr":
        return float(np.mean(losses.si_sdr(wav, val.clean)))
    proxy, _ = losses.perceptual_proxy_loss(wav, val.clean, config.proxy)
    if config.validation_metric == "proxy":
        return -proxy
    sisdr = float(np.mean(losses.si_sdr(wav, val.clean)))
    return -(config.weights.lambda1 * proxy - config.weights.lambda2 * sisdr)


def distill(teacher, data, sde_params, config, val=None, log_sink=None, on_step=None):
    """Run RCD for ``config.epochs`` epochs; returns ``(best_student, state, records)``.

    The teacher is never modified. The best student is selected on the
    validation metric (``val`` defaults to the training pairs).
    """
    val = data if val is None else val
    state = init_state(teacher, sde_params, data.stft_cfg, config)
    teacher_sum = teacher.params.checksum()
    with _diverged_at(0):
        score = validation_score(state.student, val, sde_params, data.stft_cfg, config, config.seed)
    state.best = {"score": score, "epoch": 0, "theta": state.student.params.theta.copy()}
    records = [{"kind": "distill", "mode": config.mode, "epoch": 0, "step": 0,
                "val_" + config.validation_metric: score}]
    _emit(log_sink, records[-1])
    t0 = time.perf_counter()
    for epoch in range(1, config.epochs + 1):
        order_rng = Rng(config.seed).spawn(STREAM_TRAIN).spawn(-epoch)
        acc = {"loss": [], "rcd": [], "proxy": [], "sisdr": []}
        for idx in _batches(len(data), config.batch_size, order_rng):
            streams = step_streams(config.seed, state.step + 1)
            batch = crop_batch(data, idx, config.crop_frames, streams[0])
            state, terms = rcd_step(state, batch, config, streams)
            for k in acc:
                acc[k].append(terms[k])
            if on_step is not None:
                on_step(state, terms)
        if epoch % config.validate_every == 0 or epoch == config.epochs:
            with _diverged_at(state.step):
                score = validation_score(state.student, val, sde_params, data.stft_cfg, config, config.seed)
            rec = {"kind": "distill", "mode": config.mode, "epoch": epoch, "step": state.step,
                   **{k: float(np.mean(v)) for k, v in acc.items()},
                   "val_" + config.validation_metric: score, "wall": time.perf_counter() - t0}
            records.append(rec)
            _emit(log_sink, rec)
            if score > state.best["score"]:
                state.best = {"score": score, "epoch": epoch,
                              "theta": state.student.params.theta.copy()}
    if teacher.params.checksum() != teacher_sum:
        raise TrainingError("teacher parameters changed during distillation")
    spec = state.student.spec
    best = Network(spec, Params(state.best["theta"], spec.layer_shapes()))
    return best, state, records


def _emit(sink, record):
    if sink is None:
        return
    if callable(sink):
        sink(record)
    else:
        sink.write(json.dumps(record, sort_keys=True) + "\n")
        sink.flush()
