"""Real-time factor measurement and reference-based evaluation.

A *runner* is any callable ``runner(y, rng) -> estimate`` mapping noisy
spectrograms ``(B, F, L)`` to enhanced ones, optionally carrying ``steps`` and
``rhs_evals`` attributes for the RTF bookkeeping. :class:`TeacherRunner` and
:class:`StudentRunner` wrap the two samplers.

CSV columns written by :func:`write_metrics_csv`::

    id, si_sdr, si_sdr_noisy, si_sdri, proxy, spectral_mse, wall

followed by one ``mean`` and one ``std`` row. ``wall`` is empty when items
were evaluated in parallel.
"""
import csv
import hashlib
import math
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from . import losses, solvers
from .errors import ArgumentError
from .numerics import Rng
from .signal import istft

METRIC_FIELDS = ("si_sdr", "si_sdr_noisy", "si_sdri", "proxy", "spectral_mse")
CSV_FIELDS = ("id",) + METRIC_FIELDS + ("wall",)


@dataclass(frozen=True)
class RtfReport:
    audio_seconds: float
    wall_seconds: float
    rtf: float
    steps: int
    rhs_evals: int

    def __post_init__(self):
        if not self.rtf > 0:
            raise ArgumentError(f"rtf must be > 0, got {self.rtf}")

    def to_dict(self):
        return asdict(self)

    def __str__(self):
        return ("rtf={rtf:.6g} wall_seconds={wall_seconds:.6g} audio_seconds={audio_seconds:.6g} "
                "steps={steps} rhs_evals={rhs_evals}").format(**asdict(self))


class TeacherRunner:
    """N-node PF-ODE sampling with the teacher score."""

    def __init__(self, net, fns, grid, kind=solvers.HEUN):
        self.score = solvers.teacher_score(net, fns)
        self.sde = fns.sde
        self.grid = grid
        self.kind = kind
        self.steps = grid.n - 1
        self.rhs_evals = solvers.rhs_evals(kind, grid.n)

    def __call__(self, y, rng):
        return solvers.teacher_sample(y, self.grid, self.score, self.kind, self.sde, rng)


class StudentRunner:
    """One consistency-model evaluation from a prior draw."""

    steps = 1
    rhs_evals = 1

    def __init__(self, net, fns):
        self.net = net
        self.fns = fns

    def __call__(self, y, rng):
        return solvers.one_step_enhance(self.net, y, self.fns, rng)


class NoisyRunner:
    """Returns the input unchanged; the no-processing baseline."""

    steps = 0
    rhs_evals = 0

    def __call__(self, y, rng):
        return np.array(y, copy=True)


def measure_rtf(runner, dataset, warmup=1, reps=3, seed=0):
    """Median wall-clock of ``reps`` full passes over ``dataset`` after ``warmup`` passes."""
    if reps < 3:
        raise ArgumentError(f"need reps >= 3, got {reps}")
    if len(dataset) == 0:
        raise ArgumentError("empty dataset")
    for _ in range(warmup):
        runner(dataset.y, Rng(seed))
    walls = []
    for _ in range(reps):
        t0 = time.perf_counter()
        runner(dataset.y, Rng(seed))
        walls.append(time.perf_counter() - t0)
    wall = statistics.median(walls)
    audio = dataset.seconds()
    return RtfReport(audio, wall, wall / audio, getattr(runner, "steps", 0),
                     getattr(runner, "rhs_evals", 0))


def speedup(student, teacher):
    """``teacher.rtf / student.rtf``."""
    return teacher.rtf / student.rtf


def _item_key(item_id):
    # stable per-item stream so results do not depend on dataset order
    return int.from_bytes(hashlib.sha256(str(item_id).encode()).digest()[:7], "little")


def _eval_item(runner, dataset, i, seed, proxy_cfg, timed):
    y = dataset.y[i : i + 1]
    rng = Rng(seed).spawn(_item_key(dataset.ids[i]))
    t0 = time.perf_counter()
    est = runner(y, rng)
    wall = time.perf_counter() - t0 if timed else None
    wav = istft(est, dataset.stft_cfg, dataset.n_samples)[0]
    clean, noisy = dataset.clean[i], dataset.noisy[i]
    d = est[0] - dataset.x0[i]
    row = {
        "id": dataset.ids[i],
        "si_sdr": losses.si_sdr(wav, clean),
        "si_sdr_noisy": losses.si_sdr(noisy, clean),
        "proxy": losses.perceptual_proxy_loss(wav, clean, proxy_cfg)[0],
        "spectral_mse": float(np.mean(d.real ** 2 + d.imag ** 2)),
        "wall": wall,
    }
    row["si_sdri"] = row["si_sdr"] - row["si_sdr_noisy"]
    return row


def aggregate(rows):
    """Mean and population std of every metric; exact under any row order."""
    out = {}
    for name in METRIC_FIELDS:
        vals = sorted(float(r[name]) for r in rows)
        mean = math.fsum(vals) / len(vals)
        var = math.fsum((v - mean) ** 2 for v in vals) / len(vals)
        out[name] = {"mean": mean, "std": math.sqrt(var)}
    return out


def evaluate(runner, dataset, seed=0, proxy_cfg=losses.ProxyConfig(), workers=1):
    """Per-item metrics and their aggregate; returns ``(rows, aggregate)``.

    Each item draws from its own stream keyed by its id, so results are
    deterministic under ``seed`` and independent of order and of ``workers``.
    """
    if len(dataset) == 0:
        raise ArgumentError("empty dataset")
    idx = range(len(dataset))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(lambda i: _eval_item(runner, dataset, i, seed, proxy_cfg, False), idx))
    else:
        rows = [_eval_item(runner, dataset, i, seed, proxy_cfg, True) for i in idx]
    return rows, aggregate(rows)


def write_metrics_csv(path_or_file, rows, agg):
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else r[k]) for k in CSV_FIELDS})
        for stat in ("mean", "std"):
            w.writerow({"id": stat, **{k: agg[k][stat] for k in METRIC_FIELDS}, "wall": ""})
    finally:
        if own:
            fh.close()
