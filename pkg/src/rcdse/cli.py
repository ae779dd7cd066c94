"""``rcdse`` command line: synth, train-teacher, distill, enhance, bench, eval, show-config.

Failures print a single line ``error: category=<name> message=<text>`` on
stderr and exit with the category's code (see :mod:`rcdse.errors`).
Every command that writes artifacts also writes ``config.json``, the fully
resolved configuration, next to them.
"""
import argparse
import json
import logging
import os
import sys

import numpy as np

from . import bench, config, distill, precond, solvers
from .errors import ArgumentError, MissingFileError, RcdError
from .network import NetworkSpec, load_checkpoint, save_checkpoint
from .numerics import Rng
from .signal import Waveform, istft, mixture_specs, synth_pair, wav_write, write_manifest

log = logging.getLogger("rcdse")


def _out_dir(args, cfg, name):
    path = args.out or os.path.join(cfg["run"]["output_dir"], name)
    os.makedirs(path, exist_ok=True)
    return path


def _data(cfg, path, key, require_clean=True):
    path = path or cfg["data"][key]
    if not path:
        raise ArgumentError(f"no dataset given (pass --data or set data.{key})")
    if not os.path.exists(path):
        raise MissingFileError(f"{path}: no such manifest")
    return distill.PairSet.from_manifest(path, config.stft_config(cfg), cfg["data"]["norm_rms"],
                                         require_clean=require_clean)


def _heldout(cfg, args):
    path = getattr(args, "heldout", None) or cfg["data"]["heldout_manifest"]
    return _data(cfg, path, "heldout_manifest") if path else None


def _check_stft(header, cfg, path):
    spec = NetworkSpec(**header["spec"])
    if spec.n_freq != config.stft_config(cfg).n_freq:
        raise ArgumentError(f"{path}: network expects {spec.n_freq} bins, stft gives "
                            f"{config.stft_config(cfg).n_freq}")


# ---------------------------------------------------------------- commands

def cmd_synth(cfg, args):
    d = cfg["data"]
    out = _out_dir(args, cfg, "data")
    count = args.count if args.count is not None else d["n_pairs"]
    seed = args.seed if args.seed is not None else d["seed"]
    specs = mixture_specs(count, seed, d["snr_grid"], d["clean_kinds"], d["noise_kinds"],
                          d["duration"], d["sample_rate"])
    rows = []
    for i, spec in enumerate(specs):
        clean, noisy = synth_pair(spec)
        name = f"mix{i:04d}"
        wav_write(os.path.join(out, f"{name}_clean.wav"), clean)
        wav_write(os.path.join(out, f"{name}_noisy.wav"), noisy)
        rows.append({"id": name, "clean": f"{name}_clean.wav", "noisy": f"{name}_noisy.wav",
                     "seed": spec.seed, "snr_db": spec.snr_db, "clean_kind": spec.clean_kind,
                     "noise_kind": spec.noise_kind})
    write_manifest(os.path.join(out, "manifest.tsv"), rows)
    config.dump(cfg, os.path.join(out, "config.json"))
    log.info("wrote %d pairs to %s", len(rows), out)
    return 0


def cmd_train_teacher(cfg, args):
    data = _data(cfg, args.data, "manifest")
    val = _heldout(cfg, args)
    out = _out_dir(args, cfg, "teacher")
    config.dump(cfg, os.path.join(out, "config.json"))
    with open(os.path.join(out, "log.jsonl"), "w") as sink:
        net, records = distill.train_teacher(data, config.network_spec(cfg), config.sde_params(cfg),
                                             config.teacher_config(cfg), val=val, log_sink=sink)
    save_checkpoint(os.path.join(out, "teacher.ckpt"), net, "teacher",
                    {"sigma_data": cfg["precond"]["sigma_data"], "sde": cfg["sde"]})
    log.info("teacher val_loss %.6g, checksum %s", min(r["val_loss"] for r in records),
             net.params.checksum())
    return 0


def cmd_distill(cfg, args):
    teacher, header = load_checkpoint(args.teacher, expect_kind="teacher")
    _check_stft(header, cfg, args.teacher)
    data = _data(cfg, args.data, "manifest")
    val = _heldout(cfg, args)
    out = _out_dir(args, cfg, "student")
    dcfg = config.distill_config(cfg)
    log.info("distillation mode: %s", dcfg.mode)
    config.dump(cfg, os.path.join(out, "config.json"))
    with open(os.path.join(out, "log.jsonl"), "w") as sink:
        student, state, _ = distill.distill(teacher, data, config.sde_params(cfg), dcfg, val=val,
                                            log_sink=sink)
    save_checkpoint(os.path.join(out, "student.ckpt"), student, "student",
                    {"sigma_data": cfg["precond"]["sigma_data"], "sde": cfg["sde"], "mode": dcfg.mode,
                     "best_epoch": state.best["epoch"]})
    log.info("student checksum %s (best epoch %d)", student.params.checksum(), state.best["epoch"])
    return 0


def _runner(cfg, path):
    net, header = load_checkpoint(path)
    _check_stft(header, cfg, path)
    sp, sd = config.sde_params(cfg), cfg["precond"]["sigma_data"]
    if header["kind"] == "student":
        return bench.StudentRunner(net, precond.consistency_fns(sp, sd))
    grid = solvers.TimeGrid.for_sde(sp, cfg["bench"]["n_grid"])
    return bench.TeacherRunner(net, precond.denoiser_fns(sp, sd), grid, cfg["bench"]["solver"])


def _write_eval(out, rows, agg):
    bench.write_metrics_csv(os.path.join(out, "metrics.csv"), rows, agg)
    log.info("si_sdr %.3f dB (si_sdri %+.3f dB), spectral_mse %.6g", agg["si_sdr"]["mean"],
             agg["si_sdri"]["mean"], agg["spectral_mse"]["mean"])


def cmd_enhance(cfg, args):
    runner = _runner(cfg, args.model)
    data = _data(cfg, args.data, "manifest", require_clean=False)
    out = _out_dir(args, cfg, "enhanced")
    config.dump(cfg, os.path.join(out, "config.json"))
    seed = cfg["bench"]["seed"]
    for i, item in enumerate(data.ids):
        est = runner(data.y[i : i + 1], Rng(seed).spawn(bench._item_key(item)))
        wav = istft(est, data.stft_cfg, data.n_samples)[0] / data.gains[i]
        wav_write(os.path.join(out, f"{item}_enhanced.wav"), Waveform(np.clip(wav, -1.0, 1.0), data.sample_rate))
    has_clean = not np.array_equal(data.clean, data.noisy)
    if has_clean:
        rows, agg = bench.evaluate(runner, data, seed, config.distill_config(cfg).proxy)
        _write_eval(out, rows, agg)
    log.info("enhanced %d files into %s", len(data), out)
    return 0


def cmd_eval(cfg, args):
    runner = bench.NoisyRunner() if args.model is None else _runner(cfg, args.model)
    data = _data(cfg, args.data, "heldout_manifest")
    out = _out_dir(args, cfg, "eval")
    config.dump(cfg, os.path.join(out, "config.json"))
    rows, agg = bench.evaluate(runner, data, cfg["bench"]["seed"], config.distill_config(cfg).proxy,
                               workers=cfg["bench"]["workers"])
    _write_eval(out, rows, agg)
    return 0


def cmd_bench(cfg, args):
    b = cfg["bench"]
    data = _data(cfg, args.data, "heldout_manifest", require_clean=False)
    student = _runner(cfg, args.student)
    teacher = _runner(cfg, args.teacher)
    out = _out_dir(args, cfg, "bench")
    config.dump(cfg, os.path.join(out, "config.json"))
    rs = bench.measure_rtf(student, data, b["warmup"], b["reps"], b["seed"])
    rt = bench.measure_rtf(teacher, data, b["warmup"], b["reps"], b["seed"])
    ratio = bench.speedup(rs, rt)
    result = {"student": rs.to_dict(), "teacher": rt.to_dict(), "speedup": ratio}
    with open(os.path.join(out, "bench.json"), "w") as fh:
        json.dump(result, fh, indent=2, sort_keys=True)
    print(f"student {rs}")
    print(f"teacher {rt}")
    print(f"speedup {ratio:.3f}")
    return 0


def cmd_show_config(cfg, args):
    json.dump(cfg, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return 0


# ---------------------------------------------------------------- parser

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"JSON config file (default: ${config.ENV_VAR})")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value; repeatable, wins over the file")
    common.add_argument("--out", help="output directory (default: run.output_dir/<command>)")
    common.add_argument("-v", "--verbose", action="store_true")

    epilog = "config keys and defaults:\n" + config.describe()
    parser = argparse.ArgumentParser(prog="rcdse", description=__doc__.splitlines()[0], epilog=epilog,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text, epilog=epilog,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.set_defaults(fn=fn)
        return p

    p = add("synth", cmd_synth, "write a synthetic dataset (WAVs + manifest.tsv)")
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int)
    p = add("train-teacher", cmd_train_teacher, "train the score-model teacher")
    p.add_argument("--data")
    p.add_argument("--heldout")
    p = add("distill", cmd_distill, "distill a one-step student from a teacher")
    p.add_argument("--teacher", required=True)
    p.add_argument("--data")
    p.add_argument("--heldout")
    p = add("enhance", cmd_enhance, "enhance the noisy files of a manifest")
    p.add_argument("--model", required=True)
    p.add_argument("--data")
    p = add("bench", cmd_bench, "real-time factor of student vs teacher")
    p.add_argument("--teacher", required=True)
    p.add_argument("--student", required=True)
    p.add_argument("--data")
    p = add("eval", cmd_eval, "reference-based metrics (noisy baseline without --model)")
    p.add_argument("--model")
    p.add_argument("--data")
    add("show-config", cmd_show_config, "print the resolved configuration")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)
    try:
        cfg = config.load(args.config, args.set)
        return args.fn(cfg, args)
    except RcdError as exc:
        print(f"error: category={exc.category} message={exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: category=io message={exc}", file=sys.stderr)
        return 10


if __name__ == "__main__":
    sys.exit(main())
