"""Command-line entry point: ``specmetric <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Data goes to stdout, diagnostics to stderr. A key=value spectrogram
config file may be supplied through ``--spec-config`` or the
``SPECMETRIC_CONFIG`` environment variable; explicit flags win over both.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

from . import baseline_metrics as bm
from .audio_io import read_wav, resample, write_wav_16bit
from .degradations import KINDS, DegradationSpec, apply
from .eval_harness import (
    MetricBinding,
    SpectrogramLoader,
    evaluate,
    load_dataset,
    load_external_scores,
    split_train_test,
)
from .exceptions import DataError, NumericalError
from .fitting import AdamConfig, PerceptualPair, fit_perceptual, fit_statistical
from .nlp_core import image_default_params, load_params, nlpd, save_params
from .spectrogram import SpectrogramConfig, mel_spectrogram, parse_key_values

log = logging.getLogger("specmetric")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
METRIC_NAMES = ("nlpd", "msssim", "ssim", "nsim", "mse")
CONFIG_ENV = "SPECMETRIC_CONFIG"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _fmt(value: float) -> str:
    return repr(float(value))


# --- configuration -----------------------------------------------------------


def _spectrogram_config(args) -> SpectrogramConfig:
    values: dict[str, str] = {}
    for path in (os.environ.get(CONFIG_ENV), getattr(args, "spec_config", None)):
        if path:
            try:
                values.update(parse_key_values(Path(path).read_text()))
            except OSError as exc:
                raise DataError(f"cannot read config file {path}: {exc.strerror or exc}") from exc
    flags = {
        "sample_rate": args.sample_rate,
        "n_fft": args.n_fft,
        "hop_length": args.hop_length,
        "n_mels": args.n_mels,
        "scale": args.scale,
    }
    values.update({k: str(v) for k, v in flags.items() if v is not None})
    try:
        return SpectrogramConfig.from_mapping(values)
    except ValueError as exc:
        raise UsageError(f"invalid spectrogram configuration: {exc}") from exc


def _describe(cfg: SpectrogramConfig) -> str:
    return " ".join(f"{k}={v}" for k, v in asdict(cfg).items())


def _metric_binding(name: str, params_path: str | None) -> MetricBinding:
    if name == "nlpd":
        params = load_params(params_path) if params_path else image_default_params()
        return MetricBinding(
            "nlpd",
            lambda a, b: nlpd(a, b, params),
            f"params={params_path or 'bundled image_default'} dn_mode={params.dn_mode} n_stages={params.n_stages}",
        )
    if name == "mse":
        return MetricBinding("mse", bm.mse, "mean squared error")
    fn = {"ssim": bm.ssim, "msssim": bm.ms_ssim, "nsim": bm.nsim}[name]
    ssim_cfg = bm.SsimConfig()
    return MetricBinding(
        name,
        lambda a, b: fn(a, b, ssim_cfg),
        "window=11x11 gaussian sigma=1.5 k1=0.01 k2=0.03 L=per-pair range",
    )


# --- subcommands -------------------------------------------------------------


def cmd_compare(args) -> int:
    cfg = _spectrogram_config(args)
    binding = _metric_binding(args.metric, args.params)
    ref = mel_spectrogram(resample(read_wav(args.ref), cfg.sample_rate), cfg)
    deg = mel_spectrogram(resample(read_wav(args.deg), cfg.sample_rate), cfg)
    print(f"{args.metric}\t{_fmt(binding.fn(ref, deg))}")
    return EXIT_OK


def cmd_degrade(args) -> int:
    try:
        spec = DegradationSpec(args.kind, args.intensity, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    w = read_wav(args.input)
    write_wav_16bit(args.out, apply(w, spec))
    log.info("wrote %s (%s, intensity %s)", args.out, args.kind, args.intensity)
    return EXIT_OK


def _train_records(manifest: str):
    train, _ = split_train_test(load_dataset(manifest))
    if not train:
        raise DataError(f"{manifest}: training split is empty")
    return train


def _adam_from_args(args, preset) -> AdamConfig:
    overrides = {"seed": args.seed}
    for key, attr in (("learning_rate", "lr"), ("epochs", "epochs"), ("batch_size", "batch")):
        value = getattr(args, attr)
        if value is not None:
            overrides[key] = value
    try:
        return preset(**overrides)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_fit_statistical(args) -> int:
    cfg = _spectrogram_config(args)
    opt = _adam_from_args(args, AdamConfig.statistical)
    base = load_params(args.init) if args.init else image_default_params(args.stages)
    print(
        f"fit-statistical: lr={opt.learning_rate} epochs={opt.epochs} batch={opt.batch_size} "
        f"seed={opt.seed} n_stages={base.n_stages} | {_describe(cfg)}",
        file=sys.stderr,
    )
    loader = SpectrogramLoader(cfg, args.cache_dir)
    refs = list(dict.fromkeys(r.reference_path for r in _train_records(args.train_manifest)))
    trace = fit_statistical([loader(p) for p in refs], base, opt)
    save_params(args.out, trace.params)
    if args.trace:
        trace.to_csv(args.trace)
    print(f"fit-statistical: {len(refs)} reference clips, final loss {_fmt(trace.objective[-1])}", file=sys.stderr)
    return EXIT_OK


def cmd_fit_perceptual(args) -> int:
    cfg = _spectrogram_config(args)
    opt = _adam_from_args(args, AdamConfig.perceptual)
    base = load_params(args.init)
    print(
        f"fit-perceptual: lr={opt.learning_rate} epochs={opt.epochs} "
        f"batch={'degradation' if opt.batch_size is None else opt.batch_size} seed={opt.seed} "
        f"n_stages={base.n_stages} train_sigma={not args.freeze_sigma} rating_sign={args.rating_sign} "
        f"| {_describe(cfg)}",
        file=sys.stderr,
    )
    loader = SpectrogramLoader(cfg, args.cache_dir)
    pairs = [
        PerceptualPair(loader(r.reference_path), loader(r.degraded_path), r.rating, r.degradation)
        for r in _train_records(args.train_manifest)
        if r.degradation != "reference"
    ]
    trace = fit_perceptual(pairs, base, opt, rating_sign=args.rating_sign, train_sigma=not args.freeze_sigma)
    save_params(args.out, trace.params)
    if args.trace:
        trace.to_csv(args.trace)
    print(f"fit-perceptual: {len(pairs)} pairs, final mean correlation {_fmt(trace.objective[-1])}", file=sys.stderr)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _spectrogram_config(args)
    names = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = [m for m in names if m not in METRIC_NAMES]
    if unknown or not names:
        raise UsageError(f"--metrics must list names from {', '.join(METRIC_NAMES)}; got {args.metrics!r}")
    bindings = [_metric_binding(m, args.params) for m in names]
    external = load_external_scores(args.external_scores) if args.external_scores else None
    records = load_dataset(args.manifest)
    report = evaluate(
        records,
        bindings,
        split=args.split,
        loader=SpectrogramLoader(cfg, args.cache_dir),
        external=external,
        jobs=args.jobs,
    )
    report.provenance = {"spectrogram": _describe(cfg), "split": args.split, "manifest": str(args.manifest)}
    report.to_csv(args.out)
    sys.stdout.write(report.to_table())
    return EXIT_OK


# --- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    spec = _Parser(add_help=False)
    group = spec.add_argument_group("spectrogram")
    group.add_argument("--spec-config", metavar="FILE", help=f"key=value spectrogram config (also ${CONFIG_ENV})")
    group.add_argument("--sample-rate", type=int, help="analysis sample rate in Hz (default 16050)")
    group.add_argument("--n-fft", type=int, help="window length in samples (default 2048)")
    group.add_argument("--hop-length", type=int, help="hop in samples (default 64)")
    group.add_argument("--n-mels", type=int, help="mel band count (default 512)")
    group.add_argument("--scale", choices=("power", "log_power"), help="amplitude scale (default log_power)")

    fit_common = _Parser(add_help=False)
    fit_common.add_argument("--train-manifest", required=True, help="manifest CSV; its training split is used")
    fit_common.add_argument("--out", required=True, help="where to write the fitted parameter JSON")
    fit_common.add_argument("--seed", type=int, default=0, help="seed for batch ordering (default 0)")
    fit_common.add_argument("--trace", help="optional CSV of per-epoch objectives")
    fit_common.add_argument("--cache-dir", help="directory for cached spectrograms")

    parser = _Parser(prog="specmetric", description="Image-quality metrics on mel spectrograms.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more diagnostics on stderr")
    parser.add_argument("-q", "--quiet", action="store_true", help="only errors on stderr")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("compare", parents=[spec], help="score one reference/degraded pair")
    p.add_argument("--ref", required=True, help="reference WAV")
    p.add_argument("--deg", required=True, help="degraded WAV")
    p.add_argument("--metric", required=True, choices=METRIC_NAMES, help="metric to compute")
    p.add_argument("--params", help="NLPD parameter JSON (default: bundled image_default)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("degrade", help="apply a synthetic degradation to a WAV")
    p.add_argument("--in", dest="input", required=True, help="input WAV")
    p.add_argument("--kind", required=True, choices=KINDS, help="degradation type")
    p.add_argument("--intensity", required=True, type=float, help="severity in [0, 1]")
    p.add_argument("--seed", type=int, default=0, help="noise seed (default 0)")
    p.add_argument("--out", required=True, help="output 16-bit WAV")
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("fit-statistical", parents=[spec, fit_common], help="fit DN filters to predict centre coefficients")
    p.add_argument("--init", help="starting parameter JSON (default: bundled image_default)")
    p.add_argument("--stages", type=int, default=6, help="stage count when --init is not given (default 6)")
    p.add_argument("--lr", type=float, help="learning rate (default 0.01)")
    p.add_argument("--epochs", type=int, help="epochs (default 10)")
    p.add_argument("--batch", type=int, help="clips per step (default 1)")
    p.set_defaults(func=cmd_fit_statistical)

    p = sub.add_parser("fit-perceptual", parents=[spec, fit_common], help="fit DN parameters to listener ratings")
    p.add_argument("--init", required=True, help="starting parameter JSON")
    p.add_argument("--lr", type=float, help="learning rate (default 0.001)")
    p.add_argument("--epochs", type=int, help="epochs (default 100)")
    p.add_argument("--batch", type=int, help="pairs per step (default: all pairs of one degradation)")
    p.add_argument("--freeze-sigma", action="store_true", help="keep the additive constants fixed")
    p.add_argument(
        "--rating-sign",
        type=float,
        default=-1.0,
        choices=(-1.0, 1.0),
        help="maximise Pearson(nlpd, sign*rating); -1 (default) expects distance to fall as quality rises",
    )
    p.set_defaults(func=cmd_fit_perceptual)

    p = sub.add_parser("evaluate", parents=[spec], help="correlate metrics with ratings")
    p.add_argument("--manifest", required=True, help="manifest CSV")
    p.add_argument("--metrics", required=True, help=f"comma-separated subset of {','.join(METRIC_NAMES)}")
    p.add_argument("--out", required=True, help="report CSV (metric,degradation,n,spearman,pearson)")
    p.add_argument("--split", choices=("all", "test"), default="all", help="records to score (default all)")
    p.add_argument("--params", help="NLPD parameter JSON (default: bundled image_default)")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers for decoding and scoring")
    p.add_argument("--external-scores", help="CSV with clip_id plus one column per external metric")
    p.add_argument("--cache-dir", help="directory for cached spectrograms")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)

    level = logging.ERROR if args.quiet else (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"specmetric {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"specmetric {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"specmetric {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
