"""Command-line surface: keygen, encrypt-image, classify, decrypt-scores,
bound, verify.

Every command is deterministic given (seed, inputs, preset).  Files are
written atomically.  Exit codes: 0 success, 2 usage, 3 I/O or file
format, 4 shape/range, 5 noise exhaustion, 6 verification failure.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import error_analysis, model_io, serialize
from .cnn import argmax, classify, encrypt_image, reference_classify
from .errors import (
    FormatMismatchError,
    GatecnnError,
    ModelFormatError,
    NoiseExhaustionError,
    OverflowDiagnostic,
    ParameterError,
    RangeError,
    ShapeError,
    VerificationFailure,
    WidthMismatchError,
)
from .fhe_core import ClearBackend, GswBackend, keygen, preset_params
from .fixedpoint import decode_lanes

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_SHAPE = 4
EXIT_NOISE = 5
EXIT_VERIFY = 6

_EXIT_BY_ERROR = (
    (NoiseExhaustionError, EXIT_NOISE),
    (VerificationFailure, EXIT_VERIFY),
    ((ShapeError, WidthMismatchError, FormatMismatchError, RangeError,
      OverflowDiagnostic), EXIT_SHAPE),
    (ModelFormatError, EXIT_IO),
    (ParameterError, EXIT_USAGE),
    (OSError, EXIT_IO),
)


@dataclass
class JobConfig:
    backend: str = "clear"
    preset: str = "toy"
    model_path: str | None = None
    image_paths: list = field(default_factory=list)
    key_path: str | None = None
    input_path: str | None = None
    output_path: str | None = None
    workers: int = 1
    seed: int = 0
    encrypt_weights: bool = False
    gate_level: bool = False

    def __post_init__(self):
        if self.workers < 1:
            raise ParameterError("workers must be >= 1")


def _make_backend(config: JobConfig, need_key: bool):
    if config.backend == "clear":
        return ClearBackend(fast_arith=not config.gate_level, seed=config.seed)
    if config.backend != "gsw":
        raise ParameterError(f"unknown backend {config.backend!r}")
    if need_key:
        if not config.key_path:
            raise ParameterError("the gsw backend requires --key for this command")
        sk = serialize.load_secret_key(config.key_path)
        return GswBackend(sk.params, key=sk, seed=config.seed, auto_refresh=True)
    return GswBackend(preset_params(config.preset), seed=config.seed)


def cmd_keygen(config: JobConfig) -> int:
    if config.backend == "clear":
        raise ParameterError("the clear backend has no keys; use --backend gsw")
    if not config.output_path:
        raise ParameterError("keygen needs --out")
    params = preset_params(config.preset)
    sk = keygen(params, config.seed)
    serialize.save_secret_key(sk, config.output_path)
    print(f"wrote secret key for preset {config.preset!r} "
          f"(n={params.lattice_dim}, log_q={params.log_q}) to {config.output_path}")
    return EXIT_OK


def cmd_encrypt_image(config: JobConfig) -> int:
    if not (config.model_path and config.image_paths and config.output_path):
        raise ParameterError("encrypt-image needs --model, --image and --out")
    net = model_io.load_model(config.model_path)
    pixels = model_io.load_image(config.image_paths[0])
    want = (net.input_channels, net.input_height, net.input_width)
    if pixels.shape != want:
        raise ShapeError(f"image shape {pixels.shape} does not match the "
                         f"model input {want}")
    backend = _make_backend(config, need_key=True)
    enc = encrypt_image(pixels, net.fmt, backend, encrypt=True)
    serialize.save_enc_image(enc, net.fmt, backend, config.output_path,
                             params=preset_params(config.preset))
    bits = int(np.prod(want)) * net.fmt.total_bits
    print(f"encrypted {want[1]}x{want[2]} image to {config.output_path} "
          f"({bits} bit records, backend {config.backend})")
    return EXIT_OK


def cmd_classify(config: JobConfig) -> int:
    if not (config.model_path and config.input_path and config.output_path):
        raise ParameterError("classify needs --model, --in and --out")
    net = model_io.load_model(config.model_path)
    # the input file knows its backend; the command line stays the same
    _, _, file_tag = serialize.read_header(config.input_path)
    config = JobConfig(**{**config.__dict__, "backend": file_tag})
    backend = _make_backend(config, need_key=(file_tag == "gsw"))
    enc, fmt = serialize.load_enc_image(config.input_path, backend)
    if fmt != net.fmt:
        raise FormatMismatchError(
            f"image fixed-point format {fmt} does not match the model's {net.fmt}")
    started = time.perf_counter()
    scores = classify(enc, net, encrypt_weights=config.encrypt_weights,
                      workers=config.workers)
    elapsed = time.perf_counter() - started
    serialize.save_scores(scores, net.fmt, backend, config.output_path,
                          params=preset_params(config.preset))
    nands, refreshes, max_noise = backend.stats.snapshot()
    print(f"classified in {elapsed:.2f}s: {nands} NANDs, {refreshes} refreshes, "
          f"peak tracked noise {max_noise:.0f}")
    print(f"wrote {len(scores.scores)} encrypted scores to {config.output_path}")
    return EXIT_OK


def cmd_decrypt_scores(config: JobConfig) -> int:
    if not config.input_path:
        raise ParameterError("decrypt-scores needs --in")
    _, _, file_tag = serialize.read_header(config.input_path)
    probe_config = JobConfig(**{**config.__dict__, "backend": file_tag})
    backend = _make_backend(probe_config, need_key=(file_tag == "gsw"))
    scores, fmt = serialize.load_scores(config.input_path, backend)
    values = [decode_lanes(s)[0] for s in scores.scores]
    winner = argmax(values)
    lines = [f"score[{i}] = {v:+.6f}" for i, v in enumerate(values)]
    lines.append(f"argmax = {winner}")
    text = "\n".join(lines)
    print(text)
    if config.output_path:
        serialize.atomic_write_bytes(config.output_path, (text + "\n").encode())
    return EXIT_OK


def cmd_bound(config: JobConfig) -> int:
    if not config.model_path:
        raise ParameterError("bound needs --model")
    net = model_io.load_model(config.model_path)
    report = error_analysis.theorem_bound(net)
    print(f"format: w={net.fmt.total_bits} f={net.fmt.frac_bits} "
          f"scale={net.fmt.scale}")
    print(f"{'layer':>5} {'kind':>5} {'s':>5} {'r_i':>10} {'d_i':>10} {'d_i(sum)':>10}")
    for lf in report.factors:
        print(f"{lf.layer_index:>5} {lf.kind:>5} {lf.s:>5} "
              f"{lf.r_i:>10.4f} {lf.d_i:>10.4f} {lf.d_i_sum:>10.4f}")
    print("machine-readable:")
    print(f"initial_delta={report.initial_delta!r}")
    print(f"r_product={report.r_product!r}")
    print(f"total_bound={report.total_bound!r}")
    print(f"total_bound_sum_variant={report.total_bound_sum_variant!r}")
    print(f"rescaling_slack={report.rescaling_slack!r}")
    return EXIT_OK


def cmd_verify(config: JobConfig) -> int:
    if not (config.model_path and config.image_paths):
        raise ParameterError("verify needs --model and at least one --images path")
    net = model_io.load_model(config.model_path)
    report = error_analysis.theorem_bound(net)
    mismatches = 0
    bound_violations = 0
    ceiling_violations = 0
    all_errors = []
    for path in config.image_paths:
        pixels = model_io.load_image(path)
        backend = ClearBackend(fast_arith=not config.gate_level, seed=config.seed)
        enc = encrypt_image(pixels, net.fmt, backend)
        scores = classify(enc, net, workers=config.workers)
        got = np.array([decode_lanes(s)[0] for s in scores.scores])
        want = reference_classify(pixels, net)
        errors = np.abs(got - want)
        all_errors.append(errors)
        match = argmax(got) == argmax(want)
        over_bound = int((errors > report.total_bound).sum())
        over_ceiling = int((errors > report.bound_with_slack).sum())
        mismatches += 0 if match else 1
        bound_violations += over_bound
        ceiling_violations += over_ceiling
        status = "ok" if match and not over_ceiling else "FAIL"
        print(f"{os.path.basename(str(path))}: class fp={argmax(got)} "
              f"ref={argmax(want)} max_err={errors.max():.2e} [{status}]")
    stacked = np.concatenate(all_errors)
    total = len(config.image_paths)
    print(f"classification matches: {total - mismatches}/{total}")
    print(f"per-score error: mean={stacked.mean():.3e} std={stacked.std():.3e} "
          f"max={stacked.max():.3e}")
    print(f"theorem bound: {report.total_bound:.3e} "
          f"(+ rescaling slack {report.rescaling_slack:.3e})")
    attributed = bound_violations - ceiling_violations
    print(f"bound violations: {bound_violations} "
          f"({attributed} attributed to rescaling slack, "
          f"{ceiling_violations} beyond the slack ceiling)")
    if mismatches or ceiling_violations:
        raise VerificationFailure(
            f"{mismatches} classification mismatches, {ceiling_violations} "
            "errors beyond the bound-plus-slack ceiling")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gatecnn",
        description="NAND-only encrypted CNN inference and its error analysis")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--backend", choices=["clear", "gsw"], default="clear")
        p.add_argument("--preset", default="toy",
                       help="FHE parameter preset (toy, demo)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--model", dest="model_path")
        p.add_argument("--key", dest="key_path")
        p.add_argument("--out", dest="output_path")
        p.add_argument("--gate-level", action="store_true",
                       help="force gate-by-gate evaluation on the clear backend")

    p = sub.add_parser("keygen", help="generate a secret key file")
    common(p)
    p.set_defaults(func=cmd_keygen, backend="gsw")

    p = sub.add_parser("encrypt-image", help="encode and encrypt a PGM/CSV image")
    common(p)
    p.add_argument("--image", dest="image", required=True)
    p.set_defaults(func=cmd_encrypt_image)

    p = sub.add_parser("classify", help="run the network over an encrypted image")
    common(p)
    p.add_argument("--in", dest="input_path", required=True)
    p.add_argument("--encrypt-weights", action="store_true",
                   help="encrypt model weights instead of using public constants")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("decrypt-scores", help="decrypt scores and print the argmax")
    common(p)
    p.add_argument("--in", dest="input_path", required=True)
    p.set_defaults(func=cmd_decrypt_scores)

    p = sub.add_parser("bound", help="print the per-layer error-bound report")
    common(p)
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("verify", help="check fixed-point vs float64 classification")
    common(p)
    p.add_argument("--images", nargs="+", required=True)
    p.set_defaults(func=cmd_verify)

    return parser


def _config_from_args(args) -> JobConfig:
    return JobConfig(
        backend=args.backend,
        preset=args.preset,
        model_path=args.model_path,
        image_paths=list(getattr(args, "images", []) or
                         ([args.image] if getattr(args, "image", None) else [])),
        key_path=args.key_path,
        input_path=getattr(args, "input_path", None),
        output_path=args.output_path,
        workers=args.workers,
        seed=args.seed,
        encrypt_weights=getattr(args, "encrypt_weights", False),
        gate_level=args.gate_level,
    )


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _config_from_args(args)
        return args.func(config)
    except GatecnnError as exc:
        for err_type, code in _EXIT_BY_ERROR:
            if isinstance(exc, err_type):
                print(f"error: {exc}", file=sys.stderr)
                return code
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
