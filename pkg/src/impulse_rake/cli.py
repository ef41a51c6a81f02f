"""Command-line entry point: ``impulse-rake <command> --config FILE``.

Exit status is 0 on success, 2 for configuration problems and 3 for
runtime failures.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .channel import sample_channel, write_taps_csv
from .exceptions import ConfigError, ImpulseRakeError, WeightFormatError
from .harness import (load_config, prepare_e2e_models, run_ber_sweep, run_collision_analysis, run_e2e_sweep,
                      write_records)

log = logging.getLogger("impulse_rake")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_ber_sweep(args) -> int:
    cfg = load_config(args.config)
    records = run_ber_sweep(cfg)
    _emit(write_records(records, cfg), args.out or cfg.output)
    return EXIT_OK


def cmd_collisions(args) -> int:
    cfg = load_config(args.config)
    if cfg.link.n_users < 2:
        raise ConfigError("collision analysis needs K >= 2")
    records = [run_collision_analysis(cfg, snr) for snr in cfg.snr_db]
    _emit(write_records(records, cfg, kind="generic"), args.out or cfg.output)
    return EXIT_OK


def cmd_e2e(args) -> int:
    from .datasets import load_toy_dataset
    from .snn import LIFClassifier, network_from_blob

    cfg = load_config(args.config)
    path = Path(args.weights)
    if not path.is_file():
        raise ConfigError(f"weights file not found: {path}")
    try:
        net = network_from_blob(path.read_bytes())
    except WeightFormatError as exc:
        raise ConfigError(f"unreadable weights: {exc}") from exc
    X_train, y_train, X_test, y_test = load_toy_dataset()
    digital = LIFClassifier.from_network(net, classes=np.unique(y_train), steps_per_slice=cfg.steps_per_slice)
    models = {"digital": digital}
    if cfg.scheme.endswith("analog"):
        models["digital"], models["analog"] = prepare_e2e_models(cfg, X_train, y_train, digital=digital)
    records = run_e2e_sweep(cfg, models, X_test, y_test)
    _emit(write_records(records, cfg, kind="generic"), args.out or cfg.output)
    return EXIT_OK


def cmd_train_toy(args) -> int:
    from .datasets import load_toy_dataset
    from .snn import LIFClassifier, encode_digital, save_weights

    X_train, y_train, X_test, y_test = load_toy_dataset()
    clf = LIFClassifier(epochs=args.epochs, steps_per_slice=args.steps_per_slice, seed=args.seed)
    enc = lambda X: np.stack([encode_digital(x, args.slices) for x in X])
    clf.fit(enc(X_train), y_train)
    Path(args.out).write_bytes(save_weights(clf.network_))
    log.info("test accuracy %.3f", float(np.mean(clf.predict(enc(X_test)) == y_test)))
    return EXIT_OK


def cmd_channel_dump(args) -> int:
    from .phy import gen_th_code, modulate_ook, modulate_ppm
    from .phy import PulseTrain

    cfg = load_config(args.config)
    reals = [sample_channel(cfg.channel, args.seed, k) for k in range(cfg.link.n_users)]
    if args.out:
        write_taps_csv(args.out, reals)
    else:
        write_taps_csv("/dev/stdout", reals)
    if args.pulses:
        link = cfg.effective_link()
        rng = np.random.default_rng([args.seed, 0xB175])
        trains = []
        for k in range(link.n_users):
            bits = (rng.random(args.bits) < cfg.activation_rate).astype(np.int8)
            code = gen_th_code(args.seed, k, link, args.bits)
            trains.append((modulate_ppm if cfg.is_ppm else modulate_ook)(bits, code, link))
        PulseTrain.concat(trains).to_csv(args.pulses)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="impulse-rake", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ber-sweep", help="empirical and closed-form BER over the SNR grid")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ber_sweep)

    p = sub.add_parser("e2e", help="end-to-end classification accuracy over the SNR grid")
    p.add_argument("--config", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_e2e)

    p = sub.add_parser("collisions", help="empirical vs analytic pulse-collision rate")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_collisions)

    p = sub.add_parser("channel-dump", help="write channel taps (and optionally pulse trains) as CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out")
    p.add_argument("--pulses", help="also write every user's pulse train to this CSV")
    p.add_argument("--bits", type=int, default=16, help="bits per user for --pulses")
    p.set_defaults(func=cmd_channel_dump)

    p = sub.add_parser("train-toy", help="train the toy classifier and save its weights")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--slices", type=int, default=9, help="time slices per input (N_f of the e2e config)")
    p.add_argument("--steps-per-slice", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_toy)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ImpulseRakeError, ArithmeticError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
