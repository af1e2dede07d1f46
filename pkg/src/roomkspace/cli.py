"""Command-line interface: ``roomkspace {synth,estimate,eval,modes,export-kspace}``.

Exit codes: 0 success, 2 usage error, 3 estimation failure (an axis
without an axial mode), 4 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import __version__
from .estimator import (
    EstimationConfig,
    EstimationReport,
    MissingAxialModeError,
    ModeEstimate,
    estimate_room_and_modes,
    reconstruct,
)
from .io import (
    FormatError,
    read_bundle,
    read_report,
    write_bundle,
    write_json,
    write_kspace,
    write_report,
)
from .metrics import evaluate
from .modal import SPEED_OF_SOUND, RoomGeometry, enumerate_modes_below
from .synthesis import build_measurement_set, make_rigid_wall_model, sample_microphones

EXIT_OK, EXIT_USAGE, EXIT_ESTIMATION, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("roomkspace")


class UsageError(ValueError):
    pass


def _triple(text: str) -> tuple[float, float, float]:
    try:
        values = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected X,Y,Z, got {text!r}") from None
    if len(values) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated values, got {text!r}")
    return values


def _cube(text: str) -> tuple[float, tuple[float, float, float] | None]:
    side, _, center = text.partition("@")
    try:
        side_value = float(side)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected SIDE or SIDE@X,Y,Z, got {text!r}") from None
    return side_value, (_triple(center) if center else None)


def _ground_truth_report(model, room: RoomGeometry, settings: dict) -> EstimationReport:
    modes = [ModeEstimate(m.wavenumber, m.group, m.coefficients, "ground-truth", m.index)
             for m in model.modes]
    return EstimationReport(room, modes, {}, {"synthesis": settings}, None)


def cmd_synth(args) -> int:
    try:
        room = RoomGeometry(*args.room)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    side, center = args.cube
    center = room.lengths / 2 if center is None else np.asarray(center)
    source = 0.05 * room.lengths if args.source is None else np.asarray(args.source)
    if not room.contains(source):
        raise UsageError(f"source {list(source)} lies outside the room")
    try:
        mic_seed = args.seed if args.mic_seed is None else args.mic_seed
        positions = sample_microphones(args.mics, center, side, mic_seed, room)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    model = make_rigid_wall_model(room, args.fc, args.c, args.rt60, args.amplitude_rule, source,
                                  rng_seed=args.seed)
    measurements = build_measurement_set(model, positions, source, args.fs, args.duration,
                                         args.noise_snr, args.seed, args.fc)
    settings = {"room": list(args.room), "fc": args.fc, "rt60": args.rt60, "c": args.c,
                "mics": args.mics, "cube_side": side, "cube_center": list(map(float, center)),
                "source": list(map(float, source)), "fs": args.fs, "duration": args.duration,
                "seed": args.seed, "mic_seed": mic_seed, "noise_snr_db": args.noise_snr,
                "amplitude_rule": args.amplitude_rule}
    measurements.provenance.update(settings)
    write_bundle(args.out, measurements, args.duration)
    write_report(f"{args.out}/truth.json", _ground_truth_report(model, room, settings))
    print(f"wrote {args.mics} microphones x {measurements.n_samples} samples "
          f"({len(model)} modes) to {args.out}")
    return EXIT_OK


def _config_from_args(args) -> EstimationConfig:
    if not args.flo < args.fp < args.fc:
        raise UsageError(f"need --flo < --fp < --fc, got {args.flo}, {args.fp}, {args.fc}")
    return EstimationConfig(c=args.c, rt60_prior=args.rt60_prior, f_p=args.fp, f_lo=args.flo,
                            f_c=args.fc, omega_count=args.omega_grid, xi_count=args.xi_grid,
                            sphere_points=args.sphere_points)


def cmd_estimate(args) -> int:
    config = _config_from_args(args)
    measurements = read_bundle(args.inp)
    try:
        config.check_sampling(measurements.fs)
        report = estimate_room_and_modes(measurements, config)
    except MissingAxialModeError as exc:
        if exc.report is not None:
            write_report(args.out, exc.report)
        print(f"estimation failed: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    write_report(args.out, report)
    r = report.room
    print(f"room {r.lx:.4f} x {r.ly:.4f} x {r.lz:.4f} m, {len(report.modes)} modes -> {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    truth = read_report(args.truth)
    estimate = read_report(args.estimate)
    measured = read_bundle(args.measurements)
    holdout = read_bundle(args.holdout) if args.holdout else None
    if holdout is not None and (holdout.fs != measured.fs or holdout.n_samples != measured.n_samples):
        raise FormatError("held-out bundle sampling (fs, length) differs from the measurements")
    c = estimate.config.c if estimate.config is not None else SPEED_OF_SOUND
    fs, t_len = measured.fs, measured.n_samples
    rec = reconstruct(estimate.modes, measured.positions, fs, t_len)
    held_ref = held_rec = None
    if holdout is not None:
        held_ref = holdout.samples
        held_rec = reconstruct(estimate.modes, holdout.positions, fs, t_len)
    result = evaluate(measured.samples, rec, estimate.room, truth.room, estimate.modes, c,
                      held_ref, held_rec)
    payload = result.to_dict()
    write_json(args.out, payload)
    line = f"pooled PCC {result.pcc_percent.pooled:.2f}%  SNR {payload['snr_db']['pooled']:.2f} dB"
    if result.room_error is not None:
        line += "  room error " + ", ".join(f"{e * 100:.2f}" for e in result.room_error) + " cm"
    if result.holdout_pcc_percent is not None:
        line += f"  held-out PCC {result.holdout_pcc_percent.pooled:.2f}%"
    print(line)
    for flag in result.flags:
        print(f"note: {flag}")
    return EXIT_OK


def cmd_modes(args) -> int:
    try:
        room = RoomGeometry(*args.room)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    print(f"{'nx':>3} {'ny':>3} {'nz':>3}  {'topology':<14} {'f [Hz]':>10} {'omega [rad/s]':>14}")
    for n, omega in enumerate_modes_below(args.fc, room, args.c):
        print(f"{n.nx:>3} {n.ny:>3} {n.nz:>3}  {n.topology:<14} {omega / (2 * np.pi):>10.4f} "
              f"{omega:>14.4f}")
    return EXIT_OK


def cmd_export_kspace(args) -> int:
    report = read_report(args.report)
    write_kspace(args.out, report)
    rows = sum(m.group.size for m in report.modes)
    print(f"wrote {rows} wave vectors to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="roomkspace",
                                     description="Room size and low-frequency modal estimation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="simulate a rigid-wall room measurement bundle")
    p.add_argument("--room", type=_triple, required=True, metavar="LX,LY,LZ")
    p.add_argument("--fc", type=float, default=200.0, help="highest synthesized mode (Hz)")
    p.add_argument("--rt60", type=float, default=1.0)
    p.add_argument("--mics", type=int, default=20)
    p.add_argument("--cube", type=_cube, default=(1.0, None), metavar="SIDE[@X,Y,Z]",
                   help="microphone cube side (m) and optional center (default: room center)")
    p.add_argument("--source", type=_triple, default=None, metavar="X,Y,Z")
    p.add_argument("--fs", type=float, default=1000.0)
    p.add_argument("--duration", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0, help="seed of the modal amplitudes and noise")
    p.add_argument("--mic-seed", type=int, default=None,
                   help="seed of the microphone positions (default: --seed); change it alone "
                        "to draw held-out positions in the same room")
    p.add_argument("--noise-snr", type=float, default=None, metavar="DB")
    p.add_argument("--amplitude-rule", default="source-coupled",
                   choices=("unit", "random", "source-coupled"))
    p.add_argument("--c", type=float, default=SPEED_OF_SOUND)
    p.add_argument("--out", required=True, metavar="DIR")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("estimate", help="estimate room size and modes from a bundle")
    p.add_argument("--in", dest="inp", required=True, metavar="DIR")
    p.add_argument("--fp", type=float, default=70.0)
    p.add_argument("--flo", type=float, default=20.0)
    p.add_argument("--fc", type=float, default=200.0)
    p.add_argument("--rt60-prior", type=float, default=1.0)
    p.add_argument("--sphere-points", type=int, default=2000)
    p.add_argument("--omega-grid", type=int, default=512)
    p.add_argument("--xi-grid", type=int, default=32)
    p.add_argument("--c", type=float, default=SPEED_OF_SOUND)
    p.add_argument("--out", required=True, metavar="REPORT")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("eval", help="score an estimate against ground truth")
    p.add_argument("--truth", required=True, metavar="REPORT")
    p.add_argument("--estimate", required=True, metavar="REPORT")
    p.add_argument("--measurements", required=True, metavar="DIR")
    p.add_argument("--holdout", default=None, metavar="DIR")
    p.add_argument("--out", required=True, metavar="EVAL")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("modes", help="print the rigid-wall mode lattice")
    p.add_argument("--room", type=_triple, required=True, metavar="LX,LY,LZ")
    p.add_argument("--fc", type=float, required=True)
    p.add_argument("--c", type=float, default=SPEED_OF_SOUND)
    p.set_defaults(func=cmd_modes)

    p = sub.add_parser("export-kspace", help="write one wave vector per row for plotting")
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_kspace)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    raise SystemExit(main())
