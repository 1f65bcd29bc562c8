"""Command-line pipeline: channel -> optimize -> profile / qkd -> keyrate.

Each subcommand reads its parameters from a preset and/or JSON config file
(plus ``--set block.key=value`` overrides), writes its artifacts into
``--outdir`` and finishes with a manifest listing every file it produced.
Exit codes: 0 success, 1 validation failure, 2 runtime/model error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import channel as channel_mod
from . import ga as ga_mod
from . import io_formats as iof
from . import keyrate as keyrate_mod
from . import plotting
from .config import (
    ConfigError,
    ExperimentConfig,
    config_from_dict,
    merge_config,
    preset_config,
    preset_names,
)
from .channel import coupled_efficiency
from .masks import PhaseMask, mask_from_text, mask_to_text
from .photons import (
    EvaluationFailedError,
    PhotonCountOracle,
    random_state_sequence,
    sift_and_tally,
    simulate_counts,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

_SESSION_SIGNAL = 0
_SESSION_DECOY = 1


def _parse_set(values) -> dict:
    overrides: dict = {}
    for item in values or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"--set expects block.key=value, got {item!r}")
        key, raw = item.split("=", 1)
        block, field = key.split(".", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        overrides.setdefault(block, {})[field] = value
    return overrides


def _build_config(args) -> ExperimentConfig:
    cfg = preset_config(args.preset) if args.preset else config_from_dict({})
    if args.config:
        cfg = merge_config(cfg, iof.read_json(args.config))
    overrides = _parse_set(getattr(args, "set", None))
    if overrides:
        cfg = merge_config(cfg, overrides)
    if args.seed is not None:
        cfg = cfg.with_master_seed(args.seed)
    return cfg


def _outdir(args) -> str:
    os.makedirs(args.outdir, exist_ok=True)
    return args.outdir


def _load_mask(path) -> PhaseMask:
    with open(path, "r", encoding="utf-8") as fh:
        return mask_from_text(fh.read())


def cmd_channel(args) -> int:
    cfg = _build_config(args)
    outdir = _outdir(args)
    ch = cfg.channel.generate()

    channel_path = os.path.join(outdir, "channel.json")
    channel_mod.save_channel(ch, channel_path)

    blank = PhaseMask.blank(ch.width, ch.height)
    blank_eta = coupled_efficiency(ch, blank)
    optimum = ch.max_transmittance
    metrics = {
        "target_blank_loss_db": ch.calibration.blank_loss_db,
        "realized_blank_loss_db": channel_mod.loss_db(blank_eta),
        "conjugate_optimum_loss_db": channel_mod.loss_db(optimum),
        "conjugate_enhancement_over_target": optimum / ch.calibration.blank_transmittance,
        "rescaled": ch.rescaled,
    }
    iof.write_manifest(
        os.path.join(outdir, "channel_manifest.json"),
        cfg.to_dict(),
        {"channel": "channel.json"},
        metrics,
    )

    print(f"channel written to {channel_path}")
    print(f"  calibrated blank loss: {metrics['target_blank_loss_db']:.2f} dB")
    print(f"  realized blank-mask loss: {metrics['realized_blank_loss_db']:.2f} dB")
    print(f"  conjugate-mask optimum: {metrics['conjugate_optimum_loss_db']:.2f} dB")
    if ch.rescaled:
        print("  note: draw exceeded the physical bound and was rescaled onto it")
    return EXIT_OK


def cmd_optimize(args) -> int:
    cfg = _build_config(args)
    outdir = _outdir(args)
    ch = channel_mod.load_channel(args.channel)

    ga_config = cfg.ga.ga_config(ch.width, ch.height)
    oracle = PhotonCountOracle(ch, cfg.source, cfg.detector)
    workers = args.workers if args.workers is not None else cfg.ga.workers
    history = ga_mod.run(ga_config, oracle, workers=workers)

    csv_path = os.path.join(outdir, "convergence.csv")
    iof.write_history_csv(history.records, csv_path)
    if history.error is not None:
        print(f"optimization aborted: {history.error}", file=sys.stderr)
        print(f"partial history written to {csv_path}", file=sys.stderr)
        return EXIT_RUNTIME

    blank = PhaseMask.blank(ch.width, ch.height)
    eta_before = coupled_efficiency(ch, blank)
    eta_after = coupled_efficiency(ch, history.best_mask)
    # the blank pattern is always deployable, so a noisy short run can never
    # make the reported result worse than no modulation at all
    fallback = eta_after < eta_before
    best_mask = blank if fallback else history.best_mask
    eta_after = max(eta_after, eta_before)

    mask_path = os.path.join(outdir, "best_mask.txt")
    with open(mask_path, "w", encoding="utf-8") as fh:
        fh.write(mask_to_text(best_mask, ga_config.quant_step))

    metrics = {
        "generations": history.generations,
        "blank_loss_db": channel_mod.loss_db(eta_before),
        "optimized_loss_db": channel_mod.loss_db(eta_after),
        "enhancement": channel_mod.enhancement(eta_after, eta_before),
        "blank_fitness": history.records[0].best_fitness if history.records else None,
        "final_best_fitness": history.best_fitness,
        "fell_back_to_blank": fallback,
    }

    artifacts = {"convergence": "convergence.csv", "best_mask": "best_mask.txt"}
    if cfg.run.emit_figures:
        fig_path = os.path.join(outdir, "convergence.png")
        plotting.convergence_figure(history.records, fig_path, metrics["blank_fitness"])
        artifacts["convergence_figure"] = "convergence.png"
    iof.write_manifest(
        os.path.join(outdir, "optimize_manifest.json"), cfg.to_dict(), artifacts, metrics
    )

    print(f"optimized {history.generations} generations on {args.channel}")
    print(f"  loss before: {metrics['blank_loss_db']:.2f} dB")
    print(f"  loss after:  {metrics['optimized_loss_db']:.2f} dB")
    print(f"  enhancement: {metrics['enhancement']:.1f}x")
    return EXIT_OK


def cmd_profile(args) -> int:
    cfg = _build_config(args)
    outdir = _outdir(args)
    ch = channel_mod.load_channel(args.channel)
    mask = _load_mask(args.mask)

    blank = PhaseMask.blank(ch.width, ch.height)
    maps = {
        "blank": channel_mod.output_intensity(ch, blank),
        "mask": channel_mod.output_intensity(ch, mask),
    }

    artifacts: dict = {}
    contrasts: dict = {}
    mask_hash = iof.sha256_of_file(args.mask)
    for name, intensity in maps.items():
        pgm_name = f"intensity_{name}.pgm"
        meta = iof.write_pgm(intensity, os.path.join(outdir, pgm_name))
        fiber = intensity.reshape(-1)[ch.fiber_pixel]
        background = np.delete(intensity.reshape(-1), ch.fiber_pixel)
        contrasts[name] = float(fiber / background.mean()) if background.mean() > 0 else None
        sidecar = {
            "blank_loss_db": ch.calibration.blank_loss_db,
            "scattering_fraction": ch.scattering_fraction,
            "channel_seed": ch.seed,
            "mask_sha256": mask_hash if name == "mask" else None,
            "fiber_pixel_intensity": float(fiber),
            "contrast": contrasts[name],
            **meta,
        }
        iof.write_json(sidecar, os.path.join(outdir, pgm_name + ".json"))
        artifacts[f"intensity_{name}"] = pgm_name
        artifacts[f"intensity_{name}_meta"] = pgm_name + ".json"

    if cfg.run.emit_figures:
        plotting.intensity_figure(maps, os.path.join(outdir, "intensity.png"))
        artifacts["intensity_figure"] = "intensity.png"

    metrics = {"contrast_blank": contrasts["blank"], "contrast_mask": contrasts["mask"]}
    iof.write_manifest(
        os.path.join(outdir, "profile_manifest.json"), cfg.to_dict(), artifacts, metrics
    )
    print(f"blank-mask contrast: {contrasts['blank']:.2f}")
    print(f"shaped-mask contrast: {contrasts['mask']:.2f}")
    return EXIT_OK


def _run_session(eta: float, intensity: float, pulses: int, cfg, seed_key) -> dict:
    rng = np.random.default_rng(np.random.SeedSequence(seed_key))
    states = random_state_sequence(pulses, rng)
    record = simulate_counts(eta, states, intensity, cfg.source, cfg.detector, rng)
    summary = sift_and_tally(record)
    return {
        "intensity": intensity,
        "pulses": pulses,
        "gain": summary.gain,
        "sifted": summary.sifted,
        "errors": summary.errors,
        "qber": summary.qber,
        "per_state_qber": summary.per_state_qber,
        "monitor_counts": record.d0,
    }


def cmd_qkd(args) -> int:
    cfg = _build_config(args)
    outdir = _outdir(args)
    ch = channel_mod.load_channel(args.channel)
    mask = _load_mask(args.mask) if args.mask else PhaseMask.blank(ch.width, ch.height)

    eta_mask = coupled_efficiency(ch, mask)
    if eta_mask <= 0:
        print("error: mask couples no light into the fiber", file=sys.stderr)
        return EXIT_RUNTIME
    y0 = cfg.background_yield()
    params = keyrate_mod.KeyRateParams()
    pulses = cfg.run.pulses_per_session

    points = []
    for idx, extra in enumerate(args.extra_loss_db):
        if extra < 0:
            print(f"error: extra loss must be >= 0, got {extra}", file=sys.stderr)
            return EXIT_VALIDATION
        eta = eta_mask * 10.0 ** (-extra / 10.0)
        signal = _run_session(
            eta, cfg.source.mu, pulses, cfg, (cfg.run.session_seed, idx, _SESSION_SIGNAL)
        )
        decoy = _run_session(
            eta, cfg.source.nu, pulses, cfg, (cfg.run.session_seed, idx, _SESSION_DECOY)
        )

        point = {
            "extra_loss_db": extra,
            "total_loss_db": channel_mod.loss_db(eta),
            "signal": signal,
            "decoy": decoy,
            "y0": y0,
            "rate": 0.0,
            "diagnostics": None,
        }
        if signal["qber"] is None or decoy["qber"] is None:
            point["diagnostics"] = "no sifted clicks in at least one session; rate forced to 0"
        else:
            obs = keyrate_mod.DecoyObservation(
                mu=cfg.source.mu,
                nu=cfg.source.nu,
                q_mu=signal["gain"],
                e_mu=signal["qber"],
                q_nu=decoy["gain"],
                e_nu=decoy["qber"],
                y0=y0,
            )
            result = keyrate_mod.gllp_rate(obs, params)
            point["observation"] = obs.to_jsonable()
            point["rate"] = result.rate
            point["bounds"] = {
                "y1_lower": result.y1_lower,
                "e1_upper": result.e1_upper,
                "delta1": result.delta1,
                "margin": result.margin,
            }
        points.append(point)

    report = {
        "channel": os.path.basename(args.channel),
        "mask": os.path.basename(args.mask) if args.mask else "blank",
        "mask_loss_db": channel_mod.loss_db(eta_mask),
        "pulses_per_session": pulses,
        "points": points,
    }
    iof.write_json(report, os.path.join(outdir, "qkd_report.json"))

    csv_path = os.path.join(outdir, "qkd_sessions.csv")
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("extra_loss_db,total_loss_db,Q_mu,E_mu,Q_nu,E_nu,Y0,rate\n")
        for p in points:
            emu = p["signal"]["qber"]
            enu = p["decoy"]["qber"]
            fh.write(
                f"{p['extra_loss_db']!r},{p['total_loss_db']!r},"
                f"{p['signal']['gain']!r},{'' if emu is None else repr(emu)},"
                f"{p['decoy']['gain']!r},{'' if enu is None else repr(enu)},"
                f"{p['y0']!r},{p['rate']!r}\n"
            )

    artifacts = {"report": "qkd_report.json", "sessions": "qkd_sessions.csv"}
    if cfg.run.emit_figures and len(points) > 1:
        plotting.skr_vs_loss_figure(points, os.path.join(outdir, "skr_vs_loss.png"))
        artifacts["skr_figure"] = "skr_vs_loss.png"
    metrics = {
        "mask_loss_db": report["mask_loss_db"],
        "rates": [p["rate"] for p in points],
    }
    iof.write_manifest(os.path.join(outdir, "qkd_manifest.json"), cfg.to_dict(), artifacts, metrics)

    for p in points:
        note = f"  ({p['diagnostics']})" if p["diagnostics"] else ""
        print(
            f"total loss {p['total_loss_db']:6.2f} dB: R = {p['rate']:.3e} per pulse{note}"
        )
    return EXIT_OK


def cmd_keyrate(args) -> int:
    outdir = _outdir(args)
    if args.batch:
        rows = keyrate_mod.load_batch_file(args.batch)
    else:
        rows = keyrate_mod.load_reference_table()
    if args.y0 is not None:
        rows = [row.with_y0(args.y0) for row in rows]
    params = keyrate_mod.KeyRateParams(min_margin=args.min_margin)
    report = keyrate_mod.table_batch(rows, params, tolerance=args.tolerance)

    iof.write_json(report.to_jsonable(), os.path.join(outdir, "keyrate_report.json"))
    if rows and not args.no_figure:
        plotting.keyrate_comparison_figure(report, os.path.join(outdir, "keyrate_comparison.png"))
    print(keyrate_mod.format_batch_table(report))

    return EXIT_OK if report.all_within_tolerance else EXIT_VALIDATION


def _add_config_options(parser) -> None:
    parser.add_argument("--preset", choices=preset_names(), help="start from a named scenario")
    parser.add_argument("--config", help="JSON config file overlaid on the preset")
    parser.add_argument(
        "--set",
        action="append",
        metavar="BLOCK.KEY=VALUE",
        help="override a single config value (repeatable)",
    )
    parser.add_argument("--seed", type=int, help="master seed overriding all sub-seeds")
    parser.add_argument("--outdir", default=".", help="directory for artifacts")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scatterkey",
        description="wavefront-shaped QKD through scattering channels: "
        "channel simulation, GA optimization, key-rate analysis",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("channel", help="generate and save a scattering channel")
    _add_config_options(p)
    p.set_defaults(func=cmd_channel)

    p = sub.add_parser("optimize", help="run the GA against the photon-count fitness")
    _add_config_options(p)
    p.add_argument("--channel", required=True, help="channel file from the channel command")
    p.add_argument("--workers", type=int, help="parallel fitness evaluations per generation")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("profile", help="render output-plane intensity maps for a mask")
    _add_config_options(p)
    p.add_argument("--channel", required=True)
    p.add_argument("--mask", required=True, help="mask file (e.g. best_mask.txt)")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("qkd", help="simulate decoy-state sessions and compute the key rate")
    _add_config_options(p)
    p.add_argument("--channel", required=True)
    p.add_argument("--mask", help="mask file; omitted = blank mask")
    p.add_argument(
        "--extra-loss-db",
        type=float,
        nargs="+",
        default=[0.0],
        help="attenuator sweep values added on top of the channel loss",
    )
    p.set_defaults(func=cmd_qkd)

    p = sub.add_parser("keyrate", help="batch key-rate table against reference rates")
    p.add_argument("--batch", help="CSV/JSON batch file; omitted = bundled reference table")
    p.add_argument("--tolerance", type=float, default=0.15, help="relative tolerance per row")
    p.add_argument("--y0", type=float, help="override the background yield of every row")
    p.add_argument(
        "--min-margin",
        type=float,
        default=keyrate_mod.KeyRateParams().min_margin,
        help="significance floor on the key-rate margin (0 = bare formula)",
    )
    p.add_argument("--outdir", default=".", help="directory for artifacts")
    p.add_argument("--no-figure", action="store_true")
    p.set_defaults(func=cmd_keyrate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, keyrate_mod.BatchParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except EvaluationFailedError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
