"""Command-line entry point: simulate, train, restore, eval, bench."""

import functools
import json
import logging
import time
from pathlib import Path
from typing import Any, Dict, Optional

import click
import torch
from dotenv import load_dotenv
from pydantic import BaseModel, ValidationError

from .bench import BenchOptions, bench_sampler
from .errors import (
    BoundsError,
    ConfigurationError,
    DatasetError,
    DegenerateSpecError,
    DimensionError,
    MetricError,
    NumericError,
    OracleLookupError,
    StorageError,
    VolumeIOError,
    WaveSDEError,
    WeightError,
)
from .metrics import EvalOptions, evaluate, write_report
from .motion import PRESETS, MotionSpec, corrupt
from .network import Denoiser, DenoiserConfig, load_checkpoint, load_manifest, save_checkpoint
from .providers import DenoiserProvider, OracleProvider
from .sampler import SamplerConfig, record_oracle_noise, restore, restore_2d_baseline
from .sde import DEFAULT_LAMBDA, build_schedule
from .settings import apply_threads, configure_logging, get_default_seed, get_device
from .training import TrainOptions, load_pairs, train
from .volume import Plane, load_volume, save_volume

load_dotenv()

logger = logging.getLogger(__name__)

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

DATA_ERRORS = (
    VolumeIOError, DatasetError, DimensionError, DegenerateSpecError,
    MetricError, BoundsError, WeightError, OracleLookupError, StorageError,
)


class ScheduleOptions(BaseModel):
    T: int = 100
    lam: float = DEFAULT_LAMBDA


def exit_code_for(error: Exception) -> int:
    if isinstance(error, NumericError):
        return EXIT_NUMERIC
    if isinstance(error, DATA_ERRORS):
        return EXIT_DATA
    return EXIT_USAGE


def handles_errors(f):
    """Turn library errors into a one-line message and the matching exit code."""
    @functools.wraps(f)
    def wrapper(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except (WaveSDEError, ValidationError) as e:
            error = e
        except OSError as e:
            error = StorageError(f"cannot write results ({e})")
        click.echo(f"Error: {error}", err=True)
        raise click.exceptions.Exit(exit_code_for(error))
    return wrapper


def _read_config(path: Optional[str]) -> Dict[str, Any]:
    if not path:
        return {}
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigurationError(f"cannot read config file {path} ({e})") from e
    if not isinstance(payload, dict):
        raise ConfigurationError(f"config file {path} must hold a JSON object")
    return payload


def _effective(model, file_section: Dict[str, Any], flags: Dict[str, Any]):
    """Defaults < config file < explicit command-line flags."""
    values = dict(file_section)
    values.update({k: v for k, v in flags.items() if v is not None})
    return model.model_validate(values)


def _echo_config(path: Path, sections: Dict[str, BaseModel]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {name: json.loads(section.model_dump_json()) for name, section in sections.items()}
    path.write_text(json.dumps(payload, indent=2))
    return path


def _sidecar(out: Path, suffix: str) -> Path:
    return out.with_name(out.name.split(".")[0] + suffix)


def _banner(title: str, lines: Dict[str, Any]) -> None:
    click.echo("\n" + "=" * 60)
    click.echo(title)
    click.echo("=" * 60)
    for key, value in lines.items():
        click.echo(f"{key}: {value}")
    click.echo("=" * 60 + "\n")


@click.group()
@click.option("--threads", type=int, default=None, help="Cap on torch intra-op threads.")
@click.option("--log-level", default=None, help="Logging level (default from WAVESDE_LOG_LEVEL).")
@handles_errors
def cli(threads, log_level):
    """Wavelet-domain pseudo-3D restoration of motion-corrupted volumes."""
    configure_logging(log_level)
    apply_threads(threads)


# ============================================================================
# SIMULATE
# ============================================================================

@cli.command()
@click.argument("in_vol", type=click.Path(dir_okay=False))
@click.argument("out", type=click.Path(dir_okay=False))
@click.option("--preset", type=click.Choice(sorted(PRESETS)), default=None, help="Severity preset.")
@click.option("--mmin", type=float, default=None, help="Minimum fraction of affected lines.")
@click.option("--mmax", type=float, default=None, help="Maximum fraction of affected lines.")
@click.option("--events", type=int, default=None, help="Number of motion events.")
@click.option("--max-translation", type=float, default=None, help="Largest translation in voxels.")
@click.option("--max-rotation", type=float, default=None, help="Largest rotation in degrees.")
@click.option("--seed", type=int, default=None, help="Random seed.")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None, help="JSON config file.")
@handles_errors
def simulate(in_vol, out, preset, mmin, mmax, events, max_translation, max_rotation, seed, config_path):
    """Add synthetic rigid-motion artifacts to a volume."""
    file_cfg = _read_config(config_path).get("motion", {})
    flags = {
        "n_events": events,
        "max_translation": max_translation,
        "max_rotation": max_rotation,
        "seed": seed if seed is not None else file_cfg.get("seed", get_default_seed()),
    }
    if preset is not None:
        flags["m_min"], flags["m_max"] = PRESETS[preset]
    flags.update({k: v for k, v in {"m_min": mmin, "m_max": mmax}.items() if v is not None})
    spec = _effective(MotionSpec, file_cfg, flags)

    out = Path(out)
    vT, report = corrupt(load_volume(in_vol), spec)
    save_volume(vT, out)
    _sidecar(out, ".motion.json").write_text(report.model_dump_json(indent=2))
    _echo_config(_sidecar(out, ".config.json"), {"motion": spec})
    _banner("SIMULATE", {
        "Input": in_vol,
        "Output": out,
        "Affected fraction": f"{report.fraction:.3f}",
        "Motion events": len(report.segments),
    })


# ============================================================================
# TRAIN
# ============================================================================

@cli.command(name="train")
@click.argument("dataset_dir", type=click.Path(file_okay=False))
@click.argument("out_ckpt", type=click.Path(dir_okay=False))
@click.option("--plane", type=click.Choice(["xy", "xz"]), default=None, help="Plane the network learns.")
@click.option("--steps", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--decay-every", type=int, default=None, help="Halve the learning rate every N steps.")
@click.option("--norm", type=click.Choice(["l1", "l2"]), default=None)
@click.option("--eval-size", type=int, default=None, help="Slices in a fixed evaluation batch scored every --eval-every steps.")
@click.option("--eval-every", type=int, default=None)
@click.option("--width", type=int, default=None)
@click.option("--levels", type=int, default=None, help="Encoder/decoder depth.")
@click.option("--block", type=click.Choice(["wavelet", "plain"]), default=None)
@click.option("--wavelet/--image-domain", "wavelet", default=None, help="Train on Haar subbands (default) or pixels.")
@click.option("--diffusion-steps", "T", type=int, default=None, help="Number of diffusion steps T.")
@click.option("--seed", type=int, default=None)
@click.option("--progress/--no-progress", default=None)
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None)
@handles_errors
def train_cmd(dataset_dir, out_ckpt, plane, steps, batch_size, lr, decay_every, norm, eval_size, eval_every, width, levels, block, wavelet, T, seed, progress, config_path):
    """Train one plane's denoiser on <id>.clean.vol / <id>.corrupt.vol pairs."""
    file_cfg = _read_config(config_path)
    opts = _effective(TrainOptions, file_cfg.get("train", {}), {
        "plane": plane, "steps": steps, "batch_size": batch_size, "lr": lr,
        "decay_every": decay_every, "norm": norm, "progress": progress,
        "eval_size": eval_size, "eval_every": eval_every,
        "seed": seed if seed is not None else file_cfg.get("train", {}).get("seed", get_default_seed()),
    })
    net_cfg = _effective(DenoiserConfig, file_cfg.get("network", {}), {
        "width": width, "levels": levels, "block": block, "wavelet": wavelet,
    })
    sched_opts = _effective(ScheduleOptions, file_cfg.get("schedule", {}), {"T": T})
    sched = build_schedule(T=sched_opts.T, lam=sched_opts.lam)

    torch.manual_seed(opts.seed)
    net = Denoiser(net_cfg, plane=opts.plane).to(get_device())
    result = train(net, load_pairs(dataset_dir), sched, opts)

    out = Path(out_ckpt)
    ckpt = save_checkpoint(net.cpu(), out, schedule={"T": sched.T, "lambda": sched.lam})
    curve = result.save_curve(_sidecar(out, ".loss.csv"))
    if result.eval_losses:
        result.save_eval_curve(_sidecar(out, ".eval.csv"))
    _echo_config(_sidecar(out, ".config.json"), {"train": opts, "network": net_cfg, "schedule": sched_opts})
    _banner("TRAIN", {
        "Plane": opts.plane.value,
        "Weights": net.param_count,
        "Steps": result.steps,
        "Final loss": f"{result.final_loss:.5f}",
        "Checkpoint": ckpt,
        "Loss curve": curve,
    })


# ============================================================================
# RESTORE
# ============================================================================

def _plane_network(path: str, plane: Plane) -> Denoiser:
    manifest = load_manifest(path)
    if manifest.plane is not None and manifest.plane != plane:
        raise ConfigurationError(f"checkpoint {path} was trained on {manifest.plane.value}, expected {plane.value}")
    return load_checkpoint(path).to(get_device())


@cli.command(name="restore")
@click.argument("in_vol", type=click.Path(dir_okay=False))
@click.argument("out", type=click.Path(dir_okay=False))
@click.option("--ckpt-xy", type=click.Path(dir_okay=False), default=None)
@click.option("--ckpt-xz", type=click.Path(dir_okay=False), default=None)
@click.option("--mode", type=click.Choice(["3d", "2d"]), default="3d", help="2d scores XY slices only.")
@click.option("--oracle", "oracle_clean", type=click.Path(dir_okay=False), default=None,
              help="Clean volume: restore with recorded exact noise instead of networks.")
@click.option("--alternation", type=click.Choice(["deterministic_mod2", "probabilistic"]), default=None)
@click.option("--alpha", type=float, default=None, help="XY weight for probabilistic alternation.")
@click.option("--chunk-size", type=int, default=None, help="Slices per provider call.")
@click.option("--wavelet/--image-domain", "wavelet", default=None)
@click.option("--diffusion-steps", "T", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--dump-dir", type=click.Path(file_okay=False), default=None, help="Write intermediate volumes here.")
@click.option("--dump-every", type=int, default=10)
@click.option("--progress/--no-progress", default=False)
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None)
@handles_errors
def restore_cmd(in_vol, out, ckpt_xy, ckpt_xz, mode, oracle_clean, alternation, alpha, chunk_size, wavelet, T, seed, dump_dir, dump_every, progress, config_path):
    """Restore a motion-corrupted volume."""
    file_cfg = _read_config(config_path)
    sampler_file = file_cfg.get("sampler", {})
    schedule_file = dict(file_cfg.get("schedule", {}))
    out = Path(out)
    vT = load_volume(in_vol)

    providers = {}
    if oracle_clean is None:
        if ckpt_xy is None or (mode == "3d" and ckpt_xz is None):
            raise ConfigurationError("restore needs --ckpt-xy (and --ckpt-xz in 3d mode) or --oracle")
        nets = {Plane.XY: _plane_network(ckpt_xy, Plane.XY)}
        if mode == "3d":
            nets[Plane.XZ] = _plane_network(ckpt_xz, Plane.XZ)
        domains = {net.config.wavelet for net in nets.values()}
        if len(domains) > 1:
            raise ConfigurationError("the XY and XZ checkpoints work in different domains")
        if wavelet is not None and wavelet not in domains:
            raise ConfigurationError("--wavelet/--image-domain contradicts the checkpoints")
        wavelet = domains.pop()
        trained = load_manifest(ckpt_xy).schedule or {}
        schedule_file.setdefault("T", trained.get("T", 100))
        schedule_file.setdefault("lam", trained.get("lambda", DEFAULT_LAMBDA))

    sched_opts = _effective(ScheduleOptions, schedule_file, {"T": T})
    sched = build_schedule(T=sched_opts.T, lam=sched_opts.lam)
    flags = {
        "alternation": alternation, "chunk_size": chunk_size, "wavelet": wavelet,
        "seed": seed if seed is not None else sampler_file.get("seed", get_default_seed()),
    }
    if alpha is not None:
        flags.update(alpha=alpha, beta=1.0 - alpha)
    cfg = _effective(SamplerConfig, sampler_file, flags)
    if mode == "2d":
        cfg = cfg.model_copy(update={"alpha": 1.0, "beta": 0.0, "alternation": "probabilistic"})

    if oracle_clean is not None:
        store = record_oracle_noise(load_volume(oracle_clean), vT, sched, cfg)
        store.save(_sidecar(out, ".oracle_noise.npz"))
        oracle = OracleProvider(store, wavelet=cfg.wavelet)
        providers = {Plane.XY: oracle, Plane.XZ: oracle}
    else:
        providers = {plane: DenoiserProvider(net, sched) for plane, net in nets.items()}

    steps = []
    started = time.perf_counter()
    kwargs = dict(progress=steps.append, dump_dir=dump_dir, dump_every=dump_every, show_progress=progress)
    if mode == "2d":
        restored = restore_2d_baseline(vT, providers[Plane.XY], sched, cfg, **kwargs)
    else:
        restored = restore(vT, providers, sched, cfg, **kwargs)
    total = time.perf_counter() - started

    save_volume(restored, out)
    timing = {
        "total_seconds": total,
        "per_step_mean_ms": 1000.0 * total / max(len(steps), 1),
        "steps": len(steps),
        "xy_steps": sum(1 for s in steps if s.plane is Plane.XY),
        "xz_steps": sum(1 for s in steps if s.plane is Plane.XZ),
        "wavelet": cfg.wavelet,
        "mode": mode,
    }
    _sidecar(out, ".timing.json").write_text(json.dumps(timing, indent=2))
    _echo_config(_sidecar(out, ".config.json"), {"sampler": cfg, "schedule": sched_opts})
    _banner("RESTORE", {
        "Input": in_vol,
        "Output": out,
        "Mode": mode + (" (oracle)" if oracle_clean else ""),
        "Domain": "wavelet" if cfg.wavelet else "image",
        "Total": f"{total:.2f}s",
        "Per step": f"{timing['per_step_mean_ms']:.1f} ms",
    })


# ============================================================================
# EVAL / BENCH
# ============================================================================

@cli.command(name="eval")
@click.argument("pred", type=click.Path(dir_okay=False))
@click.argument("ref", type=click.Path(dir_okay=False))
@click.argument("out_csv", type=click.Path(dir_okay=False))
@click.option("--data-range", type=float, default=None, help="Intensity range for PSNR/SSIM (default 1.0).")
@click.option("--id", "volume_id", default=None, help="Volume id written in the report.")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None)
@handles_errors
def eval_cmd(pred, ref, out_csv, data_range, volume_id, config_path):
    """Per-plane PSNR/SSIM and z-discontinuity of PRED against REF."""
    opts = _effective(EvalOptions, _read_config(config_path).get("eval", {}), {
        "data_range": data_range, "volume_id": volume_id,
    })
    if opts.volume_id is None:
        opts = opts.model_copy(update={"volume_id": Path(pred).name.split(".")[0]})
    logger.info("Evaluating %s against %s (data range %.3g)", pred, ref, opts.data_range)

    out = Path(out_csv)
    frame = evaluate(load_volume(pred), load_volume(ref), opts.volume_id, opts.data_range)
    write_report(frame, out)
    _echo_config(_sidecar(out, ".config.json"), {"eval": opts})
    _banner("EVAL", {
        "Prediction": pred,
        "Reference": ref,
        "Volume id": opts.volume_id,
        "Report": out,
    })
    click.echo(frame.to_string(index=False))


@cli.command(name="bench")
@click.argument("out_csv", type=click.Path(dir_okay=False))
@click.option("--sizes", type=int, multiple=True, help="Slice sizes to time (repeatable).")
@click.option("--mode", "modes", type=click.Choice(["wavelet", "image"]), multiple=True)
@click.option("--steps", type=int, default=None)
@click.option("--depth", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None)
@handles_errors
def bench_cmd(out_csv, sizes, modes, steps, depth, seed, config_path):
    """Time single sampler steps with and without wavelet-domain execution."""
    opts = _effective(BenchOptions, _read_config(config_path).get("bench", {}), {
        "sizes": list(sizes) or None, "modes": list(modes) or None,
        "steps": steps, "depth": depth, "seed": seed,
    })
    frame = bench_sampler(opts)
    write_report(frame, out_csv)
    _echo_config(_sidecar(Path(out_csv), ".config.json"), {"bench": opts})
    click.echo(frame.to_string(index=False))


def main():
    cli(prog_name="wavesde")


if __name__ == "__main__":
    main()
