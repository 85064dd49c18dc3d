"""Command-line harness: synth, fit, eval, calibrate, sweep.

Exit codes: 0 success, 2 usage error, 3 input/output or data error,
4 numerical failure. Option values resolve as command-line flag, then the
``--config`` JSON file, then the built-in default; the resolved values and
their sources are echoed into every report.
"""

from __future__ import annotations

import csv
import functools
import hashlib
import io as _stdio
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click

from . import io as bio
from .calibration import merge_states
from .errors import BdbfError, FormatError, InputError, NumericalError
from .pipeline import FitOptions, PriorRequiredError, infer, measure_nees, score
from .synth import SynthConfig, generate, sample_sparsity_sweep

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4

COMMANDS = ("synth", "fit", "eval", "calibrate", "sweep")
SWEEP_COLUMNS = (
    "seed", "level", "n_obs", "mode", "alpha", "beta", "em_iters", "converged",
    "mae", "rmse", "delta1", "ause", "auce", "nll",
)


def _fail(message: str, code: int):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except PriorRequiredError as exc:
            raise click.UsageError(str(exc)) from None
        except NumericalError as exc:
            _fail(f"[{exc.code}] {exc}", EXIT_NUMERICAL)
        except (FormatError, InputError) as exc:
            _fail(f"[{exc.code}] {exc}", EXIT_IO)
        except BdbfError as exc:
            _fail(f"[{exc.code}] {exc}", EXIT_IO)
        except OSError as exc:
            _fail(f"[io] {exc}", EXIT_IO)

    return wrapper


# -- option parsing helpers -------------------------------------------------


def parse_seeds(text: str) -> list[int]:
    """``"1,2,5-7"`` -> ``[1, 2, 5, 6, 7]``."""
    seeds = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise ValueError("no seeds given")
    if min(seeds) < 0:
        raise ValueError("seeds must be non-negative")
    return seeds


def parse_level(text) -> int | float:
    """A sparsity level: integers are counts, decimals are fractions of the image."""
    if isinstance(text, (int, float)):
        return text
    s = str(text).strip()
    if any(ch in s for ch in ".eE"):
        return float(s)
    return int(s)


def parse_levels(text) -> list[int | float]:
    if isinstance(text, (list, tuple)):
        return [parse_level(t) for t in text]
    return [parse_level(t) for t in str(text).split(",") if t.strip()]


def _callback(parser):
    def cb(ctx, param, value):
        if value is None:
            return None
        try:
            return parser(value)
        except ValueError as exc:
            raise click.BadParameter(str(exc)) from None

    return cb


def _cap(value: float | None) -> float | None:
    if value is None or math.isinf(value) or value <= 0.0:
        return None
    return value


def _echo_config(ctx: click.Context) -> dict:
    out = {}
    for name, value in sorted(ctx.params.items()):
        source = ctx.get_parameter_source(name)
        out[name] = {"value": value, "source": source.name.lower() if source else "default"}
    return out


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        _fail(f"[io] cannot read config: {exc}", EXIT_IO)
    except json.JSONDecodeError as exc:
        raise click.UsageError(f"config file is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise click.UsageError("config file must hold a JSON object")
    flat = {k.replace("-", "_"): v for k, v in doc.items() if k not in COMMANDS}
    default_map = {}
    for cmd in COMMANDS:
        section = doc.get(cmd, {})
        if not isinstance(section, dict):
            raise click.UsageError(f"config section {cmd!r} must be an object")
        default_map[cmd] = {**flat, **{k.replace("-", "_"): v for k, v in section.items()}}
    return default_map


def _fit_options(ctx: click.Context) -> FitOptions:
    p = ctx.params
    cal = bio.read_calibration(p["calibration"]) if p.get("calibration") else None
    return FitOptions(
        em_max_iters=p["em_max_iters"],
        em_tol=p["em_tol"],
        alpha0=p["alpha0"],
        beta0=p["beta0"],
        include_noise=p["include_noise"],
        ml_only=p.get("ml_only", False),
        broad_prior=p.get("broad_prior", False),
        calibration=cal,
    )


def _fit_flags(fn):
    opts = [
        click.option("--em-max-iters", type=click.IntRange(min=0), default=8, show_default=True,
                     help="Maximum EM re-estimation steps."),
        click.option("--em-tol", type=click.FloatRange(min=0.0), default=0.01, show_default=True,
                     help="Stop when |delta beta| / beta falls below this."),
        click.option("--alpha0", type=click.FloatRange(min=0.0, min_open=True), default=1.0, show_default=True,
                     help="Initial prior precision scale."),
        click.option("--beta0", type=click.FloatRange(min=0.0, min_open=True), default=None,
                     help="Initial noise precision [default: sqrt(N)]."),
        click.option("--include-noise", is_flag=True, help="Add 1/beta to the predictive variance."),
        click.option("--calibration", type=click.Path(dir_okay=False), default=None,
                     help="Calibration JSON; variances are scaled by its mean NEES."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _metric_flags(fn):
    opts = [
        click.option("--ause-space", type=click.Choice(["latent", "depth"]), default="latent", show_default=True),
        click.option("--step", type=click.FloatRange(min=0.0, max=1.0, min_open=True), default=0.01,
                     show_default=True, help="Sparsification removal step."),
        click.option("--grid", type=click.IntRange(min=2), default=100, show_default=True,
                     help="Number of coverage levels p for AUCE."),
        click.option("--base-metric", type=click.Choice(["mae", "rmse"]), default="mae", show_default=True),
        click.option("--depth-cap", type=float, default=80.0, show_default=True,
                     help="Score only pixels with true depth below this (<= 0 or inf disables)."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _scene_flags(fn):
    opts = [
        click.option("--h", "height", type=click.IntRange(min=1), default=64, show_default=True),
        click.option("--w", "width", type=click.IntRange(min=1), default=64, show_default=True),
        click.option("--m", "num_bases", type=click.IntRange(min=1), default=8, show_default=True),
        click.option("--bias/--no-bias", default=True, show_default=True, help="Channel 0 is constant one."),
        click.option("--beta-true", type=float, default=4.0, show_default=True,
                     help="Latent noise precision (inf for noiseless scenes)."),
        click.option("--noise", type=click.Choice(["gaussian", "laplace"]), default="gaussian", show_default=True),
        click.option("--smoothness", type=click.FloatRange(min=0.0), default=6.0, show_default=True,
                     help="Basis correlation length in pixels."),
        click.option("--cap", "sample_cap", type=float, default=80.0, show_default=True,
                     help="Only pixels closer than this are sampled (<= 0 or inf disables)."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _scene_config(p: dict, seed: int, sparsity) -> SynthConfig:
    return SynthConfig(
        height=p["height"], width=p["width"], num_bases=p["num_bases"], bias=p["bias"], seed=seed,
        noise_precision=p["beta_true"], sparsity=sparsity, smoothness=p["smoothness"],
        noise_family=p["noise"], depth_cap=_cap(p["sample_cap"]),
    )


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- commands ---------------------------------------------------------------


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="JSON file of option defaults (flat or per-command sections).")
@click.version_option(package_name="artifact")
@click.pass_context
def main(ctx: click.Context, config_path: str | None):
    """Bayesian deep basis fitting for depth completion."""
    ctx.default_map = _load_config(config_path)


@main.command()
@click.option("--seed", "seeds", default="0", show_default=True, callback=_callback(parse_seeds),
              help="Seed list, e.g. '1' or '1,2,5-8'.")
@_scene_flags
@click.option("--sparsity", default="2000", show_default=True, callback=_callback(parse_level),
              help="Measurement count (integer) or fraction of pixels (decimal).")
@click.option("--write-prior", is_flag=True, help="Also write the generating prior as prior.json.")
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.pass_context
@handle_errors
def synth(ctx, seeds, sparsity, write_prior, out, **_):
    """Generate synthetic scenes: basis, sparse depth and ground-truth files per seed."""
    out = Path(out)
    manifest = {"files": []}
    cfg = None
    for seed in seeds:
        cfg = _scene_config(ctx.params, seed, sparsity)
        paths = bio.write_scene(generate(cfg), out, prefix=f"seed{seed}_")
        entry = {"seed": seed}
        for kind, path in paths.items():
            entry[kind] = str(path)
            entry[f"{kind}_sha256"] = _sha256(path)
        manifest["files"].append(entry)
    if write_prior and cfg is not None:
        path = bio.write_prior(cfg.prior(), out / "prior.json")
        manifest["prior"] = str(path)
    click.echo(bio.dumps_json(manifest), nl=False)


@main.command()
@click.option("--basis", type=click.Path(dir_okay=False), required=True)
@click.option("--sparse", type=click.Path(dir_okay=False), required=True)
@click.option("--prior", type=click.Path(dir_okay=False), default=None,
              help="Shared prior JSON (required when there are no measurements).")
@click.option("--out", type=click.Path(file_okay=False), required=True)
@_fit_flags
@click.option("--ml-only", is_flag=True, help="Least-squares fit without a prior.")
@click.option("--broad-prior", is_flag=True, help="Posterior at a vanishing prior precision.")
@click.pass_context
@handle_errors
def fit(ctx, basis, sparse, prior, out, **_):
    """Fit weights to sparse depth and write the dense latent mean/variance maps."""
    opts = _fit_options(ctx)
    if opts.ml_only and opts.broad_prior:
        raise click.UsageError("--ml-only and --broad-prior are mutually exclusive")
    basis_map = bio.read_basis(basis)
    sparse_set = bio.read_sparse(sparse)
    prior_obj = bio.read_prior(prior) if prior else None
    field, summary = infer(basis_map, sparse_set, prior_obj, opts)
    out = Path(out)
    pred_path = bio.write_prediction(field, out / "prediction.bdbf")
    report = {
        "command": "fit",
        "config": _echo_config(ctx),
        "fit": summary,
        "metrics": None,
        "curves": None,
        "outputs": {"prediction": str(pred_path)},
    }
    bio.write_report(report, out / "report.json")
    click.echo(str(out / "report.json"))


@main.command(name="eval")
@click.option("--pred", type=click.Path(dir_okay=False), required=True, help="Prediction file from 'fit'.")
@click.option("--truth", type=click.Path(dir_okay=False), required=True, help="Ground-truth depth map.")
@click.option("--fit-report", type=click.Path(dir_okay=False), default=None,
              help="Fit report whose summary is copied into this report.")
@click.option("--out", type=click.Path(file_okay=False), required=True)
@_metric_flags
@click.pass_context
@handle_errors
def eval_cmd(ctx, pred, truth, fit_report, out, ause_space, step, grid, base_metric, depth_cap):
    """Score a prediction: MAE, RMSE, delta1, AUSE, AUCE, NLL plus curve CSVs."""
    field = bio.read_prediction(pred)
    depth = bio.read_depth_map(truth)
    if field.shape != depth.shape:
        raise InputError(f"prediction shape {field.shape} does not match truth {depth.shape}")
    metrics, curves = score(field, depth, depth_cap=_cap(depth_cap), base_metric=base_metric,
                            step=step, grid=grid, ause_space=ause_space)
    out = Path(out)
    curve_paths = {name: str(bio.write_curve(c, out / f"{name}.csv")) for name, c in curves.items()}
    fit_summary = bio.read_report(fit_report).get("fit") if fit_report else None
    report = {
        "command": "eval",
        "config": _echo_config(ctx),
        "fit": fit_summary,
        "metrics": metrics,
        "curves": curve_paths,
    }
    bio.write_report(report, out / "report.json")
    click.echo(bio.dumps_json(metrics), nl=False)


@main.command()
@click.option("--pred", "preds", type=click.Path(dir_okay=False), multiple=True,
              help="Prediction file; repeat once per scene, paired in order with --truth.")
@click.option("--truth", "truths", type=click.Path(dir_okay=False), multiple=True)
@click.option("--depth-cap", type=float, default=80.0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="Calibration JSON to write.")
@click.pass_context
@handle_errors
def calibrate(ctx, preds, truths, depth_cap, out):
    """Measure mean NEES over a batch of predictions with ground truth."""
    if not preds:
        raise click.UsageError("empty batch: give at least one --pred/--truth pair")
    if len(preds) != len(truths):
        raise click.UsageError(f"{len(preds)} --pred but {len(truths)} --truth files")
    states = [
        measure_nees(bio.read_prediction(p), bio.read_depth_map(t), _cap(depth_cap))
        for p, t in zip(preds, truths)
    ]
    state = merge_states(states)
    if state.n_pixels == 0:
        raise InputError("no pixels with positive predicted scale in the batch")
    doc = {
        "format": "bdbf-calibration",
        "version": bio.VERSION,
        **state.to_dict(),
        "config": _echo_config(ctx),
    }
    bio.write_json(doc, out)
    click.echo(bio.dumps_json(state.to_dict()), nl=False)


def _sweep_rows(p: dict, seed: int, levels, prior, opts: FitOptions) -> list[dict]:
    scene = generate(_scene_config(p, seed, 0))
    scene_prior = prior if prior is not None else scene.config.prior()
    rows = []
    for level, sparse in zip(levels, sample_sparsity_sweep(scene, levels)):
        field, summary = infer(scene.basis, sparse, scene_prior, opts)
        metrics, _ = score(field, scene.depth_true, depth_cap=_cap(p["depth_cap"]),
                           base_metric=p["base_metric"], step=p["step"], grid=p["grid"],
                           ause_space=p["ause_space"])
        rows.append({"seed": seed, "level": level, **summary, **metrics})
    return rows


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("BDBF_THREADS", "1")))
    except ValueError:
        return 1


def _csv_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


@main.command()
@click.option("--levels", default="500,250,50,0", show_default=True, callback=_callback(parse_levels),
              help="Nested sparsity levels (counts or fractions).")
@click.option("--seed", "seeds", default="1-5", show_default=True, callback=_callback(parse_seeds))
@_scene_flags
@click.option("--prior", type=click.Path(dir_okay=False), default=None,
              help="Shared prior JSON [default: each scene's generating prior].")
@_fit_flags
@_metric_flags
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="Aggregate CSV to write.")
@click.pass_context
@handle_errors
def sweep(ctx, levels, seeds, prior, out, **_):
    """Fit nested sparsity levels over several seeds; one CSV row per (seed, level)."""
    p = ctx.params
    opts = _fit_options(ctx)
    prior_obj = bio.read_prior(prior) if prior else None
    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        chunks = list(pool.map(lambda s: _sweep_rows(p, s, levels, prior_obj, opts), seeds))
    buf = _stdio.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    for chunk in chunks:
        for row in chunk:
            writer.writerow([_csv_cell(row.get(c)) for c in SWEEP_COLUMNS])
    bio.atomic_write_text(out, buf.getvalue())
    click.echo(out)


if __name__ == "__main__":  # pragma: no cover
    main()
