"""Command-line entry point tying the pipelines together.

One subcommand per pipeline stage. Option values resolve as
flags > config file > defaults, where the config file is a flat
``key = value`` text file passed with ``--config``. Every command that
writes an artifact also writes a ``<output>.run.json`` sidecar with the
resolved configuration, seeds, output hashes, and wall time, and holds a
lock file in the output directory so concurrent runs cannot collide.

Exit codes: 0 success, 2 configuration error, 3 compute error.
"""

from __future__ import annotations

import json
import os
import sys
import time
from hashlib import blake2b
from pathlib import Path

import click
import numpy as np

from . import colorimetry, formats, mapops, neural, space, transport
from .errors import DermalightError, SimulationError
from .optics import SkinParams

CONFIG_ERROR_EXIT = 2
COMPUTE_ERROR_EXIT = 3

LOCK_NAME = ".dermalight.lock"


def _read_config_file(path: str) -> dict[str, str]:
    values = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise click.UsageError(f"config file {path}: {exc}")
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise click.UsageError(f"{path}:{lineno}: expected key = value")
        key, _, value = line.partition("=")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _apply_config(ctx: click.Context, params: dict) -> dict:
    """Fill defaulted parameters from the --config file, if any."""
    config = (ctx.obj or {}).get("config", {})
    from click.core import ParameterSource

    resolved = dict(params)
    for name, value in params.items():
        if name not in config:
            continue
        if ctx.get_parameter_source(name) is not ParameterSource.DEFAULT:
            continue
        raw = config[name]
        if isinstance(value, bool):
            resolved[name] = raw.lower() in ("1", "true", "yes", "on")
        elif isinstance(value, int):
            resolved[name] = int(raw)
        elif isinstance(value, float):
            resolved[name] = float(raw)
        else:
            resolved[name] = raw
    return resolved


def _parse_illuminant(spec: str) -> colorimetry.Illuminant:
    if spec == "d65":
        return colorimetry.d65()
    if spec.startswith("file:"):
        return colorimetry.illuminant_from_file(spec[5:])
    raise click.UsageError(f"illuminant must be 'd65' or 'file:<path>', got {spec!r}")


def _parse_resolutions(text: str) -> tuple[int, ...]:
    try:
        res = tuple(int(t) for t in text.split(","))
    except ValueError:
        raise click.UsageError(f"--res needs comma-separated integers, got {text!r}")
    if len(res) != 5:
        raise click.UsageError("--res needs exactly 5 axis resolutions")
    return res


def _file_hash(path) -> str:
    return blake2b(Path(path).read_bytes(), digest_size=8).hexdigest()


class _RunDirLock:
    """Exclusive per-directory lock; a second run in the same dir fails."""

    def __init__(self, directory: Path):
        self.path = Path(directory) / LOCK_NAME
        self.fd = None

    def __enter__(self):
        try:
            self.fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            os.write(self.fd, str(os.getpid()).encode())
        except FileExistsError:
            raise click.UsageError(
                f"{self.path}: another run holds this directory "
                "(remove the lock file if that run is dead)")
        return self

    def __exit__(self, *exc):
        if self.fd is not None:
            os.close(self.fd)
            self.path.unlink(missing_ok=True)
        return False


def _write_sidecar(out_path, command: str, resolved: dict,
                   outputs: list, started: float) -> None:
    meta = {
        "command": command,
        "config": {k: v for k, v in resolved.items()
                   if isinstance(v, (str, int, float, bool, type(None)))},
        "outputs": {str(p): _file_hash(p) for p in outputs if Path(p).exists()},
        "wall_time_s": round(time.monotonic() - started, 3),
        "threads": os.environ.get("DERMALIGHT_THREADS"),
    }
    Path(str(out_path) + ".run.json").write_text(json.dumps(meta, indent=2))


def _run(ctx, command: str, params: dict, out_key: str, body) -> None:
    """Shared command skeleton: config merge, lock, sidecar, exit codes."""
    resolved = _apply_config(ctx, params)
    out_path = Path(resolved[out_key])
    out_path.parent.mkdir(parents=True, exist_ok=True)
    started = time.monotonic()
    try:
        with _RunDirLock(out_path.parent):
            outputs = body(resolved)
            _write_sidecar(out_path, command, resolved, outputs, started)
    except click.UsageError:
        raise
    except SimulationError as exc:
        raise click.ClickException(str(exc))  # exit 1 -> remapped below
    except DermalightError as exc:
        raise click.UsageError(str(exc))
    except (OSError, ValueError) as exc:
        raise click.UsageError(str(exc))


@click.group()
@click.option("--config", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Flat key = value config file.")
@click.pass_context
def main(ctx, config):
    """Biophysical skin albedo simulation, inversion, and editing."""
    ctx.obj = {"config": _read_config_file(config) if config else {}}


def _param_options(fn):
    for decorator in (
        click.option("--vm", type=float, required=True,
                     help="Epidermal melanin volume fraction."),
        click.option("--vb", type=float, required=True,
                     help="Dermal blood volume fraction."),
        click.option("--t", type=float, required=True,
                     help="Epidermis thickness in micrometers."),
        click.option("--phim", type=float, required=True,
                     help="Eumelanin fraction of total melanin."),
        click.option("--phih", type=float, required=True,
                     help="Deoxyhaemoglobin fraction of total haemoglobin."),
    )[::-1]:
        fn = decorator(fn)
    return fn


def _sim_options(fn):
    for decorator in (
        click.option("--photons", type=int, default=1_000_000, show_default=True,
                     help="Photons per wavelength band."),
        click.option("--seed", type=int, default=0, show_default=True),
        click.option("--illuminant", default="d65", show_default=True,
                     help="'d65' or 'file:<path>'."),
    )[::-1]:
        fn = decorator(fn)
    return fn


@main.command()
@_param_options
@_sim_options
@click.option("--out", type=click.Path(), required=True,
              help="Output spectrum CSV.")
@click.pass_context
def simulate(ctx, **params):
    """Simulate a reflectance spectrum and print its linear RGB albedo."""

    def body(r):
        p = SkinParams(r["vm"], r["vb"], r["t"], r["phim"], r["phih"]).validate()
        cfg = transport.SimConfig(photons_per_band=r["photons"], seed=r["seed"])
        ill = _parse_illuminant(r["illuminant"])
        result = transport.simulate_spectrum(p, cfg)
        transport.spectrum_to_csv(r["out"], cfg.grid, result)
        rgb = colorimetry.xyz_to_linear_rgb(
            colorimetry.spectrum_to_xyz(result.reflectance, ill), ill)
        click.echo(f"rgb {rgb[0]:.6f} {rgb[1]:.6f} {rgb[2]:.6f}")
        return [r["out"]]

    _run(ctx, "simulate", params, "out", body)


@main.command("build-lut")
@click.option("--res", default="16,16,8,8,8", show_default=True,
              help="Comma-separated node counts for the 5 axes.")
@_sim_options
@click.option("--out", type=click.Path(), required=True, help="Output LUT file.")
@click.pass_context
def build_lut(ctx, **params):
    """Simulate the RGB albedo LUT over the warped parameter grid."""

    def body(r):
        res = _parse_resolutions(r["res"])
        cfg = transport.SimConfig(photons_per_band=r["photons"], seed=r["seed"])
        ill = _parse_illuminant(r["illuminant"])
        lut = space.build_lut(res, cfg, ill=ill)
        formats.save_lut(lut, r["out"])
        click.echo(f"lut {lut.node_count} nodes -> {r['out']}")
        return [r["out"]]

    _run(ctx, "build-lut", params, "out", body)


@main.command("gen-dataset")
@click.option("--n", type=int, required=True, help="Total record count.")
@click.option("--source", type=click.Choice(["monte_carlo", "lut_interp"]),
              default="monte_carlo", show_default=True)
@click.option("--lut", type=click.Path(exists=True, dir_okay=False),
              default=None, help="LUT file for the lut_interp source.")
@click.option("--sampler", type=click.Choice(["halton", "uniform"]),
              default="halton", show_default=True)
@_sim_options
@click.option("--out", type=click.Path(), required=True,
              help="Output dataset file.")
@click.pass_context
def gen_dataset(ctx, **params):
    """Generate an 80/20 train/validation dataset of (params, albedo) pairs."""

    def body(r):
        cfg = transport.SimConfig(photons_per_band=r["photons"], seed=r["seed"])
        lut = formats.load_lut(r["lut"]) if r["lut"] else None
        ill = _parse_illuminant(r["illuminant"])
        ds = space.gen_dataset(r["n"], r["source"], cfg, lut=lut,
                               sampler=r["sampler"], seed=r["seed"], ill=ill)
        formats.save_dataset(ds, r["out"])
        click.echo(f"dataset {len(ds)} records -> {r['out']}")
        return [r["out"]]

    _run(ctx, "gen-dataset", params, "out", body)


@main.command()
@click.option("--dataset", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--epochs", type=int, default=400, show_default=True)
@click.option("--batch-size", type=int, default=4096, show_default=True)
@click.option("--lr", type=float, default=1e-4, show_default=True)
@click.option("--hidden-width", type=int, default=70, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True,
              help="Output weights file.")
@click.option("--history", type=click.Path(), default=None,
              help="Optional per-epoch loss CSV.")
@click.pass_context
def train(ctx, **params):
    """Train the encoder/decoder pair on a generated dataset."""

    def body(r):
        ds = formats.load_dataset(r["dataset"])
        cfg = neural.TrainConfig(learning_rate=r["lr"],
                                 batch_size=r["batch_size"],
                                 epochs=r["epochs"], seed=r["seed"],
                                 hidden_width=r["hidden_width"])
        result = neural.train(ds, cfg)
        meta = {"roles": ["encoder_best", "decoder_best",
                          "encoder_final", "decoder_final"],
                "train_config": cfg.to_dict(),
                "dataset": _file_hash(r["dataset"]),
                "final_val_total": result.history[-1]["val"].total}
        formats.save_mlps([result.best_encoder, result.best_decoder,
                           result.encoder, result.decoder], r["out"], meta)
        outputs = [r["out"]]
        if r["history"]:
            neural.history_to_csv(r["history"], result.history)
            outputs.append(r["history"])
        last = result.history[-1]["val"]
        click.echo(f"trained {r['epochs']} epochs, val loss {last.total:.6f} "
                   f"-> {r['out']}")
        return outputs

    _run(ctx, "train", params, "out", body)


def _load_role(path, role: str) -> neural.Mlp:
    mlps, meta = formats.load_mlps(path)
    roles = meta.get("roles", [])
    if role in roles:
        return mlps[roles.index(role)]
    raise click.UsageError(f"{path}: no network with role {role!r}")


def _load_method(r) -> dict:
    if r["method"] == "lut":
        if not r["lut"]:
            raise click.UsageError("--method lut needs --lut")
        return {"lut": formats.load_lut(r["lut"])}
    if not r["weights"]:
        raise click.UsageError("--method neural needs --weights")
    return {}  # caller picks encoder or decoder


def _method_options(fn):
    for decorator in (
        click.option("--method", type=click.Choice(["lut", "neural"]),
                     required=True),
        click.option("--lut", type=click.Path(exists=True, dir_okay=False),
                     default=None),
        click.option("--weights", type=click.Path(exists=True, dir_okay=False),
                     default=None),
    )[::-1]:
        fn = decorator(fn)
    return fn


@main.command()
@click.option("--image", type=click.Path(exists=True, dir_okay=False),
              required=True, help="Input albedo image (.png or .pfm).")
@_method_options
@click.option("--mask", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Grayscale validity mask image.")
@click.option("--out", type=click.Path(), required=True,
              help="Output parameter-map stem.")
@click.pass_context
def invert(ctx, **params):
    """Invert an albedo image to five biophysical parameter maps."""

    def body(r):
        albedo = formats.read_image(r["image"])
        mask = _load_mask(r["mask"])
        kwargs = _load_method(r)
        if r["method"] == "neural":
            kwargs["encoder"] = _load_role(r["weights"], "encoder_best")
        pm = mapops.invert_map(albedo, mask=mask, **kwargs)
        formats.save_param_maps(pm, r["out"])
        click.echo(f"inverted {pm.width}x{pm.height} -> {r['out']}")
        return [str(Path(r["out"]).with_suffix(".json"))]

    _run(ctx, "invert", params, "out", body)


def _load_mask(path):
    if path is None:
        return None
    image = formats.read_image(path) if path.endswith(".png") \
        else formats.read_pfm(path)
    if image.ndim == 3:
        image = image.mean(axis=2)
    return image > mapops.MASK_THRESHOLD


@main.command()
@click.option("--maps", type=click.Path(), required=True,
              help="Parameter-map stem from invert/edit.")
@_method_options
@click.option("--passthrough", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Image copied into masked-out texels.")
@click.option("--out", type=click.Path(), required=True,
              help="Output albedo image (.png or .pfm).")
@click.pass_context
def reconstruct(ctx, **params):
    """Reconstruct a linear-RGB albedo image from parameter maps."""

    def body(r):
        pm = formats.load_param_maps(r["maps"])
        kwargs = _load_method(r)
        if r["method"] == "neural":
            kwargs["decoder"] = _load_role(r["weights"], "decoder_best")
        passthrough = formats.read_image(r["passthrough"]) \
            if r["passthrough"] else None
        image = mapops.reconstruct_map(pm, passthrough=passthrough, **kwargs)
        formats.write_image(r["out"], image)
        click.echo(f"reconstructed {pm.width}x{pm.height} -> {r['out']}")
        return [r["out"]]

    _run(ctx, "reconstruct", params, "out", body)


@main.command()
@click.option("--maps", type=click.Path(), required=True)
@click.option("--preset", default=None,
              help=f"One of {', '.join(mapops.preset_names())}.")
@click.option("--op", "ops", multiple=True,
              help="axis:kind:value with axis in "
                   f"{','.join(mapops.AXIS_NAMES)} and kind scale|set|offset.")
@click.option("--mask", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Restrict the edit to masked-in texels.")
@click.option("--out", type=click.Path(), required=True,
              help="Output parameter-map stem.")
@click.pass_context
def edit(ctx, **params):
    """Apply biophysical edits to parameter maps."""

    def body(r):
        pm = formats.load_param_maps(r["maps"])
        mask = _load_mask(r["mask"])
        if (r["preset"] is None) == (not r["ops"]):
            raise click.UsageError("pass either --preset or --op (not both)")
        if r["preset"] is not None:
            spec = mapops.preset_spec(r["preset"], mask)
        else:
            spec = mapops.EditSpec([_parse_op(text, mask) for text in r["ops"]])
        report = mapops.edit(pm, spec)
        formats.save_param_maps(report.maps, r["out"])
        click.echo(f"edited -> {r['out']} ({report.clamped} values clamped)")
        return [str(Path(r["out"]).with_suffix(".json"))]

    _run(ctx, "edit", params, "out", body)


def _parse_op(text: str, mask) -> mapops.EditOp:
    parts = text.split(":")
    if len(parts) != 3:
        raise click.UsageError(f"--op needs axis:kind:value, got {text!r}")
    axis_name, kind, value = parts
    if axis_name not in mapops.AXIS_NAMES:
        raise click.UsageError(f"unknown axis {axis_name!r}")
    try:
        return mapops.EditOp(mapops.AXIS_NAMES.index(axis_name), kind,
                             float(value), mask)
    except ValueError:
        raise click.UsageError(f"--op value must be numeric, got {value!r}")


@main.command()
@click.option("--a", "image_a", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--b", "image_b", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--mask", type=click.Path(exists=True, dir_okay=False),
              default=None)
@click.option("--gain", type=float, default=1.0, show_default=True,
              help="Scale factor for the error image.")
@click.option("--error-out", type=click.Path(), default=None,
              help="Optional |a-b| image output.")
@click.option("--out", type=click.Path(), required=True,
              help="Output JSON metrics report.")
@click.pass_context
def metrics(ctx, **params):
    """Compute the MSE between two images over the masked-in texels."""

    def body(r):
        a = formats.read_image(r["image_a"])
        b = formats.read_image(r["image_b"])
        mask = _load_mask(r["mask"])
        mse, per_channel, error_image = mapops.error_metrics(
            a, b, mask, r["gain"])
        outputs = [r["out"]]
        if r["error_out"]:
            formats.write_image(r["error_out"], error_image)
            outputs.append(r["error_out"])
        Path(r["out"]).write_text(json.dumps(
            {"mse": mse, "mse_rgb": per_channel.tolist()}, indent=2))
        click.echo(f"mse {mse:.9g}")
        click.echo("mse_rgb " + " ".join(f"{c:.9g}" for c in per_channel))
        return outputs

    _run(ctx, "metrics", params, "out", body)


@main.command("export-data")
@click.option("--out-dir", type=click.Path(file_okay=False), required=True,
              help="Directory for the CMF/illuminant audit CSVs.")
@click.pass_context
def export_data(ctx, **params):
    """Export the embedded matching functions and illuminant for audit."""
    resolved = _apply_config(ctx, params)
    out_dir = Path(resolved["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    from .optics import GRID
    bars = colorimetry.cmf()
    ill = colorimetry.d65()
    np.savetxt(out_dir / "cmf.csv",
               np.column_stack([GRID.wavelengths, bars]), delimiter=",",
               header="wavelength_nm,xbar,ybar,zbar", comments="", fmt="%.9g")
    np.savetxt(out_dir / "illuminant_d65.csv",
               np.column_stack([GRID.wavelengths, ill.power]), delimiter=",",
               header="wavelength_nm,power", comments="", fmt="%.9g")
    click.echo(f"exported -> {out_dir}")


def entrypoint(argv=None) -> int:
    """Script entry with the documented exit-code scheme."""
    try:
        main.main(args=argv, standalone_mode=False)
        return 0
    except click.UsageError as exc:
        exc.show()
        return CONFIG_ERROR_EXIT
    except click.ClickException as exc:
        exc.show()
        return COMPUTE_ERROR_EXIT
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.exceptions.Abort:
        return CONFIG_ERROR_EXIT
    except DermalightError as exc:
        click.echo(f"error: {exc}", err=True)
        return COMPUTE_ERROR_EXIT


if __name__ == "__main__":
    sys.exit(entrypoint())
