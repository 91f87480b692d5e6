"""Command-line entry point: ``fvae <subcommand> ...``.

Exit codes: 0 ok, 2 usage or config error, 3 numeric failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .autodiff import NumericalError
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .checks import SCOPES, run_checks
from .config import ConfigError, RunConfig, config_hash, load_config
from .datasets import (Dataset, DatasetFormatError, gen_gaussian_ring, gen_shapes, gen_two_moons,
                       load_dataset, save_dataset)
from .evaluation import bits_per_dim, energy_distance, flow_exact_log_density, grid_integral_2d, write_report
from .model import FVAEModel
from .objectives import TERMS
from .rng import Rng
from .runtime import estimate_log_likelihood, interpolate, sample
from .training import train

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _versions() -> dict[str, str]:
    return {"fvae": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}


def write_manifest(path: Path, command: str, **fields) -> None:
    body = {"command": command, "versions": _versions(), **fields}
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")


def make_dataset(values: dict) -> Dataset:
    kind, n, seed = values["data.kind"], values["data.n"], values["data.seed"]
    if kind == "two_moons":
        return gen_two_moons(n, values["data.noise"], seed)
    if kind == "gaussian_ring":
        return gen_gaussian_ring(n, values["data.k"], values["data.radius"], values["data.sd"], seed)
    if kind == "shapes":
        return gen_shapes(n, values["data.side"], seed)
    return load_dataset(values["data.path"])


def image_side(dim: int) -> int | None:
    side = math.isqrt(dim)
    return side if side * side == dim and dim > 2 else None


def write_points_csv(points: np.ndarray, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in points:
            w.writerow([repr(float(v)) for v in row])


def to_pixels(values: np.ndarray) -> np.ndarray:
    """Map [-1, 1] linearly onto 0..255."""
    return np.clip(np.rint((np.asarray(values) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def tile_grid(images: np.ndarray, side: int, cols: int | None = None) -> np.ndarray:
    """Arrange (n, side*side) images in a grid; empty cells stay at -1."""
    n = images.shape[0]
    cols = cols or math.ceil(math.sqrt(n))
    rows = math.ceil(n / cols)
    grid = np.full((rows * side, cols * side), -1.0)
    for k, img in enumerate(images):
        r, c = divmod(k, cols)
        grid[r * side:(r + 1) * side, c * side:(c + 1) * side] = img.reshape(side, side)
    return grid


def write_pgm(grid: np.ndarray, path: Path) -> None:
    pix = to_pixels(grid)
    h, w = pix.shape
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pix.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    magic, w, h, maxval, _ = raw.split(maxsplit=4)
    if magic != b"P5" or maxval != b"255":
        raise ValueError(f"{path}: not an 8-bit P5 PGM")
    w, h = int(w), int(h)
    return np.frombuffer(raw[-w * h:], dtype=np.uint8).reshape(h, w)


def write_samples(points: np.ndarray, data_dim: int, out: Path, stem: str) -> Path:
    side = image_side(data_dim)
    if side is None:
        path = out / f"{stem}.csv"
        write_points_csv(points, path)
    else:
        path = out / f"{stem}.pgm"
        write_pgm(tile_grid(points, side), path)
    return path


def _load_model(path) -> FVAEModel:
    try:
        return load_checkpoint(path)
    except (OSError, CheckpointError) as exc:
        raise CliError(EXIT_IO, f"cannot load checkpoint {path}: {exc}") from None


def _load_data(path) -> Dataset:
    try:
        return load_dataset(path)
    except (OSError, DatasetFormatError) as exc:
        raise CliError(EXIT_IO, f"cannot load dataset {path}: {exc}") from None


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot create output directory {out}: {exc}") from None
    return out


# ---- subcommands ----

def cmd_generate_data(args) -> int:
    values = {"data.kind": args.kind, "data.n": args.n, "data.seed": args.seed,
              "data.noise": args.noise, "data.k": args.k, "data.radius": args.radius,
              "data.sd": args.sd, "data.side": args.side}
    if args.kind == "file":
        raise CliError(EXIT_USAGE, "generate-data: kind must be a generator")
    try:
        ds = make_dataset(values)
    except ValueError as exc:
        raise CliError(EXIT_USAGE, str(exc)) from None
    out = Path(args.out)
    _out_dir(out.parent)
    save_dataset(ds, out)
    write_manifest(out.with_name(out.name + ".manifest.json"), "generate-data",
                   **{k: v for k, v in values.items()}, rows=len(ds), dim=ds.dim)
    print(f"wrote {len(ds)} x {ds.dim} points to {out}")
    return EXIT_OK


def cmd_train(config_path, out_dir=None) -> int:
    """Train from a config file and write checkpoint, history and manifest."""
    try:
        values = load_config(config_path)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read config {config_path}: {exc}") from None
    except ConfigError as exc:
        raise CliError(EXIT_USAGE, f"config error at key '{exc.key}': {exc}") from None
    run = RunConfig(values)
    try:
        full = make_dataset(values)
    except (OSError, DatasetFormatError) as exc:
        raise CliError(EXIT_IO, f"cannot load dataset: {exc}") from None
    except ValueError as exc:
        raise CliError(EXIT_USAGE, f"data config: {exc}") from None
    train_set, held_out = full.split(values["data.seed"])
    try:
        mcfg = run.model_config(full.dim)
        tcfg = run.train_config()
    except ConfigError as exc:
        raise CliError(EXIT_USAGE, f"config error at key '{exc.key}': {exc}") from None

    out = _out_dir(out_dir or values["output.dir"])
    model = FVAEModel(mcfg)

    def on_checkpoint(step: int) -> None:
        save_checkpoint(model, out / f"model_step{step}.fvck")

    try:
        history = train(model, train_set, tcfg, on_checkpoint)
    except NumericalError as exc:
        raise CliError(EXIT_NUMERIC, f"non-finite loss at step {exc.step} (term {exc.term}): {exc}") from None

    save_checkpoint(model, out / "model.fvck")
    with open(out / "history.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        columns = [*TERMS, "total"]
        w.writerow(["step", *columns])
        for entry in history:
            d = entry.losses.as_dict()
            w.writerow([entry.step, *(repr(float(d[t])) for t in columns)])
    if len(held_out):
        save_dataset(held_out, out / "heldout.fvds")
    write_manifest(out / "manifest.json", "train", config=str(config_path),
                   config_hash=config_hash(values), seed=values["train.seed"],
                   data_seed=values["data.seed"], model_seed=values["model.seed"],
                   settings={k: values[k] for k in sorted(values)},
                   train_rows=len(train_set), heldout_rows=len(held_out))
    last = history[-1].losses.total if history else float("nan")
    print(f"trained {tcfg.steps} steps, final total {last:.6f}; artifacts in {out}")
    return EXIT_OK


def cmd_sample(checkpoint, n: int, temperature: float, out, sweep=None, seed: int = 0) -> int:
    if n < 1:
        raise CliError(EXIT_USAGE, "sample: n must be >= 1")
    temps = list(sweep) if sweep else [temperature]
    if any(t < 0 for t in temps):
        raise CliError(EXIT_USAGE, "sample: temperatures must be >= 0")
    model = _load_model(checkpoint)
    out = _out_dir(out)
    written = []
    for t in temps:
        try:
            pts = sample(model, n, t, seed=seed)
        except NumericalError as exc:
            raise CliError(EXIT_NUMERIC, str(exc)) from None
        stem = f"samples_T{t:g}" if sweep else "samples"
        written.append(write_samples(pts, model.data_dim, out, stem).name)
    write_manifest(out / "sample_manifest.json", "sample", checkpoint=str(checkpoint), n=n,
                   temperatures=temps, seed=seed, files=written)
    for name in written:
        print(f"wrote {out / name}")
    return EXIT_OK


def cmd_interpolate(checkpoint, dataset, a: int, b: int, steps: int, out) -> int:
    model = _load_model(checkpoint)
    ds = _load_data(dataset)
    if ds.dim != model.data_dim:
        raise CliError(EXIT_USAGE, f"dim mismatch: model {model.data_dim}, dataset {ds.dim}")
    if not (0 <= a < len(ds) and 0 <= b < len(ds)):
        raise CliError(EXIT_USAGE, f"interpolate: indices must be in [0, {len(ds)})")
    if steps < 2:
        raise CliError(EXIT_USAGE, "interpolate: steps must be >= 2")
    out = _out_dir(out)
    pts = interpolate(model, ds.points[a], ds.points[b], steps)
    side = image_side(model.data_dim)
    if side is None:
        path = out / "interpolation.csv"
        write_points_csv(pts, path)
    else:
        path = out / "interpolation.pgm"
        write_pgm(tile_grid(pts, side, cols=steps), path)
    write_manifest(out / "interpolate_manifest.json", "interpolate", checkpoint=str(checkpoint),
                   dataset=str(dataset), a=a, b=b, steps=steps)
    print(f"wrote {path}")
    return EXIT_OK


def model_log_density(model: FVAEModel, x: np.ndarray, K: int, seed: int = 0) -> np.ndarray:
    """Exact log density for flow mode, importance estimate otherwise."""
    if model.mode == "flow":
        return np.atleast_1d(flow_exact_log_density(model.cf.flow, x))
    return np.atleast_1d(estimate_log_likelihood(model, x, K, seed=seed))


def cmd_eval(checkpoint, dataset, K: int, out, seed: int = 0, grid: int = 100,
             ed_samples: int = 2048) -> int:
    if K < 1:
        raise CliError(EXIT_USAGE, "eval: K must be >= 1")
    model = _load_model(checkpoint)
    ds = _load_data(dataset)
    if ds.dim != model.data_dim:
        raise CliError(EXIT_USAGE, f"dim mismatch: model {model.data_dim}, dataset {ds.dim}")
    out = _out_dir(out)
    rng = Rng(seed)
    try:
        logp = model_log_density(model, ds.points, K, seed=seed)
        nll = -float(np.mean(logp))
        rows = [("bits_per_dim", bits_per_dim(nll, ds.dim)), ("nll_nats", nll)]
        n_ed = min(len(ds), ed_samples)
        ref = ds.points[:n_ed]
        gen = sample(model, n_ed, 1.0, rng=rng.split())
        rows.append(("energy_distance", energy_distance(gen, ref)))
        if ds.dim == 2:
            mass = grid_integral_2d(lambda p: model_log_density(model, p, K, seed=seed),
                                    resolution=grid)
            rows.append(("normalization", mass))
    except NumericalError as exc:
        raise CliError(EXIT_NUMERIC, str(exc)) from None
    meta = {"checkpoint": str(checkpoint), "dataset": str(dataset), "K": K, "seed": seed,
            "grid": grid, "ed_samples": ed_samples}
    chash = config_hash(meta)
    write_report(rows, chash, out / "eval.csv")
    write_manifest(out / "eval_manifest.json", "eval", config_hash=chash, **meta)
    for name, value in rows:
        print(f"{name},{value!r}")
    return EXIT_OK


def cmd_check(scope: str, seed: int = 0) -> int:
    if scope not in SCOPES + ("all",):
        raise CliError(EXIT_USAGE, f"unknown scope {scope!r}; expected one of {SCOPES + ('all',)}")
    results = run_checks(scope, seed)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_OK if not failed else EXIT_NUMERIC


# ---- argument parsing ----

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fvae", description="Flow-posterior VAE toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-data", help="write a synthetic dataset (FVDS, or CSV by suffix)")
    g.add_argument("--kind", choices=("two_moons", "gaussian_ring", "shapes"), default="two_moons")
    g.add_argument("--n", type=int, default=8192)
    g.add_argument("--seed", type=int, default=1)
    g.add_argument("--noise", type=float, default=0.1)
    g.add_argument("--k", type=int, default=8)
    g.add_argument("--radius", type=float, default=2.0)
    g.add_argument("--sd", type=float, default=0.1)
    g.add_argument("--side", type=int, default=8)
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("config")
    t.add_argument("--out", default=None, help="override output.dir")

    s = sub.add_parser("sample", help="draw samples from a checkpoint")
    s.add_argument("checkpoint")
    s.add_argument("--n", type=int, default=64)
    s.add_argument("--temperature", type=float, default=1.0)
    s.add_argument("--sweep", type=float, nargs="+", default=None,
                   help="temperatures; one output file per value")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    i = sub.add_parser("interpolate", help="decode a latent path between two dataset rows")
    i.add_argument("checkpoint")
    i.add_argument("dataset")
    i.add_argument("--a", type=int, default=0)
    i.add_argument("--b", type=int, default=1)
    i.add_argument("--steps", type=int, default=8)
    i.add_argument("--out", required=True)

    e = sub.add_parser("eval", help="bits/dim, energy distance and 2D normalization")
    e.add_argument("checkpoint")
    e.add_argument("dataset")
    e.add_argument("--K", type=int, default=64)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--grid", type=int, default=100)
    e.add_argument("--out", required=True)

    c = sub.add_parser("check", help="run the numerical verification suites")
    c.add_argument("scope", choices=SCOPES + ("all",))
    c.add_argument("--seed", type=int, default=0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "generate-data":
            return cmd_generate_data(args)
        if args.command == "train":
            return cmd_train(args.config, args.out)
        if args.command == "sample":
            return cmd_sample(args.checkpoint, args.n, args.temperature, args.out, args.sweep, args.seed)
        if args.command == "interpolate":
            return cmd_interpolate(args.checkpoint, args.dataset, args.a, args.b, args.steps, args.out)
        if args.command == "eval":
            return cmd_eval(args.checkpoint, args.dataset, args.K, args.out, args.seed, args.grid)
        return cmd_check(args.scope, args.seed)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
