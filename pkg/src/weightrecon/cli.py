"""Config-driven experiment harness: data, training, reconstruction sweeps, charts.

Configs are TOML files with sections ``[data]``, ``[train]``, ``[reconstruct]``
and ``[sweep]``. Every key also exists as a flag ``--<section>-<key>``, so
``--sweep-widths 100,200`` overrides ``[sweep] widths``. The worker count comes
from ``WEIGHTRECON_WORKERS`` only.

Exit codes: 0 success, 1 some sweep cells failed, 2 configuration error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from weightrecon import __version__
from weightrecon.data import (
    CIFAR_DIM,
    DataError,
    Dataset,
    gen_synthetic,
    load_cifar10,
    load_dataset,
    save_dataset,
)
from weightrecon.kernels import BoundInputs, concentration_trial, lemma1_width_bound, theorem1_width_bound
from weightrecon.linalg import make_rng, orthonormal_basis
from weightrecon.metrics import rho
from weightrecon.model import MlpParams, ParamMask, init_mlp, init_rf, load_checkpoint, save_checkpoint
from weightrecon.reconstruct import (
    ReconProblem,
    ReconstructionError,
    init_candidates,
    run_full_space,
    run_subspace,
)
from weightrecon.subspace import detect_rank, estimate_basis, write_spectrum_csv
from weightrecon.train import DivergenceError, TrainRecord, train_gd, write_loss_csv

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

VERSION_TAG = f"weightrecon-{__version__}"
METHODS = ("full", "subspace-dw1", "true-subspace", "random")
EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2

DEFAULTS = {
    "data": {
        "source": "synthetic",
        "n": 100,
        "d": 60,
        "r": 30,
        "sigma": 0.5,
        "seed": 0,
        "cifar_path": "",
    },
    "train": {
        "model": "mlp",
        "activation": "relu",
        "lr": 1e-4,
        "loss_target": 1e-7,
        "max_epochs": 1_000_000,
    },
    "reconstruct": {
        "lr": 20.0,
        "momentum": 0.9,
        "iters": 10_000,
        "trace_every": 100,
        "solver": "auto",
        "normalize": True,
        "rank": "known",
        "methods": ["full", "subspace-dw1", "true-subspace"],
    },
    "sweep": {
        "widths": [250, 500, 1000, 2000, 4000],
        "depths": [2],
        "masks": ["last"],
        "train_seeds": [0, 1, 2],
        "recon_seeds": [0, 1, 2, 3, 4],
        "out": "runs/synthetic",
        "image_grids": False,
    },
}


def _preset(**sections):
    cfg = copy.deepcopy(DEFAULTS)
    for name, values in sections.items():
        cfg[name].update(values)
    return cfg


PRESETS = {
    "synthetic": _preset(),
    "synthetic-desk": _preset(
        data={"n": 20},
        sweep={"widths": [100, 200, 400, 800, 1600], "out": "runs/synthetic-desk"},
    ),
    # The widest widths here are beyond a single workstation for depth 5 with all layers.
    "cifar": _preset(
        data={"source": "cifar10", "n": 10, "d": CIFAR_DIM, "r": 0, "sigma": 0.0},
        reconstruct={"lr": 2e3},
        sweep={
            "widths": [100, 200, 500, 1000, 2000, 5000],
            "depths": [2, 3, 5],
            "masks": ["last", "all"],
            "out": "runs/cifar",
            "image_grids": True,
        },
    ),
    "cifar-desk": _preset(
        data={"source": "cifar10", "n": 10, "d": CIFAR_DIM, "r": 0, "sigma": 0.0},
        reconstruct={"lr": 2e3, "methods": ["full", "subspace-dw1", "random"]},
        sweep={"widths": [200, 500, 1000], "out": "runs/cifar-desk", "image_grids": True},
    ),
}


class ConfigError(ValueError):
    pass


# Config handling -----------------------------------------------------------------

def _coerce(value, default, key):
    """Convert ``value`` to the type of ``default`` (strings come from flags)."""
    try:
        if isinstance(default, bool):
            if isinstance(value, str):
                if value.lower() not in ("1", "0", "true", "false", "yes", "no"):
                    raise ValueError(value)
                return value.lower() in ("1", "true", "yes")
            return bool(value)
        if isinstance(default, list):
            items = value.split(",") if isinstance(value, str) else list(value)
            proto = default[0] if default else ""
            return [_coerce(v.strip() if isinstance(v, str) else v, proto, key) for v in items if v != ""]
        if isinstance(default, int):
            f = float(value)
            if f != int(f):
                raise ValueError(value)
            return int(f)
        if isinstance(default, float):
            return float(value)
        return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: cannot use {value!r} as {type(default).__name__}") from exc


def merge_config(base: dict, override: dict) -> dict:
    cfg = copy.deepcopy(base)
    for section, values in override.items():
        if section not in cfg or not isinstance(values, dict):
            raise ConfigError(f"unknown section [{section}]")
        for key, value in values.items():
            if key not in cfg[section]:
                raise ConfigError(f"unknown key {section}.{key}")
            cfg[section][key] = _coerce(value, DEFAULTS[section][key], f"{section}.{key}")
    return cfg


def validate_config(cfg: dict) -> dict:
    data, train, rec, sweep = cfg["data"], cfg["train"], cfg["reconstruct"], cfg["sweep"]
    checks = [
        (data["source"] in ("synthetic", "cifar10"), "data.source must be synthetic or cifar10"),
        (data["n"] >= 1, "data.n must be >= 1"),
        (data["source"] != "synthetic" or 1 <= data["r"] <= data["d"], "data.r must be in [1, d]"),
        (data["sigma"] >= 0, "data.sigma must be >= 0"),
        (data["source"] != "cifar10" or data["n"] % 10 == 0, "data.n must be a multiple of 10 for cifar10"),
        (data["source"] != "cifar10" or bool(data["cifar_path"]), "data.cifar_path is required for cifar10"),
        (train["model"] in ("mlp", "rf"), "train.model must be mlp or rf"),
        (train["lr"] > 0 and train["loss_target"] >= 0, "train.lr must be > 0"),
        (train["max_epochs"] >= 0, "train.max_epochs must be >= 0"),
        (rec["lr"] > 0 and 0 <= rec["momentum"] < 1, "reconstruct.lr > 0 and momentum in [0, 1)"),
        (rec["iters"] >= 0 and rec["trace_every"] >= 1, "reconstruct.iters >= 0, trace_every >= 1"),
        (rec["solver"] in ("auto", "dense-gram", "matrix-free-cg"), "unknown reconstruct.solver"),
        (rec["rank"] in ("known", "detect") or rec["rank"].isdigit(), "reconstruct.rank: known, detect or an integer"),
        (bool(rec["methods"]) and all(m in METHODS for m in rec["methods"]), f"methods must be from {METHODS}"),
        (bool(sweep["widths"]) and min(sweep["widths"]) >= 1, "sweep.widths must be positive"),
        (bool(sweep["depths"]) and min(sweep["depths"]) >= 1, "sweep.depths must be >= 1"),
        (all(m in ("last", "all") for m in sweep["masks"]) and bool(sweep["masks"]), "sweep.masks: last/all"),
        (bool(sweep["train_seeds"]) and bool(sweep["recon_seeds"]), "need at least one seed of each kind"),
        (train["model"] != "rf" or sweep["depths"] == [2], "the RF model has depth 2"),
    ]
    for ok, msg in checks:
        if not ok:
            raise ConfigError(msg)
    return cfg


def load_config(path=None, preset: str = "synthetic", overrides: dict | None = None) -> dict:
    """Preset defaults, then the TOML file, then explicit overrides."""
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    cfg = copy.deepcopy(PRESETS[preset])
    if path:
        try:
            with open(path, "rb") as fh:
                cfg = merge_config(cfg, tomllib.load(fh))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    if overrides:
        cfg = merge_config(cfg, overrides)
    return validate_config(cfg)


def config_hash(cfg: dict) -> str:
    """Hash of everything that affects results (output location excluded)."""
    body = copy.deepcopy(cfg)
    body["sweep"].pop("out", None)
    blob = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def workers_from_env() -> int:
    raw = os.environ.get("WEIGHTRECON_WORKERS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"WEIGHTRECON_WORKERS={raw!r} is not an integer") from exc
    if n < 1:
        raise ConfigError("WEIGHTRECON_WORKERS must be >= 1")
    return n


# Building blocks ------------------------------------------------------------------

def _seed(*parts) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(p) for p in parts])


def make_dataset(cfg: dict) -> Dataset:
    data = cfg["data"]
    if data["source"] == "synthetic":
        return gen_synthetic(data["n"], data["d"], data["r"], data["sigma"], make_rng(data["seed"]))
    return load_cifar10(data["cifar_path"], data["n"], make_rng(data["seed"]))


def init_params(cfg: dict, ds: Dataset, width: int, depth: int, train_seed: int):
    rng = make_rng(_seed(train_seed, width, depth))
    if cfg["train"]["model"] == "rf":
        act = cfg["train"]["activation"]
        return init_rf(ds.d, width, rng, "tanh" if act == "relu" else act)
    return init_mlp(ds.d, width, depth, ds.K, rng)


def train_cached(cfg: dict, ds: Dataset, width: int, depth: int, train_seed: int, cache_dir):
    """Train once per (data hash, architecture, seed); later calls reload the checkpoints."""
    tr = cfg["train"]
    key = (
        f"{ds.digest()}_{tr['model']}_w{width}_L{depth}_s{train_seed}"
        f"_lr{tr['lr']:g}_t{tr['loss_target']:g}_e{tr['max_epochs']}"
    )
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    p0, pf = cache_dir / f"{key}.theta0", cache_dir / f"{key}.thetaf"
    meta_path = cache_dir / f"{key}.json"
    if p0.exists() and pf.exists() and meta_path.exists():
        params0, paramsf = load_checkpoint(p0), load_checkpoint(pf)
        meta = json.loads(meta_path.read_text())
        record = TrainRecord(
            params0.flatten(), paramsf.flatten(), np.asarray(meta["loss_trace"]),
            meta["epochs"], meta["converged"], tr["lr"],
        )
        return params0, paramsf, record

    params0 = init_params(cfg, ds, width, depth, train_seed)
    paramsf, record = train_gd(params0, ds, tr["lr"], tr["loss_target"], tr["max_epochs"])
    # Keep only a thinned trace in the cache; the full one goes to CSV.
    stride = max(1, len(record.loss_trace) // 1000)
    thin = record.loss_trace[::stride].tolist() + [float(record.loss_trace[-1])]
    for path, params in ((p0, params0), (pf, paramsf)):
        tmp = path.with_suffix(path.suffix + ".tmp")
        save_checkpoint(tmp, params)
        os.replace(tmp, path)
    write_loss_csv(cache_dir / f"{key}.loss.csv", record)
    tmp = meta_path.with_suffix(".tmp")
    tmp.write_text(json.dumps({"epochs": record.epochs, "converged": record.converged, "loss_trace": thin}))
    os.replace(tmp, meta_path)
    return params0, paramsf, TrainRecord(
        record.theta0, record.thetaf, np.asarray(thin), record.epochs, record.converged, record.lr
    )


def true_basis(ds: Dataset) -> np.ndarray:
    """Known basis for synthetic data; the span of the samples otherwise."""
    if ds.U is not None:
        return ds.U
    return orthonormal_basis(ds.X.T)


def basis_rank(cfg: dict, ds: Dataset, spectrum) -> int:
    rank = cfg["reconstruct"]["rank"]
    if rank == "detect":
        return detect_rank(spectrum) if spectrum is not None else 0
    if rank == "known":
        return ds.r if ds.r is not None else ds.n
    return int(rank)


def reconstruct_method(method, problem, ds, dw1, rank, rec_cfg, rng):
    """Run one reconstruction; returns ``(Xhat, ReconResult or None)``."""
    kwargs = dict(
        lr=rec_cfg["lr"], momentum=rec_cfg["momentum"], iters=rec_cfg["iters"],
        rng=rng, trace_every=rec_cfg["trace_every"],
    )
    if method == "full":
        res = run_full_space(problem, **kwargs)
    elif method == "subspace-dw1":
        if dw1 is None:
            raise ValueError("subspace-dw1 needs a trained first layer")
        res = run_subspace(problem.with_basis(estimate_basis(dw1, rank).basis), **kwargs)
    elif method == "true-subspace":
        res = run_subspace(problem.with_basis(true_basis(ds)), **kwargs)
    elif method == "random":
        return init_candidates(ds.n, ds.d, None, rng), None
    else:
        raise ValueError(f"unknown method {method}")
    return res.Xhat, res


# Sweep ----------------------------------------------------------------------------

RESULT_FIELDS = [
    "seed_train", "seed_recon", "width", "p_last", "depth", "mask", "method", "rho",
    "best_loss", "initial_loss", "delta_sq", "train_epochs", "train_converged", "status",
    "data_seed", "config_hash", "version",
]
TRACE_FIELDS = ["width", "depth", "mask", "method", "seed_train", "seed_recon", "iteration", "loss"]


def _cell(cfg, width, depth, train_seed, cache_dir):
    """All masks, methods and reconstruction seeds for one trained network."""
    ds = make_dataset(cfg)
    rec_cfg = cfg["reconstruct"]
    rows, traces, spectra, grids = [], [], [], []
    base = {"seed_train": train_seed, "width": width, "depth": depth, "p_last": width * ds.K}
    try:
        params0, paramsf, record = train_cached(cfg, ds, width, depth, train_seed, cache_dir)
    except DivergenceError as exc:
        for mask in cfg["sweep"]["masks"]:
            for method in rec_cfg["methods"]:
                for rs in cfg["sweep"]["recon_seeds"]:
                    rows.append(dict(base, seed_recon=rs, mask=mask, method=method,
                                     status=f"failed: {exc}", train_epochs=exc.record.epochs,
                                     train_converged=False))
        return rows, traces, spectra, grids

    dw1 = None
    if isinstance(paramsf, MlpParams):
        dw1 = paramsf.layers[0] - params0.layers[0]
        s = np.linalg.svd(dw1, compute_uv=False)
        spectra.append((width, depth, train_seed, s, detect_rank(s) if s[0] > 0 else 0))
    rank = basis_rank(cfg, ds, spectra[-1][3] if spectra else None)

    train_info = {"train_epochs": record.epochs, "train_converged": record.converged}
    for mask in cfg["sweep"]["masks"]:
        mask_enum = ParamMask(mask)
        problem = ReconProblem.from_training(paramsf, record, ds.n, mask_enum, solver=rec_cfg["solver"],
                                             normalize=rec_cfg["normalize"])
        delta_sq = float(problem.delta @ problem.delta)
        for mi, method in enumerate(rec_cfg["methods"]):
            for rs in cfg["sweep"]["recon_seeds"]:
                row = dict(base, seed_recon=rs, mask=mask, method=method, delta_sq=delta_sq, **train_info)
                rng = make_rng(_seed(rs, train_seed, width, depth, 1 + METHODS.index(method)))
                try:
                    Xhat, res = reconstruct_method(method, problem, ds, dw1, rank, rec_cfg, rng)
                    value, perm = rho(ds.X, Xhat)
                    row.update(rho=value, status="ok" if record.converged else "ok: training not converged")
                    if res is not None:
                        row.update(best_loss=res.best_loss, initial_loss=res.initial_loss)
                        for it, loss in res.loss_trace:
                            traces.append([width, depth, mask, method, train_seed, rs, int(it), repr(float(loss))])
                    if cfg["sweep"]["image_grids"] and ds.d == CIFAR_DIM and train_seed == cfg["sweep"]["train_seeds"][0] \
                            and rs == cfg["sweep"]["recon_seeds"][0]:
                        grids.append((width, depth, mask, method, Xhat, perm))
                except (ReconstructionError, ValueError, np.linalg.LinAlgError) as exc:
                    row.update(status=f"failed: {exc}")
                rows.append(row)
    return rows, traces, spectra, grids


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def _row_key(row):
    return (row["mask"], row["depth"], row["width"], METHODS.index(row["method"]), row["seed_train"], row["seed_recon"])


def run_experiment(cfg: dict, out_dir=None, workers: int | None = None) -> tuple[Path, int]:
    """Run the sweep in ``cfg``; returns the artifact directory and the number of failed cells."""
    cfg = validate_config(copy.deepcopy(cfg))
    out = Path(out_dir or cfg["sweep"]["out"])
    out.mkdir(parents=True, exist_ok=True)
    cache_dir = out / "checkpoints"
    workers = workers or workers_from_env()
    jobs = [(w, L, s) for L in cfg["sweep"]["depths"] for w in cfg["sweep"]["widths"] for s in cfg["sweep"]["train_seeds"]]

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_cell, cfg, w, L, s, cache_dir) for w, L, s in jobs]
            parts = [f.result() for f in futures]
    else:
        parts = [_cell(cfg, w, L, s, cache_dir) for w, L, s in jobs]

    chash = config_hash(cfg)
    rows = sorted((r for p in parts for r in p[0]), key=_row_key)
    with open(out / "results.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, RESULT_FIELDS)
        w.writeheader()
        for r in rows:
            r = dict(r, data_seed=cfg["data"]["seed"], config_hash=chash, version=VERSION_TAG)
            w.writerow({k: _fmt(r.get(k)) for k in RESULT_FIELDS})

    with open(out / "traces.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_FIELDS)
        for t in sorted((t for p in parts for t in p[1]), key=lambda t: (t[2], t[1], t[0], METHODS.index(t[3]), t[4], t[5], t[6])):
            w.writerow(t)

    with open(out / "spectrum.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["width", "depth", "seed_train", "detected_rank", "index", "singular_value"])
        for width, depth, seed, s, k in sorted((x for p in parts for x in p[2]), key=lambda x: x[:3]):
            for i, v in enumerate(s, start=1):
                w.writerow([width, depth, seed, k, i, repr(float(v))])

    with open(out / "config.json", "w") as fh:
        json.dump({"config": cfg, "config_hash": chash, "version": VERSION_TAG}, fh, indent=2, sort_keys=True)

    for depth in cfg["sweep"]["depths"]:
        for mask in cfg["sweep"]["masks"]:
            try:
                render_chart(out / "results.csv", out / f"rho_{mask}_L{depth}.svg", mask=mask, depth=depth,
                             x="p_last" if cfg["data"]["source"] == "cifar10" else "width")
            except ValueError:
                pass  # no successful runs for this panel

    grids = [g for p in parts for g in p[3]]
    if grids:
        ds = make_dataset(cfg)
        widest = max(g[0] for g in grids)
        for width, depth, mask, method, Xhat, perm in grids:
            if width == widest:
                image_grid(out / f"grid_{method}_{mask}_L{depth}_w{width}.png", ds.X, Xhat, perm,
                           ds.meta.get("scale"))

    failed = sum(r["status"].startswith("failed") for r in rows)
    return out, failed


# Rendering ------------------------------------------------------------------------

def aggregate(results_csv, mask=None, depth=None, x="width") -> dict:
    """``{method: [(x, mean, std, count), ...]}`` over successful rows (population std)."""
    groups: dict = {}
    with open(results_csv, newline="") as fh:
        for row in csv.DictReader(fh):
            if not row["status"].startswith("ok") or not row["rho"]:
                continue
            if mask is not None and row["mask"] != mask:
                continue
            if depth is not None and int(row["depth"]) != int(depth):
                continue
            groups.setdefault(row["method"], {}).setdefault(int(row[x]), []).append(float(row["rho"]))
    out = {}
    for method in sorted(groups, key=lambda m: METHODS.index(m) if m in METHODS else len(METHODS)):
        pts = []
        for xv in sorted(groups[method]):
            vals = np.asarray(groups[method][xv])
            pts.append((xv, float(vals.mean()), float(vals.std()), int(vals.size)))
        out[method] = pts
    return out


LABELS = {"full": "Full space", "subspace-dw1": "Subspace (ΔW1)", "true-subspace": "True subspace", "random": "Random points"}


def render_chart(results_csv, path, mask=None, depth=None, x="width") -> dict:
    """Mean rho with a +-1 std band per method against width on a log axis.

    The SVG is byte-identical across re-renders of the same CSV.
    """
    import matplotlib
    from matplotlib.figure import Figure

    series = aggregate(results_csv, mask, depth, x)
    if not series:
        raise ValueError(f"no successful rows in {results_csv} for mask={mask} depth={depth}")
    with matplotlib.rc_context({"svg.hashsalt": "weightrecon", "svg.fonttype": "none"}):
        fig = Figure(figsize=(5.0, 3.6))
        ax = fig.add_subplot()
        for method, pts in series.items():
            xs, mean, std = (np.array([p[i] for p in pts], dtype=float) for i in range(3))
            ax.plot(xs, mean, marker="o", label=LABELS.get(method, method))
            ax.fill_between(xs, mean - std, mean + std, alpha=0.2)
        ax.set_xscale("log")
        ax.set_xlabel("last-layer parameters $p^{(L)}$" if x == "p_last" else "width $p$")
        ax.set_ylabel(r"$\rho$")
        title = ", ".join(t for t in (f"mask={mask}" if mask else "", f"depth={depth}" if depth else "") if t)
        if title:
            ax.set_title(title)
        ax.legend()
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
    return series


def image_grid(path, X_true, X_hat, matching, scales=None, dims=(3, 32, 32)):
    """PNG with true images on the top row and their matched reconstructions below.

    ``scales[i]`` undoes the sphere rescale of sample ``i`` (``pixels = x * scale``);
    reconstructions reuse the scale of the true image they are matched to.
    Values are clipped to ``[0, 1]``.
    """
    import matplotlib.image

    X_true = np.asarray(X_true, dtype=np.float64)
    X_hat = np.asarray(X_hat, dtype=np.float64)
    c, h, w = dims
    if X_true.shape[1] != c * h * w or X_hat.shape != X_true.shape:
        raise ValueError(f"rows must have {c * h * w} entries")
    n = X_true.shape[0]
    scales = np.ones(n) if scales is None else np.asarray(scales, dtype=np.float64)
    matching = np.asarray(matching)

    def tile(x, s):
        return np.clip((x * s).reshape(c, h, w).transpose(1, 2, 0), 0.0, 1.0)

    canvas = np.ones((2 * h + 1, n * (w + 1) - 1, c))
    for i in range(n):
        cols = slice(i * (w + 1), i * (w + 1) + w)
        canvas[:h, cols] = tile(X_true[i], scales[i])
        canvas[h + 1 :, cols] = tile(X_hat[matching[i]], scales[i])
    matplotlib.image.imsave(path, canvas if c == 3 else canvas[..., 0], cmap=None if c == 3 else "gray",
                            vmin=0.0, vmax=1.0)
    return canvas


# Command line ------------------------------------------------------------------

def _add_config_flags(parser, sections):
    for section in sections:
        for key, default in DEFAULTS[section].items():
            flag = f"--{section}-{key.replace('_', '-')}"
            parser.add_argument(flag, dest=f"{section}.{key}", default=None, metavar=type(default).__name__.upper(),
                                help=f"[{section}] {key} (default {default!r})")


def _overrides(args) -> dict:
    out: dict = {}
    for name, value in vars(args).items():
        if "." in name and value is not None:
            section, key = name.split(".", 1)
            out.setdefault(section, {})[key] = value
    return out


def _common(parser, sections):
    parser.add_argument("--config", help="TOML config file")
    parser.add_argument("--preset", default="synthetic", help=f"one of {', '.join(sorted(PRESETS))}")
    _add_config_flags(parser, sections)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="weightrecon", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=VERSION_TAG)
    sub = p.add_subparsers(dest="verb", required=True)

    g = sub.add_parser("gen-data", help="write the configured dataset to a binary container")
    _common(g, ["data"])
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train one network and write theta0/thetaf checkpoints")
    _common(t, ["data", "train"])
    t.add_argument("--data", help="dataset container (default: generate from [data])")
    t.add_argument("--width", type=int, required=True)
    t.add_argument("--depth", type=int, default=2)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True, help="output directory")

    r = sub.add_parser("reconstruct", help="reconstruct training data from a checkpoint pair")
    _common(r, ["reconstruct"])
    r.add_argument("--data", required=True, help="dataset container, used for n, the true basis and rho")
    r.add_argument("--checkpoints", required=True, help="directory written by 'train'")
    r.add_argument("--method", default="subspace-dw1", choices=METHODS)
    r.add_argument("--mask", default="last", choices=["last", "all"])
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True, help="output directory")

    s = sub.add_parser("sweep", help="run a full width/depth/mask/method sweep")
    _common(s, ["data", "train", "reconstruct", "sweep"])

    c = sub.add_parser("chart", help="render mean +- std rho against width from results.csv")
    c.add_argument("results")
    c.add_argument("--out", required=True)
    c.add_argument("--mask")
    c.add_argument("--depth", type=int)
    c.add_argument("--x", default="width", choices=["width", "p_last"])

    v = sub.add_parser("verify-bounds", help="evaluate the kernel-concentration and recovery width bounds")
    v.add_argument("--d", type=int, required=True)
    v.add_argument("--eps", type=float, default=0.5)
    v.add_argument("--delta", type=float, default=0.1)
    v.add_argument("--M", type=float, default=1.0)
    v.add_argument("--Lip", type=float, default=1.0)
    v.add_argument("--C", type=float)
    v.add_argument("--c", type=float)
    v.add_argument("--alpha-l1", type=float)

    k = sub.add_parser("concentration", help="empirical kernel-concentration trials on a sampled grid")
    k.add_argument("--activation", default="tanh", choices=["tanh", "sigmoid"])
    k.add_argument("--d", type=int, default=3)
    k.add_argument("--p", type=int, help="width (default: the bound's p_min, rounded up)")
    k.add_argument("--eps", type=float, default=0.5)
    k.add_argument("--delta", type=float, default=0.1)
    k.add_argument("--grid-size", type=int, default=50)
    k.add_argument("--trials", type=int, default=100)
    k.add_argument("--mc-samples", type=int, default=10**6)
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--out", help="directory for trials.csv and summary.jsonl")
    return p


def _cmd_gen_data(args):
    cfg = load_config(args.config, args.preset, _overrides(args))
    ds = make_dataset(cfg)
    save_dataset(args.out, ds)
    print(f"wrote {args.out}: n={ds.n} d={ds.d} K={ds.K} r={ds.r} digest={ds.digest()}")
    return EXIT_OK


def _cmd_train(args):
    cfg = load_config(args.config, args.preset, _overrides(args))
    ds = load_dataset(args.data) if args.data else make_dataset(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params0 = init_params(cfg, ds, args.width, args.depth, args.seed)
    tr = cfg["train"]
    try:
        paramsf, record = train_gd(params0, ds, tr["lr"], tr["loss_target"], tr["max_epochs"])
    except DivergenceError as exc:
        write_loss_csv(out / "loss.csv", exc.record)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARTIAL
    save_checkpoint(out / "theta0.ckpt", params0)
    save_checkpoint(out / "thetaf.ckpt", paramsf)
    write_loss_csv(out / "loss.csv", record)
    state = "converged" if record.converged else "NOT converged"
    print(f"{state} after {record.epochs} epochs, final loss {record.final_loss:.3e}")
    return EXIT_OK if record.converged else EXIT_PARTIAL


def _cmd_reconstruct(args):
    cfg = load_config(args.config, args.preset, _overrides(args))
    rec_cfg = cfg["reconstruct"]
    ds = load_dataset(args.data)
    ck = Path(args.checkpoints)
    params0, paramsf = load_checkpoint(ck / "theta0.ckpt"), load_checkpoint(ck / "thetaf.ckpt")
    record = TrainRecord(params0.flatten(), paramsf.flatten(), np.zeros(0), 0, True)
    mask = ParamMask(args.mask)
    problem = ReconProblem.from_training(paramsf, record, ds.n, mask, solver=rec_cfg["solver"],
                                         normalize=rec_cfg["normalize"])
    dw1 = paramsf.layers[0] - params0.layers[0] if isinstance(paramsf, MlpParams) else None
    spectrum = np.linalg.svd(dw1, compute_uv=False) if dw1 is not None else None
    rank = basis_rank(cfg, ds, spectrum)
    Xhat, res = reconstruct_method(args.method, problem, ds, dw1, rank, rec_cfg, make_rng(args.seed))
    value, _ = rho(ds.X, Xhat)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(out / "xhat.bin", Dataset(Xhat, np.zeros((ds.n, ds.K)), None, "reconstruction"))
    if spectrum is not None:
        write_spectrum_csv(out / "spectrum.csv", spectrum)
    if res is not None:
        with open(out / "trace.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "loss"])
            for it, loss in res.loss_trace:
                w.writerow([int(it), repr(float(loss))])
        with open(out / "diagnostics.jsonl", "a") as fh:
            diag = dict(res.diagnostics, method=args.method, mask=args.mask, seed=args.seed, rho=value,
                        best_loss=res.best_loss, best_iteration=res.best_iteration)
            fh.write(json.dumps(diag, sort_keys=True) + "\n")
    print(f"{args.method}: rho = {value:.6f}")
    return EXIT_OK


def _cmd_sweep(args):
    cfg = load_config(args.config, args.preset, _overrides(args))
    out, failed = run_experiment(cfg)
    print(f"wrote {out / 'results.csv'} ({failed} failed runs)")
    return EXIT_PARTIAL if failed else EXIT_OK


def _cmd_chart(args):
    series = render_chart(args.results, args.out, args.mask, args.depth, args.x)
    for method, pts in series.items():
        for xv, mean, std, count in pts:
            print(f"{method:>14} {args.x}={xv:<7} rho={mean:.4f} +- {std:.4f} (n={count})")
    return EXIT_OK


def _cmd_verify_bounds(args):
    inputs = BoundInputs(args.d, args.eps, args.delta, args.M, args.Lip, args.C, args.c, args.alpha_l1)
    lb = lemma1_width_bound(inputs)
    print(f"kernel concentration: p_min = {lb.p_min:.6g}, delta_max = {lb.delta_max:.6g}, delta ok = {lb.delta_ok}")
    if args.C is not None and args.c is not None and args.alpha_l1 is not None:
        tb = theorem1_width_bound(inputs)
        print(f"recovery: p_min = {tb.p_min:.6g}, delta_max = {tb.delta_max:.6g}, delta ok = {tb.delta_ok}")
    return EXIT_OK


def _cmd_concentration(args):
    p = args.p
    if p is None:
        p = math.ceil(lemma1_width_bound(BoundInputs(args.d, args.eps, args.delta)).p_min)
    rep = concentration_trial(args.activation, args.d, p, args.eps, args.grid_size, args.trials,
                              args.mc_samples, make_rng(args.seed))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "trials.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["trial", "sup_deviation", "pass"])
            for i, (dev, ok) in enumerate(zip(rep.sup_deviation, rep.passed)):
                w.writerow([i, repr(float(dev)), int(ok)])
        with open(out / "summary.jsonl", "a") as fh:
            fh.write(json.dumps({
                "activation": args.activation, "d": args.d, "p": p, "eps": args.eps,
                "fraction": rep.fraction, "max_stderr": rep.max_stderr, "mc_budget_ok": rep.mc_budget_ok,
                "note": rep.note,
            }, sort_keys=True) + "\n")
    print(f"p={p}: {rep.fraction:.3f} of {len(rep.passed)} trials within eps={args.eps} "
          f"(max MC stderr {rep.max_stderr:.2e}; {rep.note})")
    return EXIT_OK


COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "reconstruct": _cmd_reconstruct,
    "sweep": _cmd_sweep,
    "chart": _cmd_chart,
    "verify-bounds": _cmd_verify_bounds,
    "concentration": _cmd_concentration,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.verb](args)
    except (ConfigError, DataError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        if args.verb in ("verify-bounds", "concentration", "chart"):
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        raise


if __name__ == "__main__":
    sys.exit(main())
