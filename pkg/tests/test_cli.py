import csv
import json

import matplotlib.image
import numpy as np
import pytest

from weightrecon import cli
from weightrecon.data import CIFAR_DIM, load_cifar10, load_dataset, write_cifar_batch
from weightrecon.linalg import make_rng

TINY = [
    "--data-n", "6", "--data-d", "8", "--data-r", "3",
    "--reconstruct-iters", "20", "--sweep-widths", "20,40",
    "--sweep-train-seeds", "0", "--sweep-recon-seeds", "0,1",
]


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_config_layers_and_errors(tmp_path):
    cfg = cli.load_config(preset="synthetic")
    assert cfg["train"]["lr"] == 1e-4 and cfg["train"]["loss_target"] == 1e-7
    assert cfg["reconstruct"]["momentum"] == 0.9 and cfg["reconstruct"]["iters"] == 10_000
    assert cfg["reconstruct"]["lr"] == 20.0 and cli.PRESETS["cifar"]["reconstruct"]["lr"] == 2e3
    assert len(cfg["sweep"]["train_seeds"]) == 3 and len(cfg["sweep"]["recon_seeds"]) == 5

    toml = tmp_path / "c.toml"
    toml.write_text('[data]\nn = 12\n[sweep]\nwidths = [10, 20]\n')
    cfg = cli.load_config(toml, "synthetic", {"sweep": {"widths": "30"}})
    assert cfg["data"]["n"] == 12 and cfg["sweep"]["widths"] == [30]

    for bad in ('[data]\nbogus = 1\n', '[nosuch]\nx = 1\n', '[data]\nn = "many"\n', '[data]\nr = 99\n', "[data\n"):
        toml.write_text(bad)
        with pytest.raises(cli.ConfigError):
            cli.load_config(toml)
    with pytest.raises(cli.ConfigError):
        cli.load_config(preset="nope")


def test_config_hash_ignores_output_dir():
    a = cli.load_config(overrides={"sweep": {"out": "x"}})
    b = cli.load_config(overrides={"sweep": {"out": "y"}})
    assert cli.config_hash(a) == cli.config_hash(b)
    assert cli.config_hash(a) != cli.config_hash(cli.load_config(overrides={"data": {"seed": 3}}))


def test_sweep_outputs_and_reproducibility(tmp_path, monkeypatch):
    monkeypatch.setenv("WEIGHTRECON_WORKERS", "1")
    out = tmp_path / "run"
    assert cli.main(["sweep", *TINY, "--sweep-out", str(out)]) == 0
    rows = read_rows(out / "results.csv")
    assert len(rows) == 2 * 3 * 2
    assert {r["method"] for r in rows} == {"full", "subspace-dw1", "true-subspace"}
    assert all(r["status"] == "ok" and r["config_hash"] and r["version"].startswith("weightrecon-") for r in rows)
    for name in ("traces.csv", "spectrum.csv", "config.json", "rho_last_L2.svg"):
        assert (out / name).exists()
    first = (out / "results.csv").read_bytes()

    # second run reuses cached checkpoints and reproduces the CSV byte for byte
    assert cli.main(["sweep", *TINY, "--sweep-out", str(out)]) == 0
    assert (out / "results.csv").read_bytes() == first
    out2 = tmp_path / "fresh"
    assert cli.main(["sweep", *TINY, "--sweep-out", str(out2)]) == 0
    assert (out2 / "results.csv").read_bytes() == first


def test_parallel_sweep_matches_serial(tmp_path, monkeypatch):
    args = [*TINY, "--sweep-train-seeds", "0,1"]
    monkeypatch.setenv("WEIGHTRECON_WORKERS", "1")
    cli.main(["sweep", *args, "--sweep-out", str(tmp_path / "a")])
    monkeypatch.setenv("WEIGHTRECON_WORKERS", "2")
    cli.main(["sweep", *args, "--sweep-out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "results.csv").read_bytes() == (tmp_path / "b" / "results.csv").read_bytes()


def test_single_cell_sweep(tmp_path):
    out = tmp_path / "one"
    code = cli.main(["sweep", *TINY, "--sweep-widths", "20", "--sweep-recon-seeds", "0",
                     "--reconstruct-methods", "full", "--sweep-out", str(out)])
    assert code == 0
    assert len(read_rows(out / "results.csv")) == 1
    series = cli.aggregate(out / "results.csv")
    assert list(series) == ["full"] and len(series["full"]) == 1


def test_failed_cells_give_exit_code_one(tmp_path):
    code = cli.main(["sweep", *TINY, "--train-lr", "100", "--sweep-out", str(tmp_path / "f")])
    assert code == 1
    rows = read_rows(tmp_path / "f" / "results.csv")
    assert rows and all(r["status"].startswith("failed") for r in rows)


def test_config_error_exit_code(tmp_path, capsys):
    assert cli.main(["sweep", "--config", str(tmp_path / "missing.toml")]) == 2
    assert cli.main(["sweep", "--data-r", "1000"]) == 2
    assert cli.main(["gen-data", "--data-source", "cifar10", "--out", str(tmp_path / "x")]) == 2
    assert cli.main(["concentration", "--grid-size", "1", "--p", "5"]) == 2


def test_workers_env(monkeypatch):
    monkeypatch.setenv("WEIGHTRECON_WORKERS", "zero")
    with pytest.raises(cli.ConfigError):
        cli.workers_from_env()
    monkeypatch.setenv("WEIGHTRECON_WORKERS", "3")
    assert cli.workers_from_env() == 3


def test_chart_statistics_match_manual_aggregation(tmp_path):
    path = tmp_path / "r.csv"
    rng = np.random.default_rng(0)
    rows = []
    for method in ("full", "subspace-dw1"):
        for width in (10, 100):
            for s in range(4):
                rows.append({"seed_train": 0, "seed_recon": s, "width": width, "p_last": width, "depth": 2,
                             "mask": "last", "method": method, "rho": rng.random(), "status": "ok"})
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, cli.RESULT_FIELDS, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)
    series = cli.render_chart(path, tmp_path / "a.svg")
    for method, pts in series.items():
        for width, mean, std, count in pts:
            vals = [r["rho"] for r in rows if r["method"] == method and r["width"] == width]
            assert mean == pytest.approx(sum(vals) / len(vals), rel=1e-12)
            assert std == pytest.approx(np.std(vals), rel=1e-12) and count == 4
    cli.render_chart(path, tmp_path / "b.svg")
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()
    assert cli.main(["chart", str(path), "--out", str(tmp_path / "c.svg")]) == 0
    empty = tmp_path / "e.csv"
    empty.write_text(",".join(cli.RESULT_FIELDS) + "\n")
    with pytest.raises(ValueError):
        cli.render_chart(empty, tmp_path / "e.svg")


def test_gen_train_reconstruct_verbs(tmp_path, capsys):
    data = tmp_path / "d.bin"
    assert cli.main(["gen-data", "--data-n", "5", "--data-d", "6", "--data-r", "3", "--out", str(data)]) == 0
    ds = load_dataset(data)
    assert ds.X.shape == (5, 6) and ds.r == 3
    ck = tmp_path / "ck"
    assert cli.main(["train", "--data", str(data), "--width", "40", "--out", str(ck)]) == 0
    assert (ck / "theta0.ckpt").exists() and (ck / "loss.csv").exists()
    rec = tmp_path / "rec"
    for method in ("full", "subspace-dw1", "true-subspace"):
        code = cli.main(["reconstruct", "--data", str(data), "--checkpoints", str(ck), "--method", method,
                         "--reconstruct-iters", "30", "--out", str(rec)])
        assert code == 0
    assert load_dataset(rec / "xhat.bin").X.shape == (5, 6)
    diags = [json.loads(line) for line in (rec / "diagnostics.jsonl").read_text().splitlines()]
    assert len(diags) == 3 and all("ridge" in d and d["solver"] == "dense-gram" for d in diags)
    assert "rho =" in capsys.readouterr().out


def test_bounds_and_concentration_verbs(tmp_path, capsys):
    assert cli.main(["verify-bounds", "--d", "3"]) == 0
    assert "p_min = 1478.56" in capsys.readouterr().out
    assert cli.main(["concentration", "--p", "2000", "--trials", "3", "--grid-size", "5",
                     "--mc-samples", "20000", "--out", str(tmp_path)]) == 0
    assert len(read_rows(tmp_path / "trials.csv")) == 3
    summary = json.loads((tmp_path / "summary.jsonl").read_text())
    assert summary["p"] == 2000 and "necessary" in summary["note"]


def cifar_fixture(path, per_class=3):
    rng = np.random.default_rng(1)
    labels = np.repeat(np.arange(10), per_class)
    # smooth images so a round trip is meaningful
    pixels = rng.integers(20, 236, (labels.size, CIFAR_DIM), dtype=np.uint8)
    write_cifar_batch(path / "data_batch_1.bin", labels, pixels)
    return path


def test_image_grid_round_trip(tmp_path):
    ds = load_cifar10(cifar_fixture(tmp_path), 10, make_rng(0))
    canvas = cli.image_grid(tmp_path / "g.png", ds.X, ds.X, np.arange(10), ds.meta["scale"])
    img = matplotlib.image.imread(tmp_path / "g.png")[..., :3]
    assert img.shape == canvas.shape
    np.testing.assert_array_equal(img[:32], img[33:])
    raw = np.fromfile(tmp_path / "data_batch_1.bin", dtype=np.uint8).reshape(-1, 3073)
    first = raw[ds.meta["indices"][0], 1:].reshape(3, 32, 32).transpose(1, 2, 0) / 255.0
    assert np.abs(img[:32, :32] - first).max() <= 1 / 255 + 1e-9

    dark = cli.image_grid(tmp_path / "z.png", np.zeros((2, CIFAR_DIM)), np.zeros((2, CIFAR_DIM)), [0, 1])
    assert dark[:32, :32].max() == 0.0
    with pytest.raises(ValueError):
        cli.image_grid(tmp_path / "bad.png", np.zeros((2, 10)), np.zeros((2, 10)), [0, 1])


def test_cifar_desk_sweep_writes_grids(tmp_path):
    data_dir = cifar_fixture(tmp_path / "cifar")
    code = cli.main(["sweep", "--preset", "cifar-desk", "--data-cifar-path", str(data_dir),
                     "--sweep-widths", "10,20", "--sweep-train-seeds", "0", "--sweep-recon-seeds", "0",
                     "--reconstruct-iters", "3", "--train-max-epochs", "50", "--sweep-out", str(tmp_path / "o")])
    assert code == 0
    rows = read_rows(tmp_path / "o" / "results.csv")
    assert {r["width"] for r in rows} == {"10", "20"}
    assert all(r["status"] == "ok: training not converged" for r in rows)
    assert list((tmp_path / "o").glob("grid_*_w20.png"))
    assert (tmp_path / "o" / "rho_last_L2.svg").exists()
