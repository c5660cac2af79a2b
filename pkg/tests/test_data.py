import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from weightrecon.data import (
    CIFAR_DIM,
    DataError,
    Dataset,
    DegenerateDirectionError,
    gen_synthetic,
    load_cifar10,
    load_dataset,
    project_to_sphere,
    read_cifar_batch,
    save_dataset,
    write_cifar_batch,
)
from weightrecon.linalg import make_rng


def test_project_to_sphere_examples():
    np.testing.assert_allclose(project_to_sphere(np.array([3.0, 4.0]), 5.0), [3, 4])
    np.testing.assert_allclose(project_to_sphere(np.array([1.0, 0.0]), np.sqrt(2)), [np.sqrt(2), 0])
    with pytest.raises(DegenerateDirectionError):
        project_to_sphere(np.zeros(3), 1.0)


@given(st.integers(1, 50), st.integers(0, 2**32 - 1))
def test_project_to_sphere_norm(d, seed):
    x = make_rng(seed).standard_normal(d)
    assert np.linalg.norm(project_to_sphere(x, np.sqrt(d))) == pytest.approx(np.sqrt(d), rel=1e-12)


def test_synthetic_full_rank_case():
    ds = gen_synthetic(5, 4, 4, 0.0, make_rng(0))
    np.testing.assert_allclose(np.linalg.norm(ds.X, axis=1), 2.0, rtol=1e-15)
    np.testing.assert_allclose(ds.X - ds.X @ ds.U @ ds.U.T, 0, atol=1e-14)
    ds.check()


def test_synthetic_noiseless_labels_and_idempotence():
    a = gen_synthetic(30, 10, 3, 0.0, make_rng(4))
    b = gen_synthetic(30, 10, 3, 0.0, make_rng(4))
    np.testing.assert_array_equal(a.X, b.X)
    np.testing.assert_array_equal(a.Y, b.Y)
    np.testing.assert_allclose(a.Y[:, 0], a.X @ a.meta["g"], rtol=1e-14)
    assert a.K == 1


def test_synthetic_paper_configuration():
    ds = gen_synthetic(100, 60, 30, 0.5, make_rng(1))
    ds.check()
    s = np.linalg.svd(ds.X, compute_uv=False)
    assert np.all(s[30:] <= 1e-9 * s[0]) and s[29] > 1e-3 * s[0]
    assert ds.r == 30 and ds.X.shape == (100, 60)


def test_synthetic_rejects_bad_rank():
    with pytest.raises(DataError):
        gen_synthetic(5, 4, 5, 0.0)


def test_check_catches_broken_invariants():
    ds = gen_synthetic(6, 5, 2, 0.1, make_rng(2))
    with pytest.raises(DataError):
        Dataset(2 * ds.X, ds.Y, ds.U).check()
    with pytest.raises(DataError):
        Dataset(project_to_sphere(ds.X + 0.1, np.sqrt(5)), ds.Y, ds.U).check()


def test_dataset_container_round_trip(tmp_path):
    ds = gen_synthetic(7, 6, 3, 0.5, make_rng(3))
    save_dataset(tmp_path / "d.bin", ds)
    back = load_dataset(tmp_path / "d.bin")
    for a, b in ((ds.X, back.X), (ds.Y, back.Y), (ds.U, back.U)):
        assert a.tobytes() == b.tobytes()
    assert back.source == "synthetic" and back.digest() == ds.digest()

    bare = Dataset(ds.X, ds.Y, None, "plain")
    save_dataset(tmp_path / "e.bin", bare)
    assert load_dataset(tmp_path / "e.bin").U is None


def test_dataset_container_rejects_garbage(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"nonsense" * 10)
    with pytest.raises(DataError):
        load_dataset(tmp_path / "x.bin")


@pytest.fixture
def cifar_dir(tmp_path):
    rng = np.random.default_rng(0)
    for b in (1, 2):
        labels = np.tile(np.arange(10), 3)
        rng.shuffle(labels)
        pixels = rng.integers(0, 256, (30, CIFAR_DIM), dtype=np.uint8)
        write_cifar_batch(tmp_path / f"data_batch_{b}.bin", labels, pixels)
    return tmp_path


def test_cifar_record_byte_oracle(cifar_dir):
    raw = (cifar_dir / "data_batch_1.bin").read_bytes()
    labels, pixels = read_cifar_batch(cifar_dir / "data_batch_1.bin")
    assert labels[0] == raw[0]
    assert bytes(pixels[0]) == raw[1 : 1 + CIFAR_DIM]
    assert labels[1] == raw[3073]


def test_cifar_subset(cifar_dir):
    ds = load_cifar10(cifar_dir, 10, make_rng(0))
    assert sorted(ds.meta["labels"].tolist()) == list(range(10))
    np.testing.assert_allclose(np.sum(ds.X**2, axis=1), CIFAR_DIM, rtol=1e-12)
    np.testing.assert_array_equal(ds.Y.sum(axis=0), np.ones(10))
    assert ds.U is None and ds.d == CIFAR_DIM

    ds = load_cifar10(cifar_dir, 40, make_rng(0))
    np.testing.assert_array_equal(ds.Y.sum(axis=0), np.full(10, 4))


def test_cifar_rows_match_file_pixels(cifar_dir):
    ds = load_cifar10(cifar_dir, 20, make_rng(5))
    labels, pixels = [], []
    for b in (1, 2):
        raw = np.fromfile(cifar_dir / f"data_batch_{b}.bin", dtype=np.uint8).reshape(-1, 3073)
        labels.append(raw[:, 0])
        pixels.append(raw[:, 1:])
    pixels = np.concatenate(pixels).astype(float) / 255
    idx = ds.meta["indices"]
    np.testing.assert_allclose(ds.X * ds.meta["scale"][:, None], pixels[idx], atol=1e-12)
    np.testing.assert_array_equal(np.argmax(ds.Y, axis=1), np.concatenate(labels)[idx])


def test_cifar_selection_is_seeded(cifar_dir):
    a = load_cifar10(cifar_dir, 20, make_rng(1)).meta["indices"]
    b = load_cifar10(cifar_dir, 20, make_rng(1)).meta["indices"]
    np.testing.assert_array_equal(a, b)


def test_cifar_errors(cifar_dir, tmp_path):
    with pytest.raises(DataError):
        load_cifar10(cifar_dir, 15)
    with pytest.raises(DataError):
        load_cifar10(cifar_dir, 100)  # 6 images per class available
    bad = tmp_path / "bad"
    bad.mkdir()
    (bad / "data_batch_1.bin").write_bytes(b"\0" * 100)
    with pytest.raises(DataError):
        load_cifar10(bad, 10)
