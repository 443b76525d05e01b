import json
import math

import numpy as np
import pytest

from dyninr.autodiff import Tensor
from dyninr.data import (
    Component,
    DataFormatError,
    GridSignal,
    SignalDataset,
    SynthSpec,
    add_noise,
    dataset_to_csv,
    grid_to_dataset,
    load_raw_grid,
    make_coord_grid,
    save_raw_grid,
    subsample,
    synth_signal,
)


def test_coord_grid_endpoints():
    assert make_coord_grid([2]).asarray().ravel().tolist() == [-1.0, 1.0]
    assert make_coord_grid([3]).asarray().ravel().tolist() == [-1.0, 0.0, 1.0]


def test_coord_grid_2x2_row_major():
    rows = make_coord_grid([2, 2]).asarray().tolist()
    assert rows == [[-1, -1], [-1, 1], [1, -1], [1, 1]]


def test_coord_grid_rejects_tiny_dims():
    with pytest.raises(ValueError):
        make_coord_grid([1, 4])


def test_synth_single_sine_table():
    spec = SynthSpec("sum-of-sinusoids", (Component((1.0,), 1.0, 0.0),))
    sig = synth_signal(spec, [5])
    want = [math.sin(math.pi * x) for x in (-1, -0.5, 0, 0.5, 1)]
    assert np.allclose(sig.array(), want, atol=1e-15)  # peak is already 1


def test_synth_zero_amplitude_stays_zero():
    spec = SynthSpec("sum-of-sinusoids", (Component((1.0, 1.0), 0.0, 0.0),))
    sig = synth_signal(spec, [8, 8])
    assert np.all(sig.array() == 0.0)


def test_synth_normalization_idempotent_and_in_range():
    spec = SynthSpec("sum-of-sinusoids", (
        Component((2.0, 0.0), 1.0, 0.3),
        Component((5.0, 3.0), 0.5, 1.0),
    ))
    sig = synth_signal(spec, [16, 16])
    v = sig.array()
    assert np.max(np.abs(v)) <= 1.0 + 1e-15
    # renormalizing the already-normalized field changes nothing
    peak = np.max(np.abs(v))
    assert np.allclose(v / peak, v, atol=1e-12)


def test_synth_requires_component():
    with pytest.raises(ValueError):
        SynthSpec("sum-of-sinusoids", ())
    with pytest.raises(ValueError):
        SynthSpec("sum-of-sinusoids", (Component((-1.0,), 1.0),))
    with pytest.raises(ValueError):
        SynthSpec("nope", (Component((1.0,), 1.0),))


def test_spectral_noise_field_seeded_and_normalized():
    spec = SynthSpec("spectral-noise-field", (Component((2.0, 0.0), 1.0),), seed=5)
    a = synth_signal(spec, [16, 16]).array()
    b = synth_signal(spec, [16, 16]).array()
    assert np.array_equal(a, b)
    assert np.max(np.abs(a)) <= 1.0 + 1e-15
    assert a.std() > 0


def test_spectral_noise_field_decay():
    # larger exponent concentrates energy at low rings
    flat = synth_signal(SynthSpec("spectral-noise-field", (Component((0.0, 0.0), 1.0),), seed=3), [32, 32]).array()
    steep = synth_signal(SynthSpec("spectral-noise-field", (Component((3.0, 0.0), 1.0),), seed=3), [32, 32]).array()
    # steeper decay -> smoother field -> smaller lattice-difference energy
    def roughness(v):
        return np.mean(np.diff(v, axis=0) ** 2) + np.mean(np.diff(v, axis=1) ** 2)
    assert roughness(steep) < roughness(flat)


def test_grid_signal_validation():
    with pytest.raises(ValueError):
        GridSignal([2, 2], np.array([[0, 1], [2, np.nan]]), (0, 3))
    with pytest.raises(ValueError):
        GridSignal([2, 2], np.array([[0, 1], [2, 5]]), (0, 3))
    with pytest.raises(ValueError):
        GridSignal([2, 2, 2, 2], np.zeros((2, 2, 2, 2)), (0, 1))


def test_load_raw_grid_affine_map(tmp_path):
    data = tmp_path / "g.raw"
    header = tmp_path / "g.json"
    np.array([0, 1, 2, 3], dtype="<f4").tofile(data)
    header.write_text(json.dumps({"dims": [2, 2], "dtype": "f4", "norm": "minmax01"}))
    sig = load_raw_grid(data, header)
    assert np.allclose(sig.array().ravel(), [0, 1 / 3, 2 / 3, 1])
    assert sig.value_range == (0.0, 1.0)


def test_load_raw_grid_constant_maps_to_lo(tmp_path, caplog):
    data = tmp_path / "c.raw"
    header = tmp_path / "c.json"
    np.full(4, 7.0, dtype="<f4").tofile(data)
    header.write_text(json.dumps({"dims": [2, 2], "dtype": "f4", "norm": "minmax01"}))
    with caplog.at_level("WARNING"):
        sig = load_raw_grid(data, header)
    assert np.all(sig.array() == 0.0)
    assert any("degenerate" in r.message for r in caplog.records)


def test_load_raw_grid_truncated(tmp_path):
    data = tmp_path / "t.raw"
    header = tmp_path / "t.json"
    np.array([0, 1, 2], dtype="<f4").tofile(data)
    header.write_text(json.dumps({"dims": [2, 2], "dtype": "f4", "norm": "none"}))
    with pytest.raises(DataFormatError, match="bytes"):
        load_raw_grid(data, header)


def test_load_raw_grid_rejects_nonfinite_and_bad_header(tmp_path):
    data = tmp_path / "n.raw"
    header = tmp_path / "n.json"
    np.array([0, np.inf, 1, 2], dtype="<f4").tofile(data)
    header.write_text(json.dumps({"dims": [2, 2], "dtype": "f4", "norm": "none"}))
    with pytest.raises(DataFormatError, match="non-finite"):
        load_raw_grid(data, header)
    header.write_text(json.dumps({"dims": [2, 2], "dtype": "f4", "norm": "none", "extra": 1}))
    with pytest.raises(DataFormatError, match="unknown"):
        load_raw_grid(data, header)


def test_save_load_round_trip(tmp_path):
    spec = SynthSpec("sum-of-sinusoids", (Component((2.0, 1.0), 1.0, 0.4),))
    sig = synth_signal(spec, [8, 8])
    save_raw_grid(sig, tmp_path / "s.raw", tmp_path / "s.json", dtype="f8")
    back = load_raw_grid(tmp_path / "s.raw", tmp_path / "s.json")
    assert np.array_equal(back.array(), sig.array())


def test_minmax_normalization_idempotent(tmp_path):
    data = tmp_path / "g.raw"
    header = tmp_path / "g.json"
    np.array([0, 1, 2, 3], dtype="<f8").tofile(data)
    header.write_text(json.dumps({"dims": [2, 2], "dtype": "f8", "norm": "minmax11"}))
    once = load_raw_grid(data, header)
    once.array().astype("<f8").tofile(data)
    twice = load_raw_grid(data, header)
    assert np.max(np.abs(twice.array() - once.array())) < 1e-12


def test_grid_to_dataset_counts_and_roundtrip():
    spec = SynthSpec("sum-of-sinusoids", (Component((1.0, 2.0), 1.0, 0.7),))
    sig = synth_signal(spec, [4, 4])
    ds = grid_to_dataset(sig)
    assert ds.n == 16
    assert ds.to_grid().shape == (4, 4)
    assert np.array_equal(ds.to_grid(), sig.array())

    one_d = synth_signal(SynthSpec("sum-of-sinusoids", (Component((1.0,), 1.0),)), [8])
    assert grid_to_dataset(one_d).n == 8


def test_add_noise_level_zero_identity():
    ds = grid_to_dataset(synth_signal(SynthSpec("sum-of-sinusoids", (Component((1.0, 1.0), 1.0),)), [8, 8]))
    same = add_noise(ds, 0.0, seed=1)
    assert same is ds


def test_add_noise_statistics_and_determinism():
    rows = 100
    vals = np.sin(np.linspace(0, 40, rows * rows)).reshape(rows, rows)
    sig = GridSignal([rows, rows], vals, (-1, 1))
    ds = grid_to_dataset(sig)
    noisy = add_noise(ds, 0.3, seed=9)
    delta = noisy.targets.asarray() - ds.targets.asarray()
    sigma = ds.targets.asarray().std()
    assert abs(delta.std() / sigma - 0.3) / 0.3 < 0.05
    assert np.array_equal(noisy.coords.asarray(), ds.coords.asarray())
    noisy2 = add_noise(ds, 0.3, seed=9)
    assert np.array_equal(noisy.targets.asarray(), noisy2.targets.asarray())
    with pytest.raises(ValueError):
        add_noise(ds, -0.1, seed=0)


def test_subsample_partition():
    sig = synth_signal(SynthSpec("sum-of-sinusoids", (Component((3.0, 1.0), 1.0, 0.2),)), [10, 10])
    ds = grid_to_dataset(sig)
    train, hold = subsample(ds, 0.25, seed=4)
    assert train.n == 25 and hold.n == 75
    tc = {tuple(r) for r in train.coords.asarray()}
    hc = {tuple(r) for r in hold.coords.asarray()}
    assert not tc & hc
    assert len(tc | hc) == 100
    t2, h2 = subsample(ds, 0.25, seed=4)
    assert np.array_equal(train.coords.asarray(), t2.coords.asarray())
    assert train.keep_fraction == 0.25


def test_subsample_full_fraction():
    ds = grid_to_dataset(synth_signal(SynthSpec("sum-of-sinusoids", (Component((1.0, 1.0), 1.0),)), [4, 4]))
    train, hold = subsample(ds, 1.0, seed=0)
    assert train.n == 16 and hold.n == 0
    assert train.grid_dims == (4, 4)
    with pytest.raises(ValueError):
        subsample(ds, 0.0, seed=0)
    with pytest.raises(ValueError):
        subsample(ds, 1.2, seed=0)


def test_dataset_csv_export(tmp_path):
    ds = grid_to_dataset(synth_signal(SynthSpec("sum-of-sinusoids", (Component((1.0, 1.0), 1.0),)), [2, 2]))
    path = tmp_path / "d.csv"
    dataset_to_csv(ds, path)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "x0,x1,y0"
    assert len(lines) == 5


def test_dataset_validation():
    with pytest.raises(ValueError):
        SignalDataset(Tensor(np.zeros((3, 2))), Tensor(np.zeros((4, 1))))
    with pytest.raises(ValueError):
        SignalDataset(Tensor(np.full((3, 2), 2.0)), Tensor(np.zeros((3, 1))))
