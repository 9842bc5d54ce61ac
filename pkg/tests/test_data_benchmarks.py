from __future__ import annotations

import numpy as np
import pytest
from numpy.testing import assert_allclose

from rrgpssm.benchmarks import gen_benchmark1, gen_benchmark2, kink_dynamics, tanh_dynamics
from rrgpssm.data import DataFormatError, Dataset, load_csv, save_csv


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestLoadCsv:
    def test_three_rows(self, tmp_path):
        ds = load_csv(write(tmp_path, "t,y\n1,0.1\n2,0.2\n3,0.3\n"))
        assert ds.T == 3
        assert_allclose(ds.y[:, 0], [0.1, 0.2, 0.3])
        assert_allclose(ds.t, [1, 2, 3])
        assert ds.u is None and ds.x is None

    def test_inputs_and_outputs(self, tmp_path):
        ds = load_csv(write(tmp_path, "u1,u2,y\n1,2,3\n4,5,6\n"))
        assert ds.n_u == 2 and ds.n_y == 1
        assert_allclose(ds.u, [[1, 2], [4, 5]])
        assert ds.columns["u"] == ["u1", "u2"]

    def test_state_columns_and_ignore(self, tmp_path):
        ds = load_csv(write(tmp_path, "y,x,note\n1,0.5,7\n2,1.5,8\n"), ignore=("note",))
        assert_allclose(ds.x[:, 0], [0.5, 1.5])

    @pytest.mark.parametrize(
        "text, line, match",
        [
            ("t,y\n1,abc\n", 2, "non-numeric"),
            ("t,y\n1,0.1\n2,nan\n", 3, "non-finite"),
            ("t,y\n1,0.1\n2,0.2,9\n", 3, "expected 2 fields"),
            ("t,z\n1,2\n", 1, "unrecognised column"),
            ("t,u\n1,2\n", 1, "no observation"),
            ("t,t,y\n1,1,2\n", 1, "more than one t"),
        ],
    )
    def test_errors_name_the_line(self, tmp_path, text, line, match):
        with pytest.raises(DataFormatError, match=match) as e:
            load_csv(write(tmp_path, text))
        assert e.value.line == line
        assert f"line {line}" in str(e.value)

    def test_empty_files(self, tmp_path):
        with pytest.raises(DataFormatError, match="header"):
            load_csv(write(tmp_path, ""))
        with pytest.raises(DataFormatError, match="no data rows"):
            load_csv(write(tmp_path, "y\n"))

    def test_blank_lines_skipped(self, tmp_path):
        assert load_csv(write(tmp_path, "y\n1\n\n2\n")).T == 2

    def test_round_trip_is_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        ds = Dataset(rng.standard_normal((7, 2)), u=rng.standard_normal(7), t=np.arange(7.0), x=rng.standard_normal(7))
        p = tmp_path / "rt.csv"
        save_csv(p, ds)
        back = load_csv(p)
        for a, b in [(ds.y, back.y), (ds.u, back.u), (ds.t, back.t), (ds.x, back.x)]:
            assert np.array_equal(a, b)


def test_dataset_validation_and_split():
    with pytest.raises(ValueError, match="inputs"):
        Dataset(np.zeros(3), u=np.zeros(4))
    with pytest.raises(ValueError, match="states"):
        Dataset(np.zeros(3), x=np.zeros(2))
    ds = Dataset(np.arange(5.0), u=np.arange(5.0), x=np.arange(5.0))
    a, b = ds.split(3)
    assert a.T == 3 and b.T == 2
    assert_allclose(b.x[:, 0], [3, 4])


class TestGenerators:
    def test_tanh_noise_free_step(self):
        _, x = gen_benchmark1(2, seed=0, q=0.0, r=0.0, x1=1.0)
        assert_allclose(x[1, 0], np.tanh(2.0))
        assert_allclose(x[1, 0], 0.96403, atol=5e-6)

    def test_kink_noise_free_sequence(self):
        _, x = gen_benchmark2(8, seed=0, q=0.0, r=0.0, x1=0.0)
        assert_allclose(x[:, 0], [0, 1, 2, 3, 4, 5, 1, 2])

    def test_kink_is_continuous(self):
        assert kink_dynamics(4.0) == 5.0
        assert abs(kink_dynamics(4.0 - 1e-9) - 5.0) < 1e-8
        assert abs(kink_dynamics(4.0 + 1e-9) - 5.0) < 1e-7

    @pytest.mark.parametrize("gen", [gen_benchmark1, gen_benchmark2])
    def test_reproducible(self, gen):
        a, xa = gen(50, seed=7)
        b, xb = gen(50, seed=7)
        c, _ = gen(50, seed=8)
        assert np.array_equal(a.y, b.y) and np.array_equal(xa, xb)
        assert not np.array_equal(a.y, c.y)
        assert a.x is not None and np.array_equal(a.x, xa)

    @pytest.mark.parametrize("gen, f, var", [(gen_benchmark1, tanh_dynamics, 0.1), (gen_benchmark2, kink_dynamics, 1.0)])
    def test_noise_variances(self, gen, f, var):
        n = 100_000
        ds, x = gen(n, seed=1)
        w = x[1:, 0] - f(x[:-1, 0])
        e = ds.y[:, 0] - x[:, 0]
        for noise in (w, e):
            assert abs(noise.var() - var) < 3 * var * np.sqrt(2 / noise.size)

    def test_tanh_states_bounded(self):
        _, x = gen_benchmark1(10_000, seed=2)
        s = np.sqrt(0.1)
        assert np.all(np.abs(x) < 1 + 5 * s)

    def test_invalid_length(self):
        with pytest.raises(ValueError):
            gen_benchmark1(0)
