import os

import numpy as np
import pytest

from sppinn.errors import ShapeError
from sppinn.report import (
    ALPHA_HEADER,
    CLF_TRACE_HEADER,
    DIFF_HEADER,
    ENERGY_HEADER,
    FIELD_HEADER,
    ROBUSTNESS_HEADER,
    TRACE_HEADER,
    diff_fields,
    read_csv,
    render_figures,
    write_alpha_csv,
    write_clf_trace_csv,
    write_csv,
    write_energy_csv,
    write_field_csv,
    write_robustness_csv,
    write_trace_csv,
)


def sample_field_rows(shift=0.0):
    xs = np.linspace(0.0, 2.0, 5)
    ts = np.linspace(0.0, 1.0, 3)
    tt, xx = np.meshgrid(ts, xs, indexing="ij")
    u = np.sin(xx) * np.exp(-tt) + shift
    return np.column_stack([xx.ravel(), tt.ravel(), u.ravel()])


class TestWriters:
    def test_field_round_trip(self, tmp_path):
        rows = sample_field_rows()
        path = write_field_csv(str(tmp_path / "f.csv"), rows)
        header, body = read_csv(path)
        assert header == FIELD_HEADER
        back = np.array([[float(v) for v in row] for row in body])
        assert np.array_equal(back, rows)

    def test_field_shape_guard(self, tmp_path):
        with pytest.raises(ShapeError):
            write_field_csv(str(tmp_path / "f.csv"), np.zeros((4, 2)))

    def test_energy_shape_guard(self, tmp_path):
        with pytest.raises(ShapeError):
            write_energy_csv(str(tmp_path / "e.csv"), np.zeros(3), np.zeros(4))

    def test_headers(self, tmp_path):
        e = write_energy_csv(str(tmp_path / "e.csv"), [0.0, 1.0], [0.5, 0.25])
        t = write_trace_csv(str(tmp_path / "t.csv"), [(0, 1.0, 0.1, 0.2, 0.3, 0.4, 1e-3)])
        c = write_clf_trace_csv(str(tmp_path / "c.csv"), [(0, 2.3, 0.1, 0.2, 0.5, 1e-12)])
        r = write_robustness_csv(str(tmp_path / "r.csv"), [("clean", 0.0, 0.9, 10, 0)])
        a = write_alpha_csv(str(tmp_path / "a.csv"), np.eye(2))
        assert read_csv(e)[0] == ENERGY_HEADER
        assert read_csv(t)[0] == TRACE_HEADER
        assert read_csv(c)[0] == CLF_TRACE_HEADER
        assert read_csv(r)[0] == ROBUSTNESS_HEADER
        assert read_csv(a)[0] == ALPHA_HEADER

    def test_alpha_rows_enumerate_matrix(self, tmp_path):
        alpha = np.arange(6.0).reshape(2, 3)
        path = write_alpha_csv(str(tmp_path / "a.csv"), alpha)
        _, rows = read_csv(path)
        assert len(rows) == 6
        assert rows[0] == ("0", "0", "0.0")
        assert rows[-1] == ("1", "2", "5.0")

    def test_same_data_writes_identical_bytes(self, tmp_path):
        rows = sample_field_rows()
        a = write_field_csv(str(tmp_path / "a.csv"), rows)
        b = write_field_csv(str(tmp_path / "b.csv"), rows)
        assert open(a, "rb").read() == open(b, "rb").read()

    def test_full_precision_round_trip(self, tmp_path):
        value = 1.0 / 3.0
        path = write_energy_csv(str(tmp_path / "e.csv"), [value], [value * 7])
        _, rows = read_csv(path)
        assert float(rows[0][0]) == value
        assert float(rows[0][1]) == value * 7


class TestDiff:
    def test_identical_fields_diff_to_zero(self, tmp_path):
        a = write_field_csv(str(tmp_path / "a.csv"), sample_field_rows())
        b = write_field_csv(str(tmp_path / "b.csv"), sample_field_rows())
        out = diff_fields(a, b, str(tmp_path / "d.csv"))
        header, rows = read_csv(out)
        assert header == DIFF_HEADER
        data = np.array([[float(v) for v in r] for r in rows])
        assert data.shape == (3, 3)
        assert np.all(data[:, 1:] == 0.0)

    def test_constant_offset_shows_in_linf(self, tmp_path):
        a = write_field_csv(str(tmp_path / "a.csv"), sample_field_rows())
        b = write_field_csv(str(tmp_path / "b.csv"), sample_field_rows(shift=1e-3))
        out = diff_fields(a, b, str(tmp_path / "d.csv"))
        _, rows = read_csv(out)
        data = np.array([[float(v) for v in r] for r in rows])
        assert np.allclose(data[:, 2], 1e-3, rtol=1e-12)
        # trapezoid L2 of a constant offset over [0, 2]
        assert np.allclose(data[:, 1], 1e-3 * np.sqrt(2.0), rtol=1e-12)

    def test_grid_mismatch_rejected(self, tmp_path):
        a = write_field_csv(str(tmp_path / "a.csv"), sample_field_rows())
        small = sample_field_rows()[:5]
        b = write_field_csv(str(tmp_path / "b.csv"), small)
        with pytest.raises(ShapeError):
            diff_fields(a, b, str(tmp_path / "d.csv"))

    def test_wrong_header_rejected(self, tmp_path):
        a = write_field_csv(str(tmp_path / "a.csv"), sample_field_rows())
        e = write_energy_csv(str(tmp_path / "e.csv"), [0.0], [1.0])
        with pytest.raises(ShapeError, match="not a field CSV"):
            diff_fields(a, e, str(tmp_path / "d.csv"))


class TestFigures:
    def test_each_kind_renders_a_png(self, tmp_path):
        paths = [
            write_field_csv(str(tmp_path / "field.csv"), sample_field_rows()),
            write_energy_csv(str(tmp_path / "energy.csv"), [0.0, 1.0, 2.0], [3.0, 2.0, 1.5]),
            write_trace_csv(str(tmp_path / "trace.csv"),
                            [(i, 1.0 / (i + 1), 0.1, 0.05, 0.02, 0.0, 1e-3) for i in range(5)]),
            write_clf_trace_csv(str(tmp_path / "clf.csv"),
                                [(i, 2.0 - 0.1 * i, 0.1, 0.2, 0.5 + 0.05 * i, 0.0) for i in range(4)]),
            write_robustness_csv(str(tmp_path / "rob.csv"),
                                 [("clean", 0.0, 0.9, 10, 0), ("pgd", 0.01, 0.8, 10, 0),
                                  ("pgd", 0.02, 0.7, 10, 0)]),
        ]
        paths.append(diff_fields(paths[0], paths[0], str(tmp_path / "diff.csv")))
        pngs = render_figures(paths)
        assert len(pngs) == 6
        for png in pngs:
            assert os.path.exists(png)
            assert os.path.getsize(png) > 1000

    def test_unrecognized_header_is_skipped(self, tmp_path):
        odd = write_csv(str(tmp_path / "odd.csv"), ("a", "b"), [(1, 2)])
        assert render_figures([odd]) == []
