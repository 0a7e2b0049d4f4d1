import io
import tracemalloc

import numpy as np
import pytest

from divacancy.io import KINDS, SCHEMAS, MeasurementTable, TableError, emit_table, parse_table, write_csv


def write(tmp_path, text, name="t.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def nine_digits(x):
    return np.array([float("%.9g" % v) for v in x])


def random_table(kind, n, rng):
    cols = {}
    for c in SCHEMAS[kind]:
        if c.dtype == "float":
            cols[c.name] = nine_digits(rng.uniform(0.1, 300.0, n))
        elif c.dtype == "bool":
            cols[c.name] = rng.random(n) < 0.5
        else:
            cols[c.name] = [f"{c.name}-{i % 3}" for i in range(n)]
    return MeasurementTable(kind, cols, {"seed": "7", "source": "synthetic"})


def test_two_row_ple_file(tmp_path):
    p = write(tmp_path, "defect_id,form,frequency(THz),sigma(MHz),mw_on\n"
                        "kk-01,kk,265.3101,10,0\n"
                        "kk-01,kk,265.3042,10,1\n")
    t = parse_table(p, "ple-lines")
    assert len(t) == 2
    np.testing.assert_array_equal(t["frequency"], [265.3101, 265.3042])
    np.testing.assert_array_equal(t["mw_on"], [False, True])
    assert list(t["defect_id"]) == ["kk-01", "kk-01"]


def test_wavelength_header_converted(tmp_path):
    p = write(tmp_path, "defect_id,form,frequency(nm),sigma(GHz),mw_on\n3c-1,3C,1106,2,0\n")
    t = parse_table(p, "ple-lines")
    assert t["frequency"][0] == pytest.approx(271.0, abs=0.1)
    assert t["sigma"][0] == pytest.approx(2000.0)


@pytest.mark.parametrize("cell", ["NaN", "inf", "-Infinity"])
def test_non_finite_cell_rejected(tmp_path, cell):
    p = write(tmp_path, f"tau(ns),g2\n0,0.1\n1,{cell}\n")
    with pytest.raises(TableError, match=r"row 2, column 'g2'"):
        parse_table(p, "g2-histogram")


def test_unit_mismatch_and_missing_column(tmp_path):
    with pytest.raises(TableError, match="unit"):
        parse_table(write(tmp_path, "tau(K),g2\n0,0.1\n"), "g2-histogram")
    with pytest.raises(TableError, match="missing column 'g2'"):
        parse_table(write(tmp_path, "tau(ns)\n0\n"), "g2-histogram")
    with pytest.raises(TableError, match="unknown column"):
        parse_table(write(tmp_path, "tau(ns),g2,extra\n0,0.1,3\n"), "g2-histogram")
    with pytest.raises(TableError, match="row 1"):
        parse_table(write(tmp_path, "tau(ns),g2\n0\n"), "g2-histogram")
    with pytest.raises(TableError, match="unknown table kind"):
        parse_table(write(tmp_path, "tau(ns),g2\n"), "spectrum")


def test_unit_conversions(tmp_path):
    t = parse_table(write(tmp_path, "B_mag(mT),B_theta(rad),frequency(MHz),sigma(kHz)\n25,0.5,1336,500\n"),
                    "odmr-resonances")
    assert t["B_mag"][0] == pytest.approx(250.0)
    assert t["B_theta"][0] == pytest.approx(np.rad2deg(0.5))
    assert t["frequency"][0] == pytest.approx(1.336)
    assert t["sigma"][0] == pytest.approx(0.5)


def test_metadata_lines(tmp_path):
    t = parse_table(write(tmp_path, "# seed = 12\n# note = x\ntime(us),signal\n0,1\n"), "time-trace")
    assert t.metadata == {"seed": "12", "note": "x"}


@pytest.mark.parametrize("kind", KINDS)
def test_round_trip_every_kind(tmp_path, kind):
    t = random_table(kind, 25, np.random.default_rng(len(kind)))
    p = tmp_path / f"{kind}.csv"
    emit_table(t, p)
    assert parse_table(p, kind) == t


def test_round_trip_preserves_column_order_and_units(tmp_path):
    t = random_table("pl-trace", 4, np.random.default_rng(0))
    buf = io.StringIO()
    emit_table(t, buf)
    header = [l for l in buf.getvalue().splitlines() if not l.startswith("#")][0]
    assert header == "time(ns),signal,sigma,power(mW),preparation"


def test_empty_table_is_header_only(tmp_path):
    t = MeasurementTable("g2-histogram", {"tau": [], "g2": []})
    p = tmp_path / "empty.csv"
    emit_table(t, p)
    assert p.read_text() == "tau(ns),g2\n"
    assert parse_table(p, "g2-histogram") == t


def test_million_rows_streamed(tmp_path):
    n = 1_000_000
    t = MeasurementTable("time-trace", {"time": np.arange(n) * 0.001, "signal": np.ones(n)})
    p = tmp_path / "big.csv"
    tracemalloc.start()
    emit_table(t, p)
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    assert peak < 20e6
    with open(p) as fh:
        assert sum(1 for _ in fh) == n + 1


def test_table_validation():
    with pytest.raises(TableError, match="non-finite"):
        MeasurementTable("g2-histogram", {"tau": [0.0, 1.0], "g2": [0.0, np.nan]})
    with pytest.raises(TableError, match="rows"):
        MeasurementTable("g2-histogram", {"tau": [0.0, 1.0], "g2": [0.0]})
    with pytest.raises(TableError, match="unknown"):
        MeasurementTable("g2-histogram", {"tau": [0.0], "g2": [0.0], "x": [1.0]})


def test_write_error_names_path(tmp_path):
    t = MeasurementTable("g2-histogram", {"tau": [0.0], "g2": [0.0]})
    bad = tmp_path / "missing-dir" / "out.csv"
    with pytest.raises(OSError, match="missing-dir"):
        emit_table(t, bad)


def test_write_csv_formats():
    buf = io.StringIO()
    write_csv(buf, ["a", "b", "c"], [[1.0 / 3.0, True, "x"]])
    assert buf.getvalue() == "a,b,c\n0.333333333,1,x\n"
