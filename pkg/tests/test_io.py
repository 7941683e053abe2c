import numpy as np
import pytest

from conftest import make_dataset
from dynstack.engine import ModelGrid, parallel_forward_filter
from dynstack.errors import GridError, ParseError, SchemaError
from dynstack.io import (emit_panel, fmt, ingest_panel, load_fit, read_designs, read_locations,
                         save_fit)

MINIMAL = """time,location_id,lon,lat,y_1
1,a,0,0,1.5
1,b,1,0,2.5
2,a,0,0,0.5
2,b,1,0,-1
3,b,1,0,3
3,a,0,0,4
"""


def write(tmp_path, text, name="panel.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_minimal_panel(tmp_path):
    data = ingest_panel(write(tmp_path, MINIMAL))
    assert (data.n, data.T, data.q, data.p) == (2, 3, 1, 0)
    assert data.locations.ids == ("a", "b")
    np.testing.assert_array_equal(data.Y[2, :, 0], [4.0, 3.0])


def test_panel_sorted_by_time_and_location(tmp_path):
    text = "time,location_id,lon,lat,y_1,x_1\n2,z,0,0,1,1\n1,z,0,0,2,2\n2,a,1,1,3,3\n1,a,1,1,4,4\n"
    data = ingest_panel(write(tmp_path, text))
    assert data.locations.ids == ("a", "z")
    np.testing.assert_array_equal(data.times, [1, 2])
    np.testing.assert_array_equal(data.Y[:, :, 0], [[4, 2], [3, 1]])


def test_missing_and_duplicated_cells(tmp_path):
    with pytest.raises(GridError, match="time=3 location_id=a"):
        ingest_panel(write(tmp_path, MINIMAL.replace("3,a,0,0,4\n", "")))
    with pytest.raises(GridError, match="duplicated"):
        ingest_panel(write(tmp_path, MINIMAL + "1,a,0,0,9\n"))
    with pytest.raises(GridError, match="coordinates"):
        ingest_panel(write(tmp_path, MINIMAL.replace("2,a,0,0", "2,a,0,5")))


def test_parse_errors_report_line_and_column(tmp_path):
    with pytest.raises(ParseError) as info:
        ingest_panel(write(tmp_path, MINIMAL.replace("2,b,1,0,-1", "2,b,1,0,abc")))
    assert info.value.line == 5 and info.value.column == "y_1"
    with pytest.raises(ParseError) as info:
        ingest_panel(write(tmp_path, MINIMAL.replace("2,b,1,0,-1", "2,b,1,0")))
    assert info.value.line == 5
    with pytest.raises(ParseError):
        ingest_panel(write(tmp_path, MINIMAL.replace("2,b,1,0,-1", "2,b,1,0,nan")))


def test_schema_errors(tmp_path):
    with pytest.raises(SchemaError):
        ingest_panel(write(tmp_path, MINIMAL.replace("time,", "t,")))
    with pytest.raises(SchemaError):
        ingest_panel(write(tmp_path, MINIMAL.replace("y_1", "z_1")))
    with pytest.raises(SchemaError):
        ingest_panel(write(tmp_path, ""))


def test_round_trip_is_byte_stable(tmp_path, small_data):
    data, _ = small_data
    first = emit_panel(data, tmp_path / "a.csv", {"seed": 0})
    again = ingest_panel(first)
    np.testing.assert_allclose(again.Y, data.Y, rtol=1e-11)
    np.testing.assert_allclose(again.locations.coords, data.locations.coords, rtol=1e-11)
    second = emit_panel(again, tmp_path / "b.csv", {"seed": 0})
    assert first.read_bytes() == second.read_bytes()
    head = first.read_text().splitlines()[0]
    assert head.startswith("# dynstack version=") and "seed=0" in head


def test_float_format():
    assert fmt(0.1 + 0.2) == "0.3"
    assert fmt(1 / 3) == "0.333333333333"
    assert fmt(np.int64(3)) == "3" and fmt(True) == "true"


def test_locations_and_designs(tmp_path, small_data):
    data, _ = small_data
    locs, x = read_locations(write(tmp_path, "location_id,lon,lat,x_1\nu1,0.5,0.5,2\n", "l.csv"), 1)
    assert locs.ids == ("u1",) and x.shape == (1, 1)
    with pytest.raises(SchemaError):
        read_locations(write(tmp_path, "id,lon,lat\nu1,0,0\n", "l2.csv"), 0)
    ids = data.locations.ids
    rows = "".join(f"{k},{i},1,2\n" for k in (1, 2) for i in ids)
    xs = read_designs(write(tmp_path, "k,location_id,x_1,x_2\n" + rows, "d.csv"), data.locations, 2)
    assert xs.shape == (2, data.n, 2)
    with pytest.raises(GridError):
        gap = "".join(f"{k},{i},1,2\n" for k in (1, 3) for i in ids)
        read_designs(write(tmp_path, "k,location_id,x_1,x_2\n" + gap, "d2.csv"), data.locations, 2)
    with pytest.raises(GridError, match="missing"):
        read_designs(write(tmp_path, "k,location_id,x_1,x_2\n" + rows.split("\n", 1)[1], "d3.csv"),
                     data.locations, 2)


def test_fit_archive_round_trip(tmp_path, small_data):
    data, _ = small_data
    fit = parallel_forward_filter(data, ModelGrid.cross([0.7, 0.9], [2.0]), threads=1)
    back = load_fit(save_fit(fit, tmp_path / "fit.npz"))
    np.testing.assert_array_equal(back.m, fit.m)
    np.testing.assert_array_equal(back.weight_trace.per_location, fit.weight_trace.per_location)
    assert back.grid == fit.grid and back.locations.ids == fit.locations.ids
    assert back.T == fit.T and back.config_echo == fit.config_echo
