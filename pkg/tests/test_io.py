import json

import numpy as np
import pytest

from bdpkit.estimate import estimate
from bdpkit.io import (DataError, bands_to_csv, load_dataset, read_observations, read_result,
                       result_to_json, write_result)
from bdpkit.uncertainty import forecast

ROBIN = [30, 37, 35, 35, 42, 39, 50, 50, 57, 61, 86, 98, 94, 108, 117, 118]


def _csv(tmp_path, text, name="obs.csv"):
    f = tmp_path / name
    f.write_text(text)
    return f


def test_two_rows(tmp_path):
    d = read_observations(_csv(tmp_path, "path_id,time,count\na,0,3\na,1.5,4\n"))
    assert len(d.t_data) == 1
    np.testing.assert_array_equal(d.t_data[0], [0, 1.5])
    np.testing.assert_array_equal(d.p_data[0], [3, 4])


def test_paths_in_first_appearance_order(tmp_path):
    d = read_observations(_csv(tmp_path, "path_id,time,count\nb,0,1\na,0,5\nb,1,2\na,2,6\n"))
    np.testing.assert_array_equal(d.p_data[0], [1, 2])
    np.testing.assert_array_equal(d.p_data[1], [5, 6])


def test_robin_series():
    d = load_dataset("robin")
    np.testing.assert_array_equal(d.p_data[0], ROBIN)
    np.testing.assert_array_equal(d.t_data[0], [*range(1989, 1999), *range(2010, 2016)])


def test_crane_ships():
    d = load_dataset("crane")
    assert len(d.p_data) == 1 and d.p_data[0].min() > 0


@pytest.mark.parametrize("text,msg", [
    ("path_id,time,count\na,0,1\na,0,2\n", "line 3: duplicate time"),
    ("path_id,time,count\na,0,1\na,2,2\na,1,3\n", "line 4: times of path a are not increasing"),
    ("path_id,time,count\na,0,-1\n", "line 2: negative count"),
    ("path_id,time\na,0\n", "missing column"),
    ("path_id,time,count\na,x,1\n", "line 2: cannot parse"),
    ("path_id,time,count\n", "no observations"),
])
def test_bad_files(tmp_path, text, msg):
    with pytest.raises(DataError, match=msg):
        read_observations(_csv(tmp_path, text))


def test_result_roundtrip(tmp_path, robin):
    res = estimate(robin.t_data, robin.p_data, [0.5, 0.5], [(0, 1), (0, 1)], model="linear")
    out = tmp_path / "r.json"
    write_result(res, out)
    back = read_result(out)
    assert back["schema"] == 1
    ref = res.to_dict()
    for key, value in ref.items():
        assert back[key] == value, key
    assert np.array(back["p"]).tobytes() == res.p.tobytes()
    assert json.loads(result_to_json(res)) == back


def test_read_result_rejects_schema(tmp_path):
    f = tmp_path / "r.json"
    f.write_text('{"schema": 7}')
    with pytest.raises(DataError, match="schema"):
        read_result(f)


def test_band_csv_header():
    b = forecast("Poisson", 3, [0, 1], [1.0], k=3)
    lines = bands_to_csv(b).splitlines()
    assert lines[0] == "time,p0,p2.5,p10,p25,p50,p75,p90,p97.5,p100"
    t, *vals = map(float, lines[2].split(","))
    assert t == 1.0 and np.allclose(vals, 4.0, rtol=1e-10)
