import json

import numpy as np
import pytest

from vesseltwin import twinio
from vesseltwin.twinio import TwinFormatError

from conftest import tube


def test_roundtrip_exact(tmp_path, donors):
    t = donors[0]
    path = tmp_path / "t.json"
    twinio.save_twin(t, path)
    u = twinio.load_twin(path)
    np.testing.assert_array_equal(u.boundary, t.boundary)
    np.testing.assert_array_equal(u.radii, t.radii)
    np.testing.assert_array_equal(u.lesion_mask, t.lesion_mask)
    assert u.meta == t.meta
    assert twinio.dumps_twin(u) == path.read_text()


def test_documented_layout(donors):
    d = json.loads(twinio.dumps_twin(donors[1]))
    assert set(d) == {"format_version", "meta", "centerline", "radii", "lesion_mask", "sections"}
    assert d["format_version"] == 1
    assert set(d["sections"]) == {"k", "boundary"}
    assert np.asarray(d["sections"]["boundary"]).shape == (donors[1].n, donors[1].k, 3)


def test_sections_optional(donors):
    t = donors[2]
    d = twinio.twin_to_dict(t, include_sections=False)
    d["meta"] = dict(d["meta"], k=t.k)
    u = twinio.twin_from_dict(json.loads(json.dumps(d)))
    np.testing.assert_allclose(u.boundary, t.boundary, atol=1e-12)


def test_mask_optional():
    r = np.full(300, 0.2)
    r[100:130] = 0.08
    d = twinio.twin_to_dict(tube(n=300, k=4, radii=r))
    del d["lesion_mask"]
    u = twinio.twin_from_dict(d)
    assert u.lesion_mask[100:130].all() and u.lesion_mask.sum() == 30


@pytest.mark.parametrize("mutate, msg", [
    (lambda d: d.update(format_version=9), "format_version"),
    (lambda d: d.pop("radii"), "radii"),
    (lambda d: d["sections"].update(k=5), "inconsistent"),
    (lambda d: d.update(centerline=[[0, 0]]), "centerline"),
])
def test_format_errors(mutate, msg):
    d = twinio.twin_to_dict(tube(n=5, k=4))
    mutate(d)
    with pytest.raises(TwinFormatError, match=msg):
        twinio.twin_from_dict(d)


def test_validate_file(tmp_path, donors):
    good = tmp_path / "good.json"
    twinio.save_twin(donors[0], good)
    assert twinio.validate_file(good) == []

    bad = donors[0].copy()
    bad.radii[4] = -1.0
    twinio.save_twin(bad, tmp_path / "neg.json")
    assert "radii positive and finite" in twinio.validate_file(tmp_path / "neg.json")

    (tmp_path / "trunc.json").write_text(good.read_text()[:200])
    problems = twinio.validate_file(tmp_path / "trunc.json")
    assert len(problems) == 1 and "parse" in problems[0]

    assert "unreadable" in twinio.validate_file(tmp_path / "missing.json")[0]


def test_ply(tmp_path):
    t = tube(n=4, k=5)
    path = tmp_path / "t.ply"
    twinio.export_ply(t, path, scalar=np.arange(4.0), scalar_name="pressure")
    lines = path.read_text().splitlines()
    assert lines[:3] == ["ply", "format ascii 1.0", "element vertex 20"]
    assert lines[6] == "property double pressure" and lines[7] == "end_header"
    body = np.array([list(map(float, x.split())) for x in lines[8:]])
    np.testing.assert_array_equal(body[:, :3], t.boundary.reshape(-1, 3))
    np.testing.assert_array_equal(body[:, 3], np.repeat(np.arange(4.0), 5))
    with pytest.raises(ValueError):
        twinio.export_ply(t, path, scalar=np.ones(7))
