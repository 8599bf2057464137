import numpy as np
import pytest

from fedcontrast.errors import ParameterError
from fedcontrast.parameters import (
    ParameterSet,
    ema_blend,
    extract_role,
    is_buffer,
    mean_parameter_sets,
    shape_compatible,
    stitch,
)


def make_set(values: dict[str, float], shape=(2, 3), dtype=np.float32) -> ParameterSet:
    entries = {name: np.full(shape, value, dtype=dtype) for name, value in values.items()}
    roles = {name: name.split("/", 1)[0] for name in entries}
    return ParameterSet(entries=entries, roles=roles)


def test_roles_must_be_known():
    with pytest.raises(ParameterError):
        ParameterSet(entries={"oops/w": np.zeros(2)}, roles={"oops/w": "oops"})


def test_entries_roles_must_match():
    with pytest.raises(ParameterError):
        ParameterSet(entries={"backbone/w": np.zeros(2)}, roles={})


def test_extract_role_partitions_names():
    ps = make_set({"backbone/conv/w": 1.0, "backbone/conv/b": 2.0, "head/fc/w": 3.0})
    backbone = extract_role(ps, "backbone")
    head = extract_role(ps, "head")
    assert set(backbone.entries) == {"backbone/conv/w", "backbone/conv/b"}
    assert set(head.entries) == {"head/fc/w"}
    assert set(backbone.entries).isdisjoint(head.entries)
    assert set(backbone.entries) | set(head.entries) == set(ps.entries)


def test_extract_missing_role_is_empty_not_error():
    ps = make_set({"backbone/w": 1.0, "head/w": 2.0})
    proj = extract_role(ps, "projector")
    assert len(proj) == 0


def test_extract_unknown_role_raises():
    ps = make_set({"backbone/w": 1.0})
    with pytest.raises(ParameterError):
        extract_role(ps, "decoder")


def test_stitch_round_trips_with_extract():
    ps = make_set({"backbone/w": 1.0, "head/w": 2.0, "projector/w": 3.0})
    rebuilt = stitch(extract_role(ps, "backbone"), extract_role(ps, "head"))
    assert set(rebuilt.entries) == {"backbone/w", "head/w"}
    for name in rebuilt.entries:
        np.testing.assert_array_equal(rebuilt.entries[name], ps.entries[name])


def test_stitch_backbone_with_projector_is_valid():
    ps = make_set({"backbone/w": 1.0, "projector/w": 3.0})
    client = stitch(extract_role(ps, "backbone"), extract_role(ps, "projector"))
    assert client.present_roles() == {"backbone", "projector"}


def test_stitch_overlap_raises():
    a = make_set({"backbone/w": 1.0})
    with pytest.raises(ParameterError):
        stitch(a, a)


def test_shape_compatible_checks_names_shapes_roles():
    a = make_set({"backbone/w": 1.0})
    assert shape_compatible(a, make_set({"backbone/w": 9.0}))
    assert not shape_compatible(a, make_set({"backbone/v": 1.0}))
    assert not shape_compatible(a, make_set({"backbone/w": 1.0}, shape=(3, 2)))
    b = ParameterSet(entries={"backbone/w": np.zeros((2, 3), np.float32)},
                     roles={"backbone/w": "head"})
    assert not shape_compatible(a, b)


def test_copy_shares_no_storage():
    a = make_set({"backbone/w": 1.0})
    b = a.copy()
    b.entries["backbone/w"][:] = 7.0
    assert float(a.entries["backbone/w"][0, 0]) == 1.0


def test_buffer_naming_convention():
    assert is_buffer("backbone/bn1/running_mean")
    assert is_buffer("projector/bn/running_var")
    assert not is_buffer("backbone/bn1/weight")


def test_num_parameters_excludes_buffers():
    entries = {
        "backbone/bn/weight": np.zeros(4, np.float32),
        "backbone/bn/running_mean": np.zeros(4, np.float32),
        "head/fc/weight": np.zeros((4, 2), np.float32),
    }
    roles = {n: n.split("/", 1)[0] for n in entries}
    ps = ParameterSet(entries=entries, roles=roles)
    assert ps.num_parameters() == 4 + 8
    assert ps.num_parameters(roles=("head",)) == 8


def test_ema_blend_arithmetic():
    target = make_set({"backbone/w": 1.0}, dtype=np.float64)
    online = make_set({"backbone/w": 2.0}, dtype=np.float64)
    out = ema_blend(target, online, 0.9)
    np.testing.assert_allclose(out.entries["backbone/w"], 1.1, rtol=0, atol=1e-12)


def test_mean_parameter_sets_entrywise():
    a = make_set({"backbone/w": 1.0})
    a.entries["backbone/w"][:] = [[1, 3, 1], [1, 3, 1]]
    b = make_set({"backbone/w": 1.0})
    b.entries["backbone/w"][:] = [[3, 5, 3], [3, 5, 3]]
    mean = mean_parameter_sets([a, b])
    np.testing.assert_array_equal(mean.entries["backbone/w"], [[2, 4, 2], [2, 4, 2]])


def test_mean_parameter_sets_empty_raises():
    with pytest.raises(ParameterError):
        mean_parameter_sets([])


def test_mean_parameter_sets_weighted():
    a = make_set({"backbone/w": 0.0})
    b = make_set({"backbone/w": 4.0})
    mean = mean_parameter_sets([a, b], weights=[3.0, 1.0])
    np.testing.assert_allclose(mean.entries["backbone/w"], 1.0)
