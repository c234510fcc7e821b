import numpy as np

from mfglab.streams import derive_seed, ordered_map, purpose_tag, step_normals, substream


def test_substreams_are_keyed():
    a = substream(7, "probe", 3).standard_normal(5)
    np.testing.assert_array_equal(a, substream(7, "probe", 3).standard_normal(5))
    assert not np.array_equal(a, substream(7, "probe", 4).standard_normal(5))
    assert not np.array_equal(a, substream(7, "noise", 3).standard_normal(5))
    assert not np.array_equal(a, substream(8, "probe", 3).standard_normal(5))


def test_step_normals_do_not_depend_on_call_order():
    late = step_normals(1, "particles", 9, (4, 1), 0)
    for step in range(9):
        step_normals(1, "particles", step, (4, 1), 0)
    np.testing.assert_array_equal(late, step_normals(1, "particles", 9, (4, 1), 0))


def test_ordered_map_keeps_order():
    items = list(range(20))
    draw = lambda i: float(substream(0, "map", i).random())  # noqa: E731
    assert ordered_map(draw, items, threads=4) == ordered_map(draw, items, threads=1)
    assert ordered_map(lambda i: i * i, items, threads=3) == [i * i for i in items]


def test_derived_seeds_are_stable():
    assert derive_seed(5, "pair", 2) == derive_seed(5, "pair", 2)
    assert derive_seed(5, "pair", 2) != derive_seed(5, "pair", 3)
    assert 0 <= derive_seed(5, "pair", 2) < 2**32
    assert purpose_tag("pair") == purpose_tag("pair")
