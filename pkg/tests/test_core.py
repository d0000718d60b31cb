import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anisofrac.core import (
    AnisoParams,
    GridFunction,
    GridMismatchError,
    GridSpec,
    ParameterError,
    SupercriticalError,
    SupportError,
    aniso_summary,
    evaluate_expression,
    expression_keys,
    load_grid_function,
    lp_norm,
    read_header,
    sample,
    save_grid_function,
)


def test_from_domain_puts_faces_on_margin_centers():
    g = GridSpec.from_domain([(0.0, 1.0)], 4)
    c = g.centers(0)
    assert g.spacing == (0.25,)
    assert np.allclose(c, [0.0, 0.25, 0.5, 0.75, 1.0])
    assert g.domain() == ((0.0, 1.0),)
    assert g.interior_mask().tolist() == [False, True, True, True, False]


def test_grid_geometry_2d():
    g = GridSpec.from_domain([(0.0, 1.0), (-1.0, 1.0)], (4, 8), margin=2)
    assert g.dim == 2
    assert g.spacing == (0.25, 0.25)
    assert g.cell_volume == pytest.approx(0.0625)
    assert g.shape == (4 + 3, 8 + 3)
    assert g.interior_mask().sum() == 3 * 7
    header = g.header()
    assert header["dim"] == 2 and header["margin"] == [2, 2]


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(bounds=((1.0, 0.0),), cells=(4,), margin=(1,)),
        dict(bounds=((0.0, 1.0),), cells=(2,), margin=(1,)),
        dict(bounds=((0.0, 1.0),), cells=(8,), margin=(0,)),
    ],
)
def test_bad_grids_rejected(kwargs):
    with pytest.raises(ParameterError):
        GridSpec(**kwargs)


def test_margin_must_vanish_and_error_names_axis():
    g = GridSpec.from_domain([(0.0, 1.0), (0.0, 1.0)], 4)
    v = np.zeros(g.shape)
    v[2, 0] = 1.0
    with pytest.raises(SupportError, match="axis 1"):
        GridFunction(g, v)
    assert GridFunction.masked(g, v).max_abs() == 0.0


def test_arithmetic_and_mismatch():
    g = GridSpec.from_domain([(0.0, 1.0)], 4)
    h = GridSpec.from_domain([(0.0, 2.0)], 4)
    u = sample({"kind": "tent", "center": 0.5, "width": 0.5}, g)
    assert np.allclose((u + u).values, (u * 2.0).values)
    assert (u - u).max_abs() == 0.0
    assert np.allclose((-u).values, -u.values)
    assert u.inner(u) == pytest.approx(np.sum(u.values**2) * g.cell_volume)
    with pytest.raises(GridMismatchError):
        u + GridFunction.zeros(h)


def test_params_validation():
    with pytest.raises(ParameterError, match=r"s\[1\]"):
        AnisoParams((1.0, 1.5), (2.0, 2.0))
    with pytest.raises(ParameterError):
        AnisoParams((0.5,), (1.0,))
    with pytest.raises(ParameterError):
        AnisoParams((0.5, 0.5), (2.0,))
    P = AnisoParams((1.0, 0.6), (2.0, 3.0))
    assert (P.dim, P.p_min, P.p_max) == (2, 2.0, 3.0)


def test_summary_hand_computed():
    # s = (1, 0.6), p = (2, 2): s_bar = 0.75, sp_bar = 1.5, p* = 2 * 2 / 0.5 = 8
    S = aniso_summary(AnisoParams((1.0, 0.6), (2.0, 2.0)))
    assert S.s_bar == pytest.approx(0.75)
    assert S.sp_bar == pytest.approx(1.5)
    assert S.p_star == pytest.approx(8.0)


def test_supercritical():
    P = AnisoParams((1.0,), (2.0,))
    with pytest.raises(SupercriticalError, match="p\\* undefined"):
        aniso_summary(P)
    S = aniso_summary(P, strict=False)
    assert S.supercritical and S.p_star_or_inf() == math.inf


def test_summary_grid_dimension_checked():
    with pytest.raises(GridMismatchError):
        aniso_summary(AnisoParams((0.5,), (2.0,)), GridSpec.from_domain([(0, 1), (0, 1)], 4))


def test_lp_norm_of_indicator():
    g = GridSpec.from_domain([(-4.0, 4.0)], 64)
    u = sample({"kind": "indicator", "lo": 0.0, "hi": 1.0, "amplitude": 2.0}, g)
    # 9 nodes on [0, 1] with value 2, cell width 1/8
    assert lp_norm(u, 2.0) ** 2 == pytest.approx(9 * 4 / 8)
    with pytest.raises(ParameterError):
        lp_norm(u, 1.0)


def test_expression_registry():
    assert expression_keys("tent") == {"kind", "amplitude", "center", "width"}
    with pytest.raises(ParameterError, match="unknown expression"):
        expression_keys("gauss")
    with pytest.raises(ParameterError, match="unknown keys"):
        evaluate_expression({"kind": "tent", "radius": 1.0}, [np.zeros(3)])
    vals, support = evaluate_expression({"kind": "tent", "amplitude": 3.0}, [np.array([0.0, 0.5, 2.0])])
    assert np.allclose(vals, [3.0, 1.5, 0.0])
    assert support == [(-1.0, 1.0)]


def test_sample_rejects_support_outside_domain():
    g = GridSpec.from_domain([(0.0, 1.0), (0.0, 1.0)], 8)
    with pytest.raises(SupportError, match="axis 1"):
        sample({"kind": "tent", "center": [0.5, 0.9], "width": 0.3}, g)


def test_sample_sine_vanishes_on_margin():
    g = GridSpec.from_domain([(0.0, 1.0)], 10)
    u = sample({"kind": "sine", "lo": 0.0, "hi": 1.0}, g)
    assert u.values[0] == 0.0 and u.values[-1] == 0.0
    assert u.values[5] == pytest.approx(1.0)


@pytest.mark.parametrize("fmt", ["csv", "bin"])
def test_roundtrip_with_meta(tmp_path, fmt):
    g = GridSpec.from_domain([(0.0, 1.0), (0.0, 2.0)], (6, 4))
    u = sample({"kind": "bump", "center": [0.5, 1.0], "width": [0.8, 1.6]}, g)
    path = save_grid_function(u, tmp_path / f"u.{fmt}", fmt, precision=17, meta={"config_sha256": "abc"})
    assert read_header(path)["config_sha256"] == "abc"
    w = load_grid_function(path)
    assert w.spec == g
    assert np.array_equal(w.values, u.values)


def test_csv_layout(tmp_path):
    g = GridSpec.from_domain([(0.0, 1.0)], 4)
    path = save_grid_function(GridFunction.zeros(g), tmp_path / "z.csv", precision=3)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# ")
    assert json.loads(lines[0][2:])["cells"] == [5]
    assert lines[1] == "i0,value"
    assert lines[2] == "0,0.000e+00"


def test_unknown_format(tmp_path):
    g = GridSpec.from_domain([(0.0, 1.0)], 4)
    with pytest.raises(ParameterError):
        save_grid_function(GridFunction.zeros(g), tmp_path / "z.h5", "hdf5")


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=3, max_size=3))
def test_bin_roundtrip_is_bit_exact(tmp_path_factory, vals):
    g = GridSpec.from_domain([(0.0, 1.0)], 4)
    v = np.zeros(g.shape)
    v[1:4] = vals
    u = GridFunction(g, v)
    path = save_grid_function(u, tmp_path_factory.mktemp("rt") / "u.bin", "bin")
    assert np.array_equal(load_grid_function(path).values, v)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 1.0), st.floats(0.05, 1.0), st.floats(1.05, 6.0), st.floats(1.05, 6.0))
def test_summary_harmonic_mean_bounds(s1, s2, p1, p2):
    S = aniso_summary(AnisoParams((s1, s2), (p1, p2)), strict=False)
    assert min(s1, s2) - 1e-12 <= S.s_bar <= max(s1, s2) + 1e-12
    if S.p_star is not None:
        # p* exceeds the harmonic mean of the p_i weighted by s
        assert S.p_star > S.sp_bar / S.s_bar
