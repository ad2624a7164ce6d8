import itertools
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import fixture_path, load_json_fixture
from laminasim.errors import RangeWarning, RankError
from laminasim.hinge_models import (
    AIR_DAMPING,
    COMPREHENSIVE_DAMPING,
    COMPREHENSIVE_STIFFNESS,
    FITTED_RANGES,
    LENGTH_DAMPING,
    LENGTH_STIFFNESS,
    WIDTH_DAMPING,
    WIDTH_STIFFNESS,
    HingeDesign,
    HingeProperties,
    PropertySource,
    air_damping_properties,
    beam_limits,
    damping_from_area,
    fit_quadratic_surface,
    load_experiment_table,
    properties_comprehensive,
    properties_from_length,
    properties_from_width,
)

ALL_MODELS = [AIR_DAMPING, WIDTH_DAMPING, WIDTH_STIFFNESS, LENGTH_DAMPING, LENGTH_STIFFNESS,
              COMPREHENSIVE_DAMPING, COMPREHENSIVE_STIFFNESS]


def quiet(fn, *args):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RangeWarning)
        return fn(*args)


def generator_vector(model, variables):
    return np.array([model.constant] + [c for v in variables for c in model.terms.get(v, (0.0, 0.0))])


def grid_samples(model, variables, span=(0.0, 0.01), n=5):
    pts = list(itertools.product(*[np.linspace(*span, n)] * len(variables)))
    return [(p, model(**{v: x for v, x in zip(variables, p) if v in model.terms})) for p in pts]


def term_scale(model, point):
    """Sum of absolute term values: the round-off scale when terms cancel."""
    return abs(model.constant) + sum(abs(c1 * point[v]) + abs(c2 * point[v] ** 2) for v, (c1, c2) in model.terms.items())


def test_air_model_constant_and_examples():
    assert quiet(damping_from_area, 0.0) == 1.8e-5
    vertex = 0.0042 / (2 * 2.34)
    assert quiet(damping_from_area, vertex) == pytest.approx(1.8e-5 - 0.0042**2 / (4 * 2.34), rel=1e-13)
    assert damping_from_area(1e-3) == pytest.approx(1.614e-5, rel=1e-12)
    props = air_damping_properties(2e-3)
    assert props.source is PropertySource.AIR_MODEL and props.stiffness == 0.0


def test_width_model():
    props = quiet(properties_from_width, 0.0)
    assert (props.stiffness, props.damping) == (0.0003, 1.9812e-5)
    clamped = quiet(properties_from_width, 0.01)
    assert 3.0857e-4 - 1.361e-3 + 3e-4 < 0
    assert clamped.stiffness == 0.0 and "k" in clamped.clamped
    assert clamped.as_dict()["clamped"] is True
    vertex = 3.3197e-4 / (2 * 0.0166)
    b = [quiet(properties_from_width, w).damping for w in np.linspace(vertex, 0.1, 50)]
    assert np.all(np.diff(b) > 0)


def test_length_model():
    props = quiet(properties_from_length, 0.0)
    assert (props.stiffness, props.damping) == (0.251, 8.3506e-5)
    exact = 746.6667 * 0.005**2 - 7.4590 * 0.005 + 0.251
    k = quiet(properties_from_length, 0.005).stiffness
    assert k == pytest.approx(exact, rel=1e-14)
    assert k == pytest.approx(0.23234, rel=2e-4)  # five-figure rounding of the same value
    vertex = 7.4590 / (2 * 746.6667)
    ks = [quiet(properties_from_length, l).stiffness for l in np.linspace(1e-5, vertex, 50)]
    assert np.all(np.diff(ks) < 0)


def test_comprehensive_constants_are_exact():
    props = quiet(properties_comprehensive, HingeDesign(1e-300, 1e-300, 1e-300))
    assert props.stiffness == 0.0073 and props.damping == 5.0855e-5
    assert COMPREHENSIVE_STIFFNESS(l=0.0, w=0.0) == 0.0073
    assert COMPREHENSIVE_DAMPING(l=0.0, w=0.0, a=0.0) == 5.0855e-5
    assert props.source is PropertySource.COMPREHENSIVE_MODEL


def test_comprehensive_stiffness_ignores_area():
    ks = {quiet(properties_comprehensive, HingeDesign(5e-5, 0.05, a)).stiffness for a in (1e-4, 2e-3, 0.3)}
    assert len(ks) == 1


def test_double_evaluation():
    point = {"l": 0.002, "w": 0.01, "a": 0.001}
    for model in ALL_MODELS:
        args = {v: point[v] for v in model.variables}
        assert abs(model(**args) - model.power_form(**args)) <= 1e-15 * term_scale(model, point)


@settings(max_examples=200, deadline=None)
@given(l=st.floats(-1, 1), w=st.floats(-1, 1), a=st.floats(-1, 1))
def test_horner_matches_power_form(l, w, a):
    point = {"l": l, "w": w, "a": a}
    for model in ALL_MODELS:
        args = {v: point[v] for v in model.variables}
        assert abs(model(**args) - model.power_form(**args)) <= 1e-15 * term_scale(model, point)


def test_out_of_range_warns():
    with pytest.warns(RangeWarning):
        props = properties_comprehensive(HingeDesign(0.01, 0.01, 0.001))
    assert any("outside fitted range" in w for w in props.warnings)


inside = {
    name: st.fixed_dictionaries({v: st.floats(lo, hi) for v, (lo, hi) in box.items()})
    for name, box in FITTED_RANGES.items()
}


@settings(max_examples=100, deadline=None)
@given(air=inside["air_model"], width=inside["width_model"], length=inside["length_model"],
       comp=inside["comprehensive_model"])
def test_no_clamping_inside_fitted_ranges(air, width, length, comp):
    with warnings.catch_warnings():
        warnings.simplefilter("error", RangeWarning)
        results = [
            air_damping_properties(air["a"]),
            properties_from_width(width["w"]),
            properties_from_length(length["l"]),
            properties_comprehensive(HingeDesign(comp["l"], comp["w"], comp["a"])),
        ]
    for props in results:
        assert props.clamped == () and props.warnings == ()


def test_design_and_properties_validation():
    with pytest.raises(ValueError):
        HingeDesign(0.0, 0.01, 0.001)
    with pytest.raises(ValueError):
        HingeProperties(-1.0, 0.0, "user")
    assert HingeProperties(1.0, 0.0, "identified").source is PropertySource.IDENTIFIED


def test_beam_limit_fixture():
    fx = load_json_fixture("flexure_limit.json")
    limits = beam_limits(fx["width"], fx["thickness"], fx["span"], fx["lever_x"], fx["lever_l"],
                         fx["sigma_max"], fx["E"], beam_exponent=fx["beam_exponent"])
    assert math.degrees(limits.phi_max) == pytest.approx(fx["expected_phi_max_deg"], abs=5e-3)
    assert limits.phi_max == pytest.approx(0.0342, abs=5e-5)


def test_beam_limits_match_closed_form():
    w, t, L, x, l, s, E = 0.01, 1.27e-4, 5e-3, 5e-3, 2e-4, 4.284e7, 4.38327e9
    lim = beam_limits(w, t, L, x, l, s, E)
    I = w * t**3 / 12
    f = s * w * t**3 / (6 * L)
    assert lim.f_max == pytest.approx(f, rel=1e-15)
    assert lim.delta_max == pytest.approx(f * x * x * l / (2 * E * I), rel=1e-15)
    assert lim.phi_max == pytest.approx(f * x * l / (E * I), rel=1e-15)


@settings(max_examples=50, deadline=None)
@given(vals=st.lists(st.floats(1e-4, 10.0), min_size=7, max_size=7), exponent=st.sampled_from([2, 3]))
def test_beam_limit_scaling(vals, exponent):
    w, t, L, x, l, s, E = vals
    base = beam_limits(w, t, L, x, l, s, E, beam_exponent=exponent)
    assert base.f_max > 0 and base.delta_max > 0 and base.phi_max > 0
    doubled = beam_limits(w, t, L, x, l, 2 * s, E, beam_exponent=exponent)
    for a, b in zip((doubled.f_max, doubled.delta_max, doubled.phi_max), (base.f_max, base.delta_max, base.phi_max)):
        assert a == pytest.approx(2 * b, rel=1e-12)
    stiffer = beam_limits(w, t, L, x, l, s, 2 * E, beam_exponent=exponent)
    assert stiffer.f_max == base.f_max
    assert stiffer.delta_max == pytest.approx(base.delta_max / 2, rel=1e-12)
    assert stiffer.phi_max == pytest.approx(base.phi_max / 2, rel=1e-12)


@pytest.mark.parametrize("bad", range(7))
def test_beam_limits_reject_non_positive(bad):
    args = [0.01, 1.27e-4, 5e-3, 5e-3, 2e-4, 4.284e7, 4.38327e9]
    args[bad] = 0.0
    with pytest.raises(ValueError):
        beam_limits(*args)


@pytest.mark.parametrize("model", [COMPREHENSIVE_STIFFNESS, COMPREHENSIVE_DAMPING], ids=["k", "b"])
def test_fit_recovers_generator(model):
    fit = fit_quadratic_surface(grid_samples(model, "lwa"), ["l", "w", "a"])
    np.testing.assert_allclose(fit.coefficients, generator_vector(model, "lwa"), rtol=1e-9, atol=1e-9)
    mean = np.mean([abs(v) for _, v in grid_samples(model, "lwa")])
    assert fit.mae <= 1e-12 * mean
    assert fit.mae_percent <= 1e-10
    again = fit.as_model()
    assert again.constant == pytest.approx(model.constant, rel=1e-9)


def test_fit_noise_bound():
    rng = np.random.default_rng(12)
    samples = [(p, v + rng.uniform(-1e-4, 1e-4)) for p, v in grid_samples(COMPREHENSIVE_STIFFNESS, "lwa")]
    assert fit_quadratic_surface(samples, ["l", "w", "a"]).mae <= 1e-4


def test_fit_is_idempotent():
    rng = np.random.default_rng(13)
    pts = rng.uniform(0, 0.01, (40, 2))
    samples = [(p, float(np.sin(100 * p[0]) + p[1] ** 3 * 1e4)) for p in pts]
    first = fit_quadratic_surface(samples)
    refit = fit_quadratic_surface(list(zip(map(tuple, pts), first.predict(pts))))
    np.testing.assert_allclose(refit.coefficients, first.coefficients, rtol=1e-9, atol=1e-9)


def test_fit_rank_errors():
    with pytest.raises(RankError):
        fit_quadratic_surface([((0.1, 0.2), 1.0), ((0.2, 0.1), 2.0), ((0.3, 0.3), 3.0), ((0.4, 0.1), 1.0)])
    with pytest.raises(RankError):
        fit_quadratic_surface([(0.1, 1.0), (0.2, 2.0)])
    with pytest.raises(RankError):
        fit_quadratic_surface([((0.1, 0.0), v) for v in range(8)])  # second variable never varies
    with pytest.raises(RankError):
        fit_quadratic_surface([])


def test_experiment_table(tmp_path):
    path = tmp_path / "table.csv"
    rows = ["l,w,a,k_meas,b_meas"]
    for p, k in grid_samples(COMPREHENSIVE_STIFFNESS, "lwa", n=3):
        b = COMPREHENSIVE_DAMPING(l=p[0], w=p[1], a=p[2])
        rows.append(",".join(repr(float(x)) for x in (*p, k, b)))
    path.write_text("\n".join(rows) + "\n")
    table = load_experiment_table(path)
    assert table.points.shape == (27, 3)
    fit = fit_quadratic_surface(table.samples("b"), ["l", "w", "a"])
    np.testing.assert_allclose(fit.coefficients, generator_vector(COMPREHENSIVE_DAMPING, "lwa"), atol=1e-9)
    bad = tmp_path / "bad.csv"
    bad.write_text("l,w,k\n1,2,3\n")
    with pytest.raises(ValueError):
        load_experiment_table(bad)


def test_fixture_file_present():
    assert fixture_path("flexure_limit.json").exists()
