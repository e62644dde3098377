import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glidergen import flightsim as F
from glidergen import mesh as M
from glidergen import sdf as S
from oracles import ballistic_height, damped_oscillator


def _zero_aero(**kw):
    base = dict(name="zero", cl_alpha=(-1.0, 1.0), cl_values=(0.0, 0.0), cd0=0.0, k=0.0, alpha_min=0.0,
                stability=1.0, maneuverability=1.0, area_ratio=1.0)
    base.update(kw)
    return F.AeroProfile(**base)


GEOM = F.GliderGeometry(wing_area=0.5, forward_area=0.1, top_area=0.5, mass=2.0)


# --- coefficients ------------------------------------------------------------

def test_lift_coefficient_interpolates_and_clamps():
    p = F.AeroProfile.from_degrees("t", [[0, 0.2], [10, 1.2]], 0.02, 1.5, 0.0, 1.0, 1.0, 0.5)
    assert F.lift_coefficient(math.radians(5), p) == pytest.approx(0.7)
    assert F.lift_coefficient(math.radians(10), p) == pytest.approx(1.2)
    assert F.lift_coefficient(0.0, p) == pytest.approx(0.2)
    assert F.lift_coefficient(math.radians(40), p) == pytest.approx(1.2)
    assert F.lift_coefficient(math.radians(-40), p) == pytest.approx(0.2)


def test_drag_coefficient_parabola():
    p = F.AeroProfile.from_degrees("t", [[0, 0.2], [10, 1.2]], 0.02, 1.5, -2.0, 1.0, 1.0, 0.5)
    assert F.drag_coefficient(p.alpha_min, p) == 0.02
    assert F.drag_coefficient(p.alpha_min + 0.1, p) == pytest.approx(0.035)
    flat = _zero_aero(cd0=0.3)
    assert F.drag_coefficient(1.3, flat) == F.drag_coefficient(-0.7, flat) == 0.3


def test_profile_validation():
    with pytest.raises(ValueError):
        _zero_aero(cl_alpha=(1.0, 0.0))
    with pytest.raises(ValueError):
        _zero_aero(stability=0.0)
    with pytest.raises(ValueError):
        _zero_aero(area_ratio=-1.0)


# --- forces ------------------------------------------------------------------

def test_lift_example_value():
    p = _zero_aero(cl_values=(1.0, 1.0))
    s = F.GliderState(0, 0, 45.7, 0.0, 0.0, 0.0)
    lift, drag, grav = F.forces(s, GEOM, p, 1.29)
    assert lift[1] == pytest.approx(0.5 * 1.29 * 45.7 ** 2 * 0.5)
    assert lift[1] == pytest.approx(673.5, abs=0.05)
    assert lift[0] == 0.0 and np.all(drag == 0.0)
    assert grav.tolist() == [0.0, -2.0 * 9.8]


@settings(max_examples=50, deadline=None)
@given(st.floats(1.0, 80.0), st.floats(-1.0, 1.0), st.floats(-0.5, 0.5))
def test_forces_quadratic_in_speed(v, heading, pitch):
    p = F.AeroProfile.from_degrees("t", [[-15, -1.0], [0, 0.2], [15, 1.6]], 0.02, 1.5, -2.0, 1.0, 1.0, 0.5)
    a = F.GliderState(0, 0, v * math.cos(heading), v * math.sin(heading), pitch, 0.0)
    b = F.GliderState(0, 0, 2 * a.vx, 2 * a.vy, pitch, 0.0)
    la, da, _ = F.forces(a, GEOM, p, 1.29)
    lb, db, _ = F.forces(b, GEOM, p, 1.29)
    assert np.allclose(lb, 4 * la, rtol=1e-12, atol=1e-12)
    assert np.allclose(db, 4 * da, rtol=1e-12, atol=1e-12)
    lc, dc, _ = F.forces(a, GEOM, p, 2 * 1.29)
    assert np.allclose(lc, 2 * la, rtol=1e-12, atol=1e-12)
    # lift is perpendicular to velocity, drag opposes it
    u = np.array([a.vx, a.vy])
    assert abs(la @ u) <= 1e-9 * np.linalg.norm(la) * v
    assert da @ u <= 0


def test_zero_velocity_rejected():
    with pytest.raises(ValueError):
        F.forces(F.GliderState(0, 0, 0, 0, 0, 0), GEOM, _zero_aero(), 1.29)


# --- stepping ----------------------------------------------------------------

def test_free_fall_one_second():
    s = F.GliderState(0, 100, 10.0, 0.0, 0.0, 0.0)
    for _ in range(100):
        s = F.step(s, GEOM, _zero_aero(), 1.29, 0.01)
    assert s.vy == pytest.approx(-9.8, abs=1e-9)
    assert s.y == pytest.approx(100 - 4.9, abs=1e-9)
    assert s.t == pytest.approx(1.0)


def test_trim_is_rotational_equilibrium():
    p = _zero_aero(alpha_trim=0.1, stability=30.0, maneuverability=5.0)
    s = F.GliderState(0, 0, 10.0, 0.0, 0.1, 0.0)
    out = F.step(s, GEOM, p, 1.29, 1e-3, freeze_translation=True)
    assert out.pitch == pytest.approx(0.1, abs=1e-15) and out.pitch_rate == 0.0


def test_rotation_matches_damped_oscillator():
    k, c, x0, dt = 30.0, 2.0, 0.2, 1e-4
    p = _zero_aero(stability=k, maneuverability=c, alpha_trim=0.05)
    s = F.GliderState(0, 0, 10.0, 0.0, 0.05 + x0, 0.0)
    worst = 0.0
    for i in range(1, 20001):
        s = F.step(s, GEOM, p, 1.29, dt, freeze_translation=True)
        if i % 500 == 0:
            worst = max(worst, abs((s.pitch - 0.05) - damped_oscillator(x0, k, c, i * dt)))
    assert worst < 1e-6, worst


def test_step_rejects_bad_dt():
    with pytest.raises(ValueError):
        F.step(F.GliderState(0, 0, 1, 0, 0, 0), GEOM, _zero_aero(), 1.29, 0.0)


# --- launches ----------------------------------------------------------------

def test_ballistic_45_degree_example():
    task = F.DesignTask(launch_pitch=math.radians(45))
    res = F.simulate_launch(task, GEOM, _zero_aero())
    want = ballistic_height(45.7, math.radians(45), 100.0)
    assert want == pytest.approx(53.07, abs=0.01)
    assert res.height == pytest.approx(want, rel=1e-9)
    assert res.status_name == "reached"


def test_ballistic_10_degree_grounds():
    res = F.simulate_launch(F.DesignTask(), GEOM, _zero_aero())
    assert res.height == 0.0 and res.status_name == "grounded"
    rng = 45.7 ** 2 * math.sin(math.radians(20)) / 9.8
    assert rng == pytest.approx(72.9, abs=0.05)
    # touchdown time of the parabola
    assert res.time == pytest.approx(2 * 45.7 * math.sin(math.radians(10)) / 9.8, abs=2e-3)


def test_timeout_returns_zero():
    # still airborne and short of the gap when the clock runs out
    task = F.DesignTask(launch_pitch=math.radians(45), t_max=0.5)
    res = F.simulate_launch(task, GEOM, _zero_aero())
    assert res.timeout and res.height == 0.0


def test_fourth_order_step_convergence():
    p = F.AeroProfile("smooth", (-1.0, 1.0), (-5.0, 6.0), 0.03, 1.2, -0.03, 20.0, 6.0, 0.3, 0.05)
    task = F.DesignTask(launch_pitch=math.radians(25))
    geom = F.GliderGeometry(wing_area=0.5, forward_area=0.1, top_area=0.5, mass=20.0)
    hs = [F.simulate_launch(F.DesignTask(launch_pitch=task.launch_pitch, dt=dt), geom, p).height
          for dt in (0.04, 0.02, 0.01, 0.005)]
    assert hs[-1] > 0
    diffs = np.abs(np.diff(hs))
    assert np.all(diffs[:-1] / diffs[1:] >= 8.0), diffs


def test_trace_and_csv(tmp_path):
    res = F.simulate_launch(F.DesignTask(launch_pitch=math.radians(45)), GEOM, _zero_aero(), trace=True)
    assert res.trace.shape[1] == 7
    assert res.trace[-1, 1] == pytest.approx(100.0, abs=1e-9)
    F.write_trace_csv(res.trace, tmp_path / "t.csv")
    head = (tmp_path / "t.csv").read_text().splitlines()[0]
    assert head == "t,x,y,vx,vy,pitch,pitch_rate,alpha"


def test_energy_never_increases_with_drag_only():
    rng = np.random.default_rng(0)
    for _ in range(200):
        p = _zero_aero(cd0=rng.uniform(0.0, 0.5), k=rng.uniform(0, 3), alpha_min=rng.uniform(-0.2, 0.2),
                       stability=rng.uniform(1, 50), maneuverability=rng.uniform(0, 10))
        g = F.GliderGeometry(rng.uniform(0.05, 1), 0.1, 0.5, rng.uniform(1, 300))
        vx, vy = rng.uniform(-40, 40, 2)
        pitch = math.atan2(vy, vx) + rng.uniform(-0.5, 0.5)
        s = F.GliderState(0, rng.uniform(0, 50), vx, vy, pitch, rng.uniform(-3, 3))
        e0 = 0.5 * g.mass * (s.vx ** 2 + s.vy ** 2) + g.mass * 9.8 * s.y
        s = F.step(s, g, p, 1.29, 1e-3)
        e1 = 0.5 * g.mass * (s.vx ** 2 + s.vy ** 2) + g.mass * 9.8 * s.y
        assert e1 <= e0 + 1e-12 * abs(e0)


# --- reference table ---------------------------------------------------------

def test_match_examples():
    def prof(r):
        return _zero_aero(name=str(r), area_ratio=r)
    table = [prof(0.1), prof(0.5), prof(1.0)]
    geom = lambda r: F.GliderGeometry(1.0, r, 1.0, 1.0)
    assert F.match_reference_aircraft(geom(0.4), table).name == "0.5"
    assert F.match_reference_aircraft(geom(0.1), table).name == "0.1"
    assert F.match_reference_aircraft(geom(7.0), [prof(0.2)]).name == "0.2"
    # exact tie in log distance goes to the earlier entry
    assert F.match_reference_aircraft(geom(math.sqrt(0.05)), [prof(0.1), prof(0.5)]).name == "0.1"
    with pytest.raises(ValueError):
        F.match_reference_aircraft(geom(0.4), [])


def test_table_json_round_trip(tmp_path):
    F.save_table(F.default_table(), tmp_path / "t.json")
    back = F.load_table(tmp_path / "t.json")
    assert len(back) == 8
    for a, b in zip(F.default_table(), back):
        assert a.name == b.name and a.area_ratio == b.area_ratio
        assert np.allclose(a.cl_alpha, b.cl_alpha, rtol=1e-14) and np.allclose(a.cl_values, b.cl_values)
        assert a.alpha_trim == pytest.approx(b.alpha_trim, rel=1e-14)
    data = json.loads((tmp_path / "t.json").read_text())
    assert set(data[0]) >= {"name", "cl_breakpoints", "cd0", "k_per_rad2", "alpha_min_deg", "stability",
                            "maneuverability", "area_ratio"}
    (tmp_path / "bad.json").write_text("{}")
    with pytest.raises(ValueError):
        F.load_table(tmp_path / "bad.json")


def test_default_table_spans_ratios():
    ratios = [p.area_ratio for p in F.default_table()]
    assert ratios[0] == 0.02 and ratios[-1] == 1.0 and ratios == sorted(ratios)


# --- design evaluation -------------------------------------------------------

def test_empty_grid_is_infeasible():
    g = S.SdfGrid(-np.ones((5, 5, 5)), (0, 0, 0), 0.1)
    ev = F.evaluate_design(g, F.DesignTask())
    assert ev.height == 0.0 and not ev.feasible


def test_evaluate_design_is_pure():
    box = S.default_bounds((17, 17, 17))
    g = S.sample_implicit(lambda p: 0.1 - np.abs(p[:, 1] - 0.013) * 4 - np.maximum(np.abs(p[:, 0]), np.abs(p[:, 2])) * 0.31,
                          (17, 17, 17), box)
    a = F.evaluate_design(g, F.DesignTask())
    b = F.evaluate_design(g, F.DesignTask())
    assert a.height == b.height and a.profile == b.profile and a.feasible


def test_measure_geometry_cube():
    geo = F.measure_geometry(M.box_mesh(size=(1.0, 0.5, 1.0)), F.DesignTask())
    assert geo.mass == pytest.approx(500.0)
    assert geo.top_area == pytest.approx(1.0, abs=0.01)
    assert geo.area_ratio == pytest.approx(0.5, abs=0.01)
