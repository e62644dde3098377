"""Planar glider flight model.

State is (x, y, vx, vy, pitch, pitch_rate); lift acts perpendicular to the
velocity, drag against it, and the pitch attitude follows a damped
second-order response toward a trim angle of attack.  Thrust is zero.
Integration is classical fixed-step RK4 in numba kernels.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from .mesh import TriangleMesh, WatertightWarning, enclosed_volume, projection_areas
from .sdf import OpenSurfaceWarning, SdfGrid, extract_surface

log = logging.getLogger(__name__)

GRAVITY = 9.8

STATUS_REACHED = 0
STATUS_GROUNDED = 1
STATUS_TIMEOUT = 2
STATUS_DIVERGED = 3
_STATUS_NAMES = {STATUS_REACHED: "reached", STATUS_GROUNDED: "grounded", STATUS_TIMEOUT: "timeout",
                 STATUS_DIVERGED: "diverged"}

# parameter vector layout shared with the kernels
_P_MASS, _P_AREA, _P_RHO, _P_CD0, _P_K, _P_AMIN, _P_KS, _P_KM, _P_ATRIM, _P_FREEZE = range(10)


class SimulationError(FloatingPointError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class AeroProfile:
    """Lift/drag curves and pitch constants of one reference aircraft.

    ``cl_alpha`` are breakpoint angles in radians; C_L is clamped to the end
    values outside them.  C_D = cd0 + k (alpha - alpha_min)^2.
    """

    name: str
    cl_alpha: tuple
    cl_values: tuple
    cd0: float
    k: float
    alpha_min: float
    stability: float
    maneuverability: float
    area_ratio: float
    alpha_trim: float = 0.0

    def __post_init__(self):
        a = np.asarray(self.cl_alpha, dtype=np.float64)
        c = np.asarray(self.cl_values, dtype=np.float64)
        if a.ndim != 1 or a.shape != c.shape or len(a) < 2:
            raise ValueError(f"{self.name}: need >= 2 matching C_L breakpoints")
        if np.any(np.diff(a) <= 0):
            raise ValueError(f"{self.name}: C_L breakpoint angles must strictly increase")
        if self.cd0 < 0 or self.k < 0:
            raise ValueError(f"{self.name}: drag coefficients must be nonnegative")
        if self.stability <= 0:
            raise ValueError(f"{self.name}: stability must be positive")
        if self.maneuverability < 0:
            raise ValueError(f"{self.name}: maneuverability must be nonnegative")
        if self.area_ratio <= 0:
            raise ValueError(f"{self.name}: area ratio must be positive")
        object.__setattr__(self, "cl_alpha", tuple(float(v) for v in a))
        object.__setattr__(self, "cl_values", tuple(float(v) for v in c))

    @classmethod
    def from_degrees(cls, name, cl_breakpoints, cd0, k_per_rad2, alpha_min_deg, stability, maneuverability,
                     area_ratio, alpha_trim_deg=0.0):
        bp = np.asarray(cl_breakpoints, dtype=np.float64)
        return cls(name, tuple(np.radians(bp[:, 0])), tuple(bp[:, 1]), cd0, k_per_rad2,
                   math.radians(alpha_min_deg), stability, maneuverability, area_ratio,
                   math.radians(alpha_trim_deg))

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "cl_breakpoints": [[math.degrees(a), c] for a, c in zip(self.cl_alpha, self.cl_values)],
            "cd0": self.cd0,
            "k_per_rad2": self.k,
            "alpha_min_deg": math.degrees(self.alpha_min),
            "stability": self.stability,
            "maneuverability": self.maneuverability,
            "area_ratio": self.area_ratio,
            "alpha_trim_deg": math.degrees(self.alpha_trim),
        }

    @classmethod
    def from_json(cls, d: dict) -> "AeroProfile":
        return cls.from_degrees(d["name"], d["cl_breakpoints"], d["cd0"], d["k_per_rad2"], d["alpha_min_deg"],
                                d["stability"], d["maneuverability"], d["area_ratio"],
                                d.get("alpha_trim_deg", 0.0))


@dataclass(frozen=True)
class DesignTask:
    launch_speed: float = 45.7
    launch_pitch: float = math.radians(10.0)
    rho_mat: float = 1000.0
    rho_air: float = 1.29
    gap_distance: float = 100.0
    target_height: float = 6.0
    box: float = 1.0
    dt: float = 1e-3
    t_max: float = 120.0

    def __post_init__(self):
        if not self.launch_speed > 0:
            raise ValueError("launch speed must be positive")
        if not self.rho_air > 0:
            raise ValueError("air density must be positive")
        if not self.gap_distance > 0:
            raise ValueError("gap distance must be positive")
        if not self.dt > 0:
            raise ValueError("time step must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "DesignTask":
        d = dict(d)
        if "launch_pitch_deg" in d:
            d["launch_pitch"] = math.radians(d.pop("launch_pitch_deg"))
        return cls(**d)

    def to_dict(self) -> dict:
        return {"launch_speed": self.launch_speed, "launch_pitch_deg": math.degrees(self.launch_pitch),
                "rho_mat": self.rho_mat, "rho_air": self.rho_air, "gap_distance": self.gap_distance,
                "target_height": self.target_height, "box": self.box, "dt": self.dt, "t_max": self.t_max}


@dataclass(frozen=True)
class GliderGeometry:
    wing_area: float
    forward_area: float
    top_area: float
    mass: float
    chord: float = 1.0

    def __post_init__(self):
        for name in ("wing_area", "forward_area", "top_area", "mass", "chord"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def area_ratio(self) -> float:
        return self.forward_area / self.top_area


@dataclass(frozen=True)
class GliderState:
    x: float
    y: float
    vx: float
    vy: float
    pitch: float
    pitch_rate: float
    t: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.vx, self.vy, self.pitch, self.pitch_rate])

    @classmethod
    def from_array(cls, a, t=0.0) -> "GliderState":
        return cls(*(float(v) for v in a[:6]), t=float(t))

    @property
    def speed(self) -> float:
        return math.hypot(self.vx, self.vy)

    @property
    def alpha(self) -> float:
        return self.pitch - math.atan2(self.vy, self.vx)


@dataclass
class SimResult:
    height: float
    status: int
    time: float
    steps: int
    trace: np.ndarray | None = None
    profile: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def status_name(self) -> str:
        return _STATUS_NAMES[self.status]

    @property
    def timeout(self) -> bool:
        return self.status == STATUS_TIMEOUT


# ---------------------------------------------------------------------------
# kernels


@njit(cache=True)
def _cl(alpha, bp_a, bp_c):
    n = bp_a.shape[0]
    if alpha <= bp_a[0]:
        return bp_c[0]
    if alpha >= bp_a[n - 1]:
        return bp_c[n - 1]
    i = np.searchsorted(bp_a, alpha, side="right") - 1
    t = (alpha - bp_a[i]) / (bp_a[i + 1] - bp_a[i])
    return bp_c[i] + t * (bp_c[i + 1] - bp_c[i])


@njit(cache=True)
def _deriv(s, p, bp_a, bp_c, out):
    vx = s[2]
    vy = s[3]
    v2 = vx * vx + vy * vy
    v = math.sqrt(v2)
    alpha = s[4] - math.atan2(vy, vx)
    cl = _cl(alpha, bp_a, bp_c)
    da = alpha - p[_P_AMIN]
    cd = p[_P_CD0] + p[_P_K] * da * da
    q = 0.5 * p[_P_RHO] * v2 * p[_P_AREA]
    lift = cl * q
    drag = cd * q
    m = p[_P_MASS]
    if v > 0.0:
        ux = vx / v
        uy = vy / v
    else:
        ux = 0.0
        uy = 0.0
    if p[_P_FREEZE] != 0.0:
        out[0] = 0.0
        out[1] = 0.0
        out[2] = 0.0
        out[3] = 0.0
    else:
        out[0] = vx
        out[1] = vy
        out[2] = (-lift * uy - drag * ux) / m
        out[3] = (lift * ux - drag * uy) / m - GRAVITY
    out[4] = s[5]
    out[5] = -p[_P_KS] * (alpha - p[_P_ATRIM]) - p[_P_KM] * s[5]


@njit(cache=True)
def _rk4(s, dt, p, bp_a, bp_c, out):
    k1 = np.empty(6)
    k2 = np.empty(6)
    k3 = np.empty(6)
    k4 = np.empty(6)
    tmp = np.empty(6)
    _deriv(s, p, bp_a, bp_c, k1)
    for i in range(6):
        tmp[i] = s[i] + 0.5 * dt * k1[i]
    _deriv(tmp, p, bp_a, bp_c, k2)
    for i in range(6):
        tmp[i] = s[i] + 0.5 * dt * k2[i]
    _deriv(tmp, p, bp_a, bp_c, k3)
    for i in range(6):
        tmp[i] = s[i] + dt * k3[i]
    _deriv(tmp, p, bp_a, bp_c, k4)
    for i in range(6):
        out[i] = s[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])


@njit(cache=True)
def _finite(s):
    for i in range(6):
        if not math.isfinite(s[i]):
            return False
    return True


@njit(cache=True)
def _simulate(s0, p, bp_a, bp_c, dt, x_target, t_max, max_trace):
    """Returns (height, status, time, steps, trace rows written); the trace
    holds t plus the state at every step up to ``max_trace`` rows."""
    s = s0.copy()
    nxt = np.empty(6)
    part = np.empty(6)
    trace = np.empty((max_trace, 7))
    rows = 0
    if max_trace > 0:
        trace[0, 0] = 0.0
        trace[0, 1:] = s
        rows = 1
    t = 0.0
    steps = 0
    while True:
        _rk4(s, dt, p, bp_a, bp_c, nxt)
        if not _finite(nxt):
            return 0.0, 3, t, steps, trace, rows
        if nxt[0] >= x_target:
            # partial step landing exactly on x = x_target (secant on dt)
            lo = 0.0
            f_lo = s[0] - x_target
            hi = dt
            f_hi = nxt[0] - x_target
            h = dt * f_lo / (f_lo - f_hi) if f_lo != f_hi else dt
            for _ in range(50):
                _rk4(s, h, p, bp_a, bp_c, part)
                f = part[0] - x_target
                if f == 0.0:
                    break
                if f > 0.0:
                    hi = h
                    f_hi = f
                else:
                    lo = h
                    f_lo = f
                new_h = lo - f_lo * (hi - lo) / (f_hi - f_lo)
                if not (lo < new_h < hi):
                    new_h = 0.5 * (lo + hi)
                if abs(new_h - h) <= 1e-15 * dt:
                    h = new_h
                    _rk4(s, h, p, bp_a, bp_c, part)
                    break
                h = new_h
            t += h
            steps += 1
            if max_trace > 0 and rows < max_trace:
                trace[rows, 0] = t
                trace[rows, 1:] = part
                rows += 1
            if part[1] <= 0.0:
                return 0.0, 1, t, steps, trace, rows
            return part[1], 0, t, steps, trace, rows
        s[:] = nxt
        t += dt
        steps += 1
        if max_trace > 0 and rows < max_trace:
            trace[rows, 0] = t
            trace[rows, 1:] = s
            rows += 1
        if s[1] <= 0.0:
            return 0.0, 1, t, steps, trace, rows
        if t > t_max:
            return 0.0, 2, t, steps, trace, rows


# ---------------------------------------------------------------------------
# python-level API


def lift_coefficient(alpha: float, profile: AeroProfile) -> float:
    return float(_cl(float(alpha), np.asarray(profile.cl_alpha), np.asarray(profile.cl_values)))


def drag_coefficient(alpha: float, profile: AeroProfile) -> float:
    da = alpha - profile.alpha_min
    return profile.cd0 + profile.k * da * da


def _params(geometry: GliderGeometry, profile: AeroProfile, rho_air: float, freeze_translation=False):
    return np.array([geometry.mass, geometry.wing_area, rho_air, profile.cd0, profile.k, profile.alpha_min,
                     profile.stability, profile.maneuverability, profile.alpha_trim,
                     1.0 if freeze_translation else 0.0])


def forces(state: GliderState, geometry: GliderGeometry, profile: AeroProfile, rho_air: float):
    """(lift, drag, gravity) as 2-vectors in newtons."""
    v = state.speed
    if v == 0.0:
        raise ValueError("angle of attack undefined at zero velocity")
    alpha = state.alpha
    q = 0.5 * rho_air * v * v * geometry.wing_area
    u = np.array([state.vx, state.vy]) / v
    lift = lift_coefficient(alpha, profile) * q * np.array([-u[1], u[0]])
    drag = -drag_coefficient(alpha, profile) * q * u
    gravity = np.array([0.0, -geometry.mass * GRAVITY])
    return lift, drag, gravity


def step(state: GliderState, geometry: GliderGeometry, profile: AeroProfile, rho_air: float, dt: float,
         freeze_translation: bool = False) -> GliderState:
    if not dt > 0:
        raise ValueError("dt must be positive")
    out = np.empty(6)
    _rk4(state.as_array(), float(dt), _params(geometry, profile, rho_air, freeze_translation),
         np.asarray(profile.cl_alpha), np.asarray(profile.cl_values), out)
    if not np.all(np.isfinite(out)):
        raise SimulationError("non-finite state after step", trace=np.concatenate([[state.t], state.as_array()]))
    return GliderState.from_array(out, state.t + dt)


def launch_state(task: DesignTask) -> GliderState:
    th = task.launch_pitch
    return GliderState(0.0, 0.0, task.launch_speed * math.cos(th), task.launch_speed * math.sin(th), th, 0.0)


def simulate_launch(task: DesignTask, geometry: GliderGeometry, profile: AeroProfile, trace: bool = False,
                    max_trace: int = 1_000_000) -> SimResult:
    """Integrate from the launch until x reaches the gap (height = y there),
    the glider touches the ground (height 0) or the time cap (height 0)."""
    s0 = launch_state(task).as_array()
    h, status, t, steps, tr, rows = _simulate(s0, _params(geometry, profile, task.rho_air),
                                              np.asarray(profile.cl_alpha), np.asarray(profile.cl_values),
                                              float(task.dt), float(task.gap_distance), float(task.t_max),
                                              int(max_trace) if trace else 0)
    tr = tr[:rows].copy() if trace else None
    if status == STATUS_DIVERGED:
        raise SimulationError(f"simulation diverged at t={t:.4f}s", trace=tr)
    if status == STATUS_TIMEOUT:
        log.warning("simulation hit the %.0f s cap", task.t_max)
    return SimResult(float(h), int(status), float(t), int(steps), tr, profile.name)


def match_reference_aircraft(geometry: GliderGeometry, table) -> AeroProfile:
    table = list(table)
    if not table:
        raise ValueError("empty reference table")
    r = math.log(geometry.area_ratio)
    best = table[0]
    best_d = abs(r - math.log(best.area_ratio))
    for prof in table[1:]:
        d = abs(r - math.log(prof.area_ratio))
        if d < best_d:
            best, best_d = prof, d
    return best


def _profile(name, ratio, cl0, slope_eff, cd0, k, stab, man, trim_deg):
    a = 2.0 * math.pi * slope_eff
    stall = math.radians(15.0)
    return AeroProfile(name, (-stall, 0.0, stall), (cl0 - a * stall, cl0, cl0 + a * stall), cd0, k,
                       math.radians(-2.0), stab, man, ratio, math.radians(trim_deg))


def default_table() -> list[AeroProfile]:
    """Eight synthetic reference aircraft from flying wing to blunt body."""
    return [
        _profile("flying-wing", 0.02, 0.20, 0.95, 0.010, 0.9, 40.0, 9.0, 6.0),
        _profile("sailplane", 0.05, 0.25, 0.92, 0.012, 1.0, 36.0, 8.0, 6.0),
        _profile("trainer", 0.12, 0.22, 0.85, 0.020, 1.2, 32.0, 8.0, 5.0),
        _profile("light-aircraft", 0.25, 0.18, 0.80, 0.030, 1.4, 30.0, 7.0, 5.0),
        _profile("transport", 0.38, 0.15, 0.78, 0.045, 1.6, 28.0, 7.0, 10.0),
        _profile("fighter", 0.47, 0.10, 0.68, 0.070, 2.0, 26.0, 6.0, 7.0),
        _profile("missile-body", 0.60, 0.05, 0.55, 0.110, 2.5, 24.0, 6.0, 4.0),
        _profile("blunt-body", 1.00, 0.00, 0.25, 0.180, 3.0, 20.0, 5.0, 1.0),
    ]


def load_table(path) -> list[AeroProfile]:
    data = json.loads(Path(path).read_text())
    if not isinstance(data, list) or not data:
        raise ValueError(f"{path}: expected a non-empty JSON array of profiles")
    return [AeroProfile.from_json(d) for d in data]


def save_table(table, path) -> None:
    Path(path).write_text(json.dumps([p.to_json() for p in table], indent=2))


def measure_geometry(mesh: TriangleMesh, task: DesignTask, resolution: int = 256) -> GliderGeometry:
    """Wing area is the top-view silhouette; mass is rho_mat times volume."""
    forward, top = projection_areas(mesh, resolution=resolution)
    volume = enclosed_volume(mesh)
    box = mesh.bounds()
    chord = float(2.0 * box.extent[0])
    return GliderGeometry(wing_area=top, forward_area=forward, top_area=top, mass=task.rho_mat * volume,
                          chord=chord)


@dataclass
class Evaluation:
    height: float
    feasible: bool
    status: str
    profile: str = ""
    geometry: GliderGeometry | None = None
    result: SimResult | None = None


def evaluate_mesh(mesh: TriangleMesh, task: DesignTask, table=None, trace: bool = False) -> Evaluation:
    if mesh.is_empty():
        return Evaluation(0.0, False, "empty")
    try:
        geom = measure_geometry(mesh, task)
    except ValueError as exc:
        log.debug("unmeasurable design: %s", exc)
        return Evaluation(0.0, False, "degenerate")
    prof = match_reference_aircraft(geom, table if table is not None else DEFAULT_TABLE)
    res = simulate_launch(task, geom, prof, trace=trace)
    return Evaluation(res.height, True, res.status_name, prof.name, geom, res)


def evaluate_design(grid: SdfGrid, task: DesignTask, table=None, trace: bool = False) -> Evaluation:
    """Surface the lattice, measure it and fly it.  No surface gives height 0
    and ``feasible=False``.  A solid touching the lattice boundary surfaces
    open; it is still measured (best effort) without warning."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OpenSurfaceWarning)
        warnings.simplefilter("ignore", WatertightWarning)
        mesh = extract_surface(grid)
        return evaluate_mesh(mesh, task, table, trace)


def write_trace_csv(trace: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "y", "vx", "vy", "pitch", "pitch_rate", "alpha"])
        for row in trace:
            alpha = row[5] - math.atan2(row[4], row[3])
            w.writerow([repr(float(v)) for v in row] + [repr(alpha)])


DEFAULT_TABLE = default_table()

__all__ = [
    "AeroProfile", "DesignTask", "GliderGeometry", "GliderState", "SimResult", "SimulationError", "Evaluation",
    "lift_coefficient", "drag_coefficient", "forces", "step", "simulate_launch", "match_reference_aircraft",
    "default_table", "load_table", "save_table", "measure_geometry", "evaluate_mesh", "evaluate_design",
    "write_trace_csv", "launch_state",
]
