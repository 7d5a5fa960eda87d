"""Command-line front end: presets, scenario config, CSV artifacts, verify.

Subcommands mirror the library surface: ``free``, ``dissipative`` and
``tunnel`` emit trajectory tables, ``delta-p`` emits the two-route tail
deficit report, ``sphere3d`` emits a transported-sphere flow map, and
``verify`` runs the invariant suite.  Every data file gets a JSON run
manifest next to it, and identical configs reproduce output files byte
for byte.  Exit codes: 0 success, 1 verification failure, 2 configuration
error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .errors import QuantracerError
from .numerics import Tolerances
from .quantile import (
    probability_in_volume,
    sphere_seeds,
    trace_flowmap_3d,
    trace_trajectory_cdf,
    trace_trajectory_ode,
)
from .tunneling import (
    delta_p_report,
    packet_transmission_probability,
    retardation_scan,
)
from .wavepacket import (
    BarrierSpec,
    Gaussian3DParams,
    GaussianPacketParams,
    dissipative_gaussian_model,
    free_gaussian_model,
    gaussian3d_model,
    scattering_mode,
    spectral_free_model,
    spectral_setup,
    tunneling_packet_model,
)

UNIT_COMMENT = ("# units: hbar = m = 1; positions in hbar/sqrt(eV*m), "
                "times in hbar/eV, energies in eV")


class ConfigError(Exception):
    """Scenario configuration rejected before any numerics ran."""


@dataclass(frozen=True)
class ScenarioConfig:
    """Flat scenario description; precedence preset < config file < flags."""

    kind: str = "free"
    x_bar: float = -10.0
    v_bar: float = 2.0
    sigma_x0: float = 2.5
    mass: float = 1.0
    loss_rate: float = 0.1
    barrier_height: float = 10.0
    barrier_halfwidth: float = 0.3
    p_list: tuple = (0.1, 0.3, 0.5, 0.7, 0.9)
    t_max: float = 20.0
    t_step: float = 0.5
    delta_x: tuple = ()
    delta_t: tuple = ()
    n_lambda: int = 32
    k_nodes: int = 0
    snapshot_times: tuple = ()
    center: tuple = (0.0, 0.0, 0.0)
    velocity: tuple = (2.0, 0.0, 0.0)
    radius: float = 2.5
    quad_rel: float = 1e-9
    quad_abs: float = 1e-12
    root_abs: float = 1e-10
    ode_rel: float = 1e-8
    ode_abs: float = 1e-10
    quick: bool = False
    out: str = ""


PRESETS = {
    "fig1": {
        "x_bar": -10.0, "v_bar": 2.0, "sigma_x0": 2.5, "loss_rate": 0.1,
        "p_list": (0.1, 0.3, 0.5, 0.7, 0.9), "t_max": 20.0, "t_step": 0.5,
    },
    "fig2": {
        "x_bar": -10.0, "v_bar": 2.0, "sigma_x0": 2.5,
        "barrier_height": 10.0, "barrier_halfwidth": 0.3,
        "p_list": tuple(float(f"{0.1 + 0.05 * i:.2f}") for i in range(13)),
        "t_max": 10.0, "t_step": 0.5,
    },
    "fig3": {
        "sigma_x0": 2.5, "center": (0.0, 0.0, 0.0), "velocity": (2.0, 0.0, 0.0),
        "radius": 2.5, "t_max": 10.0, "t_step": 1.0,
    },
}

DEFAULT_OUT = {
    "free": "free_trajectories.csv",
    "dissipative": "dissipative_trajectories.csv",
    "tunnel": "tunnel_trajectories.csv",
    "delta-p": "delta_p_report.csv",
    "sphere3d": "sphere3d_flowmap.csv",
    "verify": "verify_report.csv",
}


def _parse_float_tuple(text: str) -> tuple:
    parts = [p for chunk in str(text).split(",") for p in chunk.split()]
    try:
        return tuple(float(p) for p in parts if p)
    except ValueError as exc:
        raise ConfigError(f"expected a list of numbers, got {text!r}") from exc


def _coerce(name: str, default, raw: str):
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"{name}: expected an integer, got {raw!r}") from exc
    if isinstance(default, float):
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"{name}: expected a number, got {raw!r}") from exc
    if isinstance(default, tuple):
        return _parse_float_tuple(raw)
    return raw


def load_config_file(path: str) -> dict:
    """Flat key = value text; '#' comments and blank lines are ignored."""
    known = {f.name: f.default for f in fields(ScenarioConfig)}
    values = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, _, raw = stripped.partition("=")
        key = key.strip().replace("-", "_")
        if key not in known:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = _coerce(key, known[key], raw.strip())
    return values


def validate_config(cfg: ScenarioConfig) -> None:
    if cfg.t_step <= 0.0:
        raise ConfigError("t_step must be positive")
    if cfg.t_max < cfg.t_step:
        raise ConfigError("t_max must be at least one t_step")
    if cfg.sigma_x0 <= 0.0 or cfg.mass <= 0.0:
        raise ConfigError("sigma_x0 and mass must be positive")
    if cfg.loss_rate < 0.0:
        raise ConfigError("lambda (loss rate) must be nonnegative")
    if cfg.barrier_height < 0.0 or cfg.barrier_halfwidth <= 0.0:
        raise ConfigError("barrier height must be >= 0 and half-width > 0")
    if cfg.p_list:
        if any(not (0.0 < p < 1.0) for p in cfg.p_list):
            raise ConfigError("P values must lie strictly between 0 and 1")
        if any(b <= a for a, b in zip(cfg.p_list, cfg.p_list[1:])):
            raise ConfigError("P list must be strictly increasing")
    if len(cfg.center) != 3 or len(cfg.velocity) != 3:
        raise ConfigError("center and velocity must have three components")
    if cfg.radius <= 0.0:
        raise ConfigError("radius must be positive")
    if cfg.n_lambda < 16:
        raise ConfigError("n_lambda must be at least 16")
    if cfg.k_nodes and cfg.k_nodes < 64:
        raise ConfigError("k_nodes must be 0 (auto) or at least 64")
    if any(t < 0.0 for t in cfg.snapshot_times):
        raise ConfigError("snapshot times must be nonnegative")


def _tolerances(cfg: ScenarioConfig) -> Tolerances:
    return Tolerances(quad_rel=cfg.quad_rel, quad_abs=cfg.quad_abs,
                      root_abs=cfg.root_abs, ode_rel=cfg.ode_rel,
                      ode_abs=cfg.ode_abs)


def _packet(cfg: ScenarioConfig) -> GaussianPacketParams:
    return GaussianPacketParams(x_bar=cfg.x_bar, v_bar=cfg.v_bar,
                                sigma_x0=cfg.sigma_x0, mass=cfg.mass)


def _time_grid(cfg: ScenarioConfig) -> np.ndarray:
    count = int(math.floor(cfg.t_max / cfg.t_step + 1e-9))
    return np.linspace(0.0, count * cfg.t_step, count + 1)


def _spectral_pair(cfg: ScenarioConfig, tol: Tolerances):
    packet = _packet(cfg)
    spectrum, grid = spectral_setup(packet, cfg.t_max,
                                    n_nodes=cfg.k_nodes or None)
    barrier = BarrierSpec(height=cfg.barrier_height,
                          half_width=cfg.barrier_halfwidth)
    free = spectral_free_model(spectrum, grid, mass=cfg.mass, tol=tol)
    tunnel = tunneling_packet_model(spectrum, barrier, grid,
                                    mass=cfg.mass, tol=tol)
    return spectrum, grid, free, tunnel


# ---------------------------------------------------------------------------
# CSV and manifest emission

def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        # Keep the files naive-split parseable.
        return value.replace(",", ";")
    return format(float(value), ".17g")


def write_csv(path: Path, header: list, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(UNIT_COMMENT + "\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_manifest(data_path: Path, command: str, cfg: ScenarioConfig,
                   checks: list, wall_clock: float) -> Path:
    config_echo = {}
    for f in fields(ScenarioConfig):
        value = getattr(cfg, f.name)
        config_echo[f.name] = list(value) if isinstance(value, tuple) else value
    manifest = {
        "command": command,
        "config": config_echo,
        "units": UNIT_COMMENT.lstrip("# "),
        "tolerances": {
            "quad_rel": cfg.quad_rel, "quad_abs": cfg.quad_abs,
            "root_abs": cfg.root_abs, "ode_rel": cfg.ode_rel,
            "ode_abs": cfg.ode_abs,
        },
        "wall_clock_s": round(wall_clock, 3),
        "checks": [{"name": n, "passed": bool(p), "detail": d}
                   for n, p, d in checks],
    }
    path = Path(str(data_path) + ".manifest.json")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _out_path(cfg: ScenarioConfig, command: str) -> Path:
    return Path(cfg.out) if cfg.out else Path(DEFAULT_OUT[command])


# ---------------------------------------------------------------------------
# trajectory table shared by free / dissipative

def _trace_table(model, p_list, times, tol):
    """Rows (P, t, x_cdf, v_cdf, x_ode, v_ode, discrepancy, status).

    A trajectory that ends before the last grid time gets one trailing
    sentinel row carrying the exact termination time and kind; positions
    have no finite value there.
    """
    rows = []
    worst_gap = 0.0
    for P in p_list:
        cdf = trace_trajectory_cdf(model, P, times, tol)
        ode = trace_trajectory_ode(model, P, float(times[0]), float(times[-1]),
                                   tol, t_eval=times)
        ode_at = {t: (x, v) for t, x, v in
                  zip(ode.times.tolist(), ode.positions.tolist(),
                      ode.velocities.tolist())}
        for t, x, v in zip(cdf.times.tolist(), cdf.positions.tolist(),
                           cdf.velocities.tolist()):
            status = "density_floor" if math.isnan(v) else "ok"
            if t in ode_at:
                xo, vo = ode_at[t]
                gap = abs(x - xo)
                worst_gap = max(worst_gap, gap)
                rows.append((P, t, x, v, xo, vo, gap, status))
            else:
                rows.append((P, t, x, v, "", "", "", status))
        if cdf.termination.kind != "completed":
            rows.append((P, cdf.termination.time, "", "", "", "", "",
                         cdf.termination.kind))
    return rows, worst_gap


TRAJECTORY_HEADER = ["P", "t", "x_cdf", "v_cdf", "x_ode", "v_ode",
                     "discrepancy", "status"]


def cmd_free(cfg: ScenarioConfig) -> int:
    if not cfg.p_list:
        raise ConfigError("P list must not be empty")
    started = time.perf_counter()
    tol = _tolerances(cfg)
    model = free_gaussian_model(_packet(cfg))
    rows, worst_gap = _trace_table(model, cfg.p_list, _time_grid(cfg), tol)
    out = _out_path(cfg, "free")
    write_csv(out, TRAJECTORY_HEADER, rows)
    checks = [("method_equivalence", worst_gap <= 1e-5,
               f"max |x_cdf - x_ode| = {worst_gap:.3e}")]
    write_manifest(out, "free", cfg, checks, time.perf_counter() - started)
    print(f"wrote {len(rows)} rows to {out}")
    return 0


def cmd_dissipative(cfg: ScenarioConfig) -> int:
    if not cfg.p_list:
        raise ConfigError("P list must not be empty")
    started = time.perf_counter()
    tol = _tolerances(cfg)
    model = dissipative_gaussian_model(_packet(cfg), cfg.loss_rate)
    rows, worst_gap = _trace_table(model, cfg.p_list, _time_grid(cfg), tol)
    out = _out_path(cfg, "dissipative")
    write_csv(out, TRAJECTORY_HEADER, rows)
    checks = [("method_equivalence", worst_gap <= 1e-5,
               f"max |x_cdf - x_ode| = {worst_gap:.3e}")]
    if cfg.loss_rate > 0.0:
        expected = {P: -math.log(P) / cfg.loss_rate for P in cfg.p_list}
        seen = {}
        for row in rows:
            if row[-1] == "norm_below_p":
                seen[row[0]] = row[1]
        worst = max((abs(seen[P] - expected[P]) for P in seen), default=0.0)
        detail = f"{len(seen)}/{len(cfg.p_list)} terminated, worst |dt_end| = {worst:.3e}"
        ok = worst <= 1e-6 and all(
            P in seen for P in cfg.p_list if expected[P] <= cfg.t_max)
        checks.append(("termination_time", ok, detail))
    write_manifest(out, "dissipative", cfg, checks,
                   time.perf_counter() - started)
    print(f"wrote {len(rows)} rows to {out}")
    return 0


def cmd_tunnel(cfg: ScenarioConfig) -> int:
    if not cfg.p_list:
        raise ConfigError("P list must not be empty")
    started = time.perf_counter()
    tol = _tolerances(cfg)
    spectrum, grid, free, tunnel = _spectral_pair(cfg, tol)
    times = _time_grid(cfg)
    edge = cfg.barrier_halfwidth
    rows = []
    min_lag_all = math.inf
    min_lag_beyond = math.inf
    for P in cfg.p_list:
        tun = trace_trajectory_cdf(tunnel, P, times, tol)
        ref = trace_trajectory_cdf(free, P, times, tol)
        free_at = dict(zip(ref.times.tolist(), ref.positions.tolist()))
        for t, x_tun in zip(tun.times.tolist(), tun.positions.tolist()):
            if t not in free_at:
                continue
            lag = free_at[t] - x_tun
            min_lag_all = min(min_lag_all, lag)
            if x_tun > edge:
                min_lag_beyond = min(min_lag_beyond, lag)
            rows.append((P, t, x_tun, free_at[t], lag))
    out = _out_path(cfg, "tunnel")
    write_csv(out, ["P", "t", "x_tunnel", "x_free", "lag"], rows)
    transmitted = packet_transmission_probability(
        spectrum, BarrierSpec(height=cfg.barrier_height,
                              half_width=cfg.barrier_halfwidth),
        grid, mass=cfg.mass)
    checks = [
        ("retardation_beyond_edge",
         math.isinf(min_lag_beyond) or min_lag_beyond >= -1e-5,
         f"min lag beyond barrier edge = {min_lag_beyond:.3e}"),
        ("min_lag_all", True,
         f"min lag over all rows = {min_lag_all:.3e} (diagnostic: pile-up in "
         "front of the barrier may lead transiently)"),
        ("packet_transmission", True,
         f"transmitted fraction = {transmitted:.9f}; quantiles with P below "
         "this cross the barrier"),
    ]
    if cfg.snapshot_times:
        density_rows = []
        for t in cfg.snapshot_times:
            lo, hi = tunnel.support_hint(t)
            xs = np.linspace(lo, hi, 1001)
            dens = tunnel.rho(xs, t)
            density_rows.extend((t, x, r) for x, r in zip(xs, dens))
            mass = tunnel.interval_mass(lo, hi, t)
            checks.append((f"snapshot_mass_t{t:g}", abs(mass - 1.0) <= 1e-6,
                           f"density block integrates to {mass:.12f}"))
        density_out = out.with_name(out.stem + "_density" + out.suffix)
        write_csv(density_out, ["t", "x", "rho"], density_rows)
        write_manifest(density_out, "tunnel", cfg, checks,
                       time.perf_counter() - started)
        print(f"wrote {len(density_rows)} density rows to {density_out}")
    write_manifest(out, "tunnel", cfg, checks, time.perf_counter() - started)
    print(f"wrote {len(rows)} rows to {out}")
    return 0


def cmd_delta_p(cfg: ScenarioConfig) -> int:
    started = time.perf_counter()
    tol = _tolerances(cfg)
    if any(x <= cfg.barrier_halfwidth for x in cfg.delta_x):
        raise ConfigError("delta_x values must lie beyond the barrier edge")
    _, _, free, tunnel = _spectral_pair(cfg, tol)
    report = delta_p_report(
        free, tunnel,
        x_values=list(cfg.delta_x) or None,
        t_values=list(cfg.delta_t) or None,
        n_lambda=cfg.n_lambda, tol=tol)
    rows = [(x, t, d, t1, t2, t3, tot, rel, ok)
            for (x, t), d, t1, t2, t3, tot, rel, ok in
            zip(report.grid, report.dp_direct, report.dp_term1,
                report.dp_term2, report.dp_term3, report.dp_total,
                report.agreement_rel, report.positivity_ok)]
    out = _out_path(cfg, "delta-p")
    write_csv(out, ["x", "t", "dp_direct", "term1", "term2", "term3",
                    "dp_total", "agreement_rel", "positivity_ok"], rows)
    agree = report.agreement_ok()
    checks = [
        ("positivity", report.all_positive,
         f"min dp_direct = {float(np.min(report.dp_direct)):.3e}"),
        ("route_agreement", bool(agree.all()),
         f"{int(agree.sum())}/{agree.size} points within 1% or 1e-6"),
    ]
    write_manifest(out, "delta-p", cfg, checks, time.perf_counter() - started)
    print(f"wrote {len(rows)} rows to {out}")
    return 0


def cmd_sphere3d(cfg: ScenarioConfig) -> int:
    started = time.perf_counter()
    tol = _tolerances(cfg)
    params = Gaussian3DParams(center=cfg.center, velocity=cfg.velocity,
                              sigma_x0=cfg.sigma_x0, mass=cfg.mass)
    field = gaussian3d_model(params)
    seeds = sphere_seeds(cfg.center, cfg.radius)
    times = _time_grid(cfg)
    flow = trace_flowmap_3d(field, seeds, times, tol)
    enclosed = [probability_in_volume(field, flow.points_at(i), float(t), tol)
                for i, t in enumerate(flow.times)]
    rows = []
    for s in range(flow.paths.shape[0]):
        for i, t in enumerate(flow.times):
            x, y, z = flow.paths[s, i]
            rows.append((s, t, x, y, z, enclosed[i]))
    out = _out_path(cfg, "sphere3d")
    write_csv(out, ["seed_id", "t", "x", "y", "z", "enclosed_p"], rows)
    spread = max(enclosed) - min(enclosed)
    checks = [("conservation_3d", spread <= 1e-4,
               f"enclosed probability spread = {spread:.3e} "
               f"(P = {flow.P:.6f})")]
    write_manifest(out, "sphere3d", cfg, checks, time.perf_counter() - started)
    print(f"wrote {len(rows)} rows to {out}")
    return 0


# ---------------------------------------------------------------------------
# verification suite

class _CurrentFlipped:
    """Harness fault for verify: reports the probability current negated."""

    def __init__(self, model):
        self._model = model

    def rho(self, x, t):
        return self._model.rho(x, t)

    def current(self, x, t):
        return -np.asarray(self._model.current(x, t))


def _check_method_equivalence(cfg: ScenarioConfig, tol: Tolerances):
    quick = cfg.quick
    packet = _packet(cfg)
    worst = 0.0
    cases = []
    free = free_gaussian_model(packet)
    cases.append((free, (0.5,) if quick else (0.3, 0.7),
                  np.linspace(0.0, 5.0 if quick else 10.0, 6 if quick else 21)))
    lossy = dissipative_gaussian_model(packet, cfg.loss_rate or 0.1)
    cases.append((lossy, (0.5,),
                  np.linspace(0.0, 5.0 if quick else 10.0, 6 if quick else 21)))
    spectral_cfg = replace(cfg, t_max=3.0 if quick else 6.0)
    _, _, _, tunnel = _spectral_pair(spectral_cfg, tol)
    cases.append((tunnel, (0.3,),
                  np.linspace(0.0, 3.0 if quick else 6.0, 7 if quick else 13)))
    for model, p_values, times in cases:
        _, gap = _trace_table(model, p_values, times, tol)
        worst = max(worst, gap)
    return worst <= 1e-5, f"max |x_cdf - x_ode| = {worst:.3e}"


def _check_unitarity(cfg: ScenarioConfig, tol: Tolerances):
    rng = np.random.default_rng(20260814)
    count = 25 if cfg.quick else 100
    worst = 0.0
    for _ in range(count):
        k = rng.uniform(0.2, 6.0)
        height = rng.uniform(0.0, 20.0)
        half_width = rng.uniform(0.05, 1.0)
        mode = scattering_mode(k, BarrierSpec(height=height,
                                              half_width=half_width))
        worst = max(worst, abs(abs(mode.T) ** 2 + abs(mode.R) ** 2 - 1.0))
    return worst <= 1e-12, f"max ||T|^2 + |R|^2 - 1| = {worst:.3e} ({count} modes)"


def _check_continuity(cfg: ScenarioConfig, tol: Tolerances, inject_fault: str):
    spectral_cfg = replace(cfg, t_max=6.0)
    _, _, _, tunnel = _spectral_pair(spectral_cfg, tol)
    model = _CurrentFlipped(tunnel) if inject_fault == "flip-current" else tunnel
    d = 1e-4
    t_values = (4.0,) if cfg.quick else (2.0, 5.0)
    worst = 0.0
    for t in t_values:
        xs = np.linspace(-12.0, 6.0, 21 if cfg.quick else 41)
        drho_dt = (model.rho(xs, t + d) - model.rho(xs, t - d)) / (2 * d)
        dj_dx = (model.current(xs + d, t) - model.current(xs - d, t)) / (2 * d)
        scale = float(np.max(np.abs(dj_dx)))
        worst = max(worst, float(np.max(np.abs(drho_dt + dj_dx))) / scale)
    return worst <= 1e-4, f"max residual = {worst:.3e} of local scale"


def _check_retardation(cfg: ScenarioConfig, tol: Tolerances):
    # Quantiles below the transmitted fraction cross the edge late, around
    # t = 7.5 for the default packet, so the scan must reach past that.
    spectral_cfg = replace(cfg, t_max=8.0)
    _, _, free, tunnel = _spectral_pair(spectral_cfg, tol)
    p_values = (0.02,) if cfg.quick else (0.01, 0.02, 0.3)
    times = np.linspace(0.0, 8.0, 5 if cfg.quick else 9)
    verdicts = retardation_scan(free, tunnel, p_values, times, tol=tol)
    ok = all(v.ok for v in verdicts)
    checked = sum(v.checked for v in verdicts)
    worst = max((v.worst_margin for v in verdicts if v.checked), default=-math.inf)
    return ok and checked > 0, (
        f"{checked} beyond-edge comparisons, worst margin = {worst:.3e}")


def _check_delta_p(cfg: ScenarioConfig, tol: Tolerances):
    spectral_cfg = replace(cfg, t_max=8.0)
    _, _, free, tunnel = _spectral_pair(spectral_cfg, tol)
    xs = [1.0] if cfg.quick else [0.5, 2.9]
    ts = [6.0] if cfg.quick else [3.0, 8.0]
    report = delta_p_report(free, tunnel, x_values=xs, t_values=ts,
                            n_lambda=cfg.n_lambda, tol=tol)
    ok = report.all_positive and bool(report.agreement_ok().all())
    return ok, (f"{len(report.grid)} points, worst agreement_rel = "
                f"{report.worst_agreement:.3e}")


def _check_conservation_3d(cfg: ScenarioConfig, tol: Tolerances):
    params = Gaussian3DParams(center=(0.0, 0.0, 0.0), velocity=(2.0, 0.0, 0.0),
                              sigma_x0=cfg.sigma_x0, mass=cfg.mass)
    field = gaussian3d_model(params)
    seeds = sphere_seeds((0.0, 0.0, 0.0), 3.0 * cfg.sigma_x0)
    times = np.array([0.0, 4.0]) if cfg.quick else np.array([0.0, 5.0, 10.0])
    flow = trace_flowmap_3d(field, seeds, times, tol)
    masses = [probability_in_volume(field, flow.points_at(i), float(t), tol)
              for i, t in enumerate(flow.times)]
    spread = max(masses) - min(masses)
    return spread <= 1e-4, f"enclosed probability spread = {spread:.3e}"


def _check_trajectory_roundtrip(cfg: ScenarioConfig, tol: Tolerances):
    packet = _packet(cfg)
    models = [free_gaussian_model(packet),
              dissipative_gaussian_model(packet, cfg.loss_rate or 0.1)]
    times = np.linspace(0.0, 4.0 if cfg.quick else 8.0, 5 if cfg.quick else 17)
    rows = []
    for model in models:
        for P in (0.3, 0.7):
            traj = trace_trajectory_cdf(model, P, times, tol)
            rows.extend((model, P, t, x) for t, x in
                        zip(traj.times.tolist(), traj.positions.tolist()))
    stride = max(1, len(rows) // 100)
    worst = 0.0
    for model, P, t, x in rows[::stride]:
        worst = max(worst, abs(model.tail(x, t) - P))
    return worst <= 1e-6, (f"{len(rows[::stride])}/{len(rows)} rows "
                           f"re-inverted, worst |tail - P| = {worst:.3e}")


def cmd_verify(cfg: ScenarioConfig, inject_fault: str = "") -> int:
    started = time.perf_counter()
    tol = _tolerances(cfg)
    suite = [
        ("method_equivalence", lambda: _check_method_equivalence(cfg, tol)),
        ("unitarity", lambda: _check_unitarity(cfg, tol)),
        ("continuity", lambda: _check_continuity(cfg, tol, inject_fault)),
        ("retardation", lambda: _check_retardation(cfg, tol)),
        ("delta_p_agreement", lambda: _check_delta_p(cfg, tol)),
        ("conservation_3d", lambda: _check_conservation_3d(cfg, tol)),
        ("trajectory_roundtrip", lambda: _check_trajectory_roundtrip(cfg, tol)),
    ]
    checks = []
    for name, fn in suite:
        try:
            passed, detail = fn()
        except Exception as exc:   # a crashed check is a failed check
            passed, detail = False, f"raised {type(exc).__name__}: {exc}"
        checks.append((name, passed, detail))
        print(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")
    out = _out_path(cfg, "verify")
    write_csv(out, ["check", "passed", "detail"], checks)
    write_manifest(out, "verify", cfg, checks, time.perf_counter() - started)
    failed = [name for name, passed, _ in checks if not passed]
    if failed:
        print(f"FAILED: {', '.join(failed)}")
        return 1
    print(f"all {len(checks)} checks passed "
          f"({time.perf_counter() - started:.1f}s)")
    return 0


# ---------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quantracer",
        description="Quantile trajectories for time-dependent densities")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("free", "free Gaussian packet trajectories"),
        ("dissipative", "trajectories with uniform probability loss"),
        ("tunnel", "tunneling vs free quantile trajectories"),
        ("delta-p", "two-route tail-deficit report beyond the barrier"),
        ("sphere3d", "transported-sphere flow map for the 3D packet"),
        ("verify", "run the invariant suite"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--preset", choices=sorted(PRESETS))
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--out", help="output CSV path")
        p.add_argument("--p-list", help="comma-separated quantile levels")
        p.add_argument("--t-max", type=float)
        p.add_argument("--t-step", type=float)
        p.add_argument("--lambda", dest="loss_rate", type=float,
                       help="uniform loss rate")
        p.add_argument("--barrier-height", type=float)
        p.add_argument("--barrier-halfwidth", type=float)
        p.add_argument("--k-nodes", type=int,
                       help="wave-number nodes (0 = auto)")
        p.add_argument("--quick", action="store_true",
                       help="reduced grids for verify")
        if name == "tunnel":
            p.add_argument("--snapshot-times",
                           help="comma-separated density snapshot times")
        if name == "delta-p":
            p.add_argument("--n-lambda", type=int,
                           help="thickness-quadrature nodes (>= 16)")
        if name == "verify":
            p.add_argument("--inject-fault", choices=["flip-current"],
                           default="", help="harness sanity fault")
    return parser


_FLAG_FIELDS = ("out", "p_list", "t_max", "t_step", "loss_rate",
                "barrier_height", "barrier_halfwidth", "k_nodes",
                "snapshot_times", "n_lambda")


def resolve_config(args: argparse.Namespace) -> ScenarioConfig:
    values = {"kind": {"delta-p": "tunnel", "sphere3d": "free3d"}.get(
        args.command, args.command)}
    if args.preset:
        values.update(PRESETS[args.preset])
    if args.config:
        file_values = load_config_file(args.config)
        file_values.pop("kind", None)   # the subcommand decides the kind
        values.update(file_values)
    for name in _FLAG_FIELDS:
        raw = getattr(args, name, None)
        if raw is None:
            continue
        if name in ("p_list", "snapshot_times"):
            values[name] = _parse_float_tuple(raw)
        else:
            values[name] = raw
    if getattr(args, "quick", False):
        values["quick"] = True
    cfg = ScenarioConfig(**values)
    validate_config(cfg)
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    handlers = {
        "free": cmd_free,
        "dissipative": cmd_dissipative,
        "tunnel": cmd_tunnel,
        "delta-p": cmd_delta_p,
        "sphere3d": cmd_sphere3d,
    }
    try:
        if args.command == "verify":
            return cmd_verify(cfg, inject_fault=args.inject_fault)
        return handlers[args.command](cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except QuantracerError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
