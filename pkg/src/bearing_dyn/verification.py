"""Executable checks for the conservation laws and invariant measures.

The main entry point is :func:`drift_report`, which integrates one scenario
and collects integral drifts, constraint residuals, measure transport and
system-specific diagnostics into a :class:`DriftReport`.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, NamedTuple, Optional

import numpy as np

from . import geometry as geo
from . import integrators as it
from . import oracle as orc
from . import planar as pl
from . import spherical as sp

FD_STEP = 1e-6
# absolute floor (relative to mu) for the divergence scale, so that states where
# both mu' and div X vanish analytically do not turn pure round-off into a failure
SCALE_FLOOR = 1e-3

SYSTEMS = ("spherical", "planar", "planar-levelset", "planar-oracle-compare")


class DivergenceCheck(NamedTuple):
    residual: float  # mu' + mu div X
    mu_dot: float
    mu_div: float
    scale: float  # |mu'| + mu * (sum_j |dX_j/dz_j| + SCALE_FLOOR)

    @property
    def scaled(self) -> float:
        return abs(self.residual) / self.scale if self.residual else 0.0


def weighted_divergence(field_: Callable, density: Callable, state, step: float = FD_STEP) -> DivergenceCheck:
    """``mu' + mu div X`` at ``state`` with gradient and divergence by central differences."""
    z = np.asarray(state, dtype=float)
    d = z.size
    hs = step * np.maximum(1.0, np.abs(z))
    pert = np.diag(hs)
    zz = np.concatenate((z + pert, z - pert))
    F = field_(zz)
    diag = (F[np.arange(d), np.arange(d)] - F[d + np.arange(d), np.arange(d)]) / (2.0 * hs)
    mu_vals = np.array([float(density(row)) for row in zz])
    grad = (mu_vals[:d] - mu_vals[d:]) / (2.0 * hs)
    mu = float(density(z))
    mu_dot = float(grad @ field_(z))
    mu_div = mu * float(diag.sum())
    scale = abs(mu_dot) + mu * (float(np.abs(diag).sum()) + SCALE_FLOOR)
    return DivergenceCheck(mu_dot + mu_div, mu_dot, mu_div, scale)


def transport_check(field_: Callable, density: Callable, state, h: float, t_end: float,
                    sample_every: int = 10) -> float:
    """Max over samples of ``|mu(z(t)) det J(t) / mu(z(0)) - 1|``."""
    flow = it.tangent_flow(field_, state, h, t_end, sample_every=sample_every)
    mu0 = float(density(flow.states[0]))
    ratios = np.array([float(density(z)) * np.linalg.det(J) / mu0
                       for z, J in zip(flow.states, flow.jacobians)])
    return float(np.max(np.abs(ratios - 1.0)))


def unit_density(z) -> float:
    return 1.0


def observed_order(field_: Callable, state, h: float, t_end: float) -> float:
    """Convergence order from endpoints at steps h, h/2, h/4 (Richardson)."""
    ends = [it.integrate(field_, state, hh, t_end, sample_every=10**9).final
            for hh in (h, h / 2, h / 4)]
    e1 = np.max(np.abs(ends[0] - ends[1]))
    e2 = np.max(np.abs(ends[1] - ends[2]))
    return float(np.log2(e1 / e2))


# --- random admissible states ---------------------------------------------------------


def random_gammas(p: sp.SphericalParams, rng: np.random.Generator, max_tries: int = 10000) -> np.ndarray:
    """Uniform ball directions satisfying the no-contact condition (rejection sampling)."""
    for _ in range(max_tries):
        g = geo.random_unit(rng, p.n)
        if sp.no_contact_margin(p, g) > 0:
            return g
    raise RuntimeError("could not sample an admissible ball configuration")


def random_spherical_state(p: sp.SphericalParams, rng: np.random.Generator) -> sp.SphericalState:
    return sp.SphericalState(rng.uniform(-1.0, 1.0, 3), random_gammas(p, rng))


def random_offsets(p: pl.PlanarParams, rng: np.random.Generator, inner: float = 0.5,
                   outer: float = 3.0, max_tries: int = 10000) -> np.ndarray:
    """Ball offsets from O, uniform in an annulus (radii in units of r), pairwise >= 2r."""
    for _ in range(max_tries):
        rad = p.r * np.sqrt(rng.uniform(inner**2, outer**2, p.n))
        ang = rng.uniform(0.0, 2.0 * np.pi, p.n)
        off = np.stack((rad * np.cos(ang), rad * np.sin(ang)), axis=-1)
        if pl.one_side_margin(p, off) > 0:
            return off
    raise RuntimeError("could not sample an admissible ball configuration")


def random_planar_full(p: pl.PlanarParams, rng: np.random.Generator) -> pl.PlanarFullState:
    pose = np.array([rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-np.pi, np.pi)])
    centers = pose[:2] + random_offsets(p, rng)
    return pl.PlanarFullState.consistent(p, pose, rng.uniform(-1.0, 1.0, 3), centers,
                                         rng.uniform(-1.0, 1.0, p.n))


def random_planar_state(p: pl.PlanarParams, rng: np.random.Generator) -> pl.PlanarReducedState:
    full = random_planar_full(p, rng)
    return pl.PlanarReducedState(full.velocity, pl.aggregates(p, full))


# --- reports --------------------------------------------------------------------------


@dataclass
class IntegralDrift:
    initial: float
    max_abs_drift: float
    final_drift: float
    relative_drift: float

    @classmethod
    def from_series(cls, values) -> "IntegralDrift":
        values = np.asarray(values, dtype=float)
        dev = np.abs(values - values[0])
        scale = max(1.0, abs(values[0]))
        return cls(float(values[0]), float(dev.max()), float(dev[-1]), float(dev.max() / scale))


@dataclass
class Table:
    header: list[str]
    rows: np.ndarray


@dataclass
class DriftReport:
    system: str
    integrals: dict[str, IntegralDrift] = field(default_factory=dict)
    max_constraint_residual: Optional[float] = None
    measure_transport_deviation: Optional[float] = None
    triangle_drift: Optional[float] = None
    admissible: dict[str, bool] = field(default_factory=dict)
    diagnostics: dict[str, float] = field(default_factory=dict)
    metadata: dict[str, Any] = field(default_factory=dict)
    table: Optional[Table] = field(default=None, repr=False)

    @property
    def max_relative_drift(self) -> float:
        return max((d.relative_drift for d in self.integrals.values()), default=0.0)

    def to_dict(self) -> dict:
        out = asdict(self)
        out.pop("table")
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=True)


def _divergence_at_samples(field_, density, states, count: int = 10) -> float:
    idx = np.unique(np.linspace(0, len(states) - 1, min(count, len(states))).astype(int))
    return max(weighted_divergence(field_, density, states[i]).scaled for i in idx)


def _spherical_report(p: sp.SphericalParams, initial, h, t_end, sample_every, options) -> DriftReport:
    n = p.n
    is_full = isinstance(initial, sp.FullSphericalState)
    if is_full:
        field_ = sp.full_field(p)
        units, rots = sp.full_slices(n)
        observers = [it.Renormalizer(units), it.Reorthonormalizer(rots)]
        z0 = initial.vector()
    else:
        field_ = sp.reduced_field(p)
        observers = [it.Renormalizer(sp.reduced_unit_slices(n))]
        z0 = initial.vector()
    flow = it.integrate(field_, z0, h, t_end, observers, sample_every)
    red = sp.SphericalState.from_vector(flow.states, n)
    ints = sp.integrals(p, red)
    rep = DriftReport("spherical")
    rep.integrals["F1"] = IntegralDrift.from_series(ints.F1)
    rep.integrals["F2"] = IntegralDrift.from_series(ints.F2)
    rep.integrals["T"] = IntegralDrift.from_series(ints.T)
    for i in range(n):
        for j in range(i, n):
            rep.integrals[f"F_{i + 1}{j + 1}"] = IntegralDrift.from_series(ints.F_gram[:, i, j])
    spins = geo.dot(sp.ball_omegas(p, red), red.gammas)
    for i in range(n):
        rep.integrals[f"c_{i + 1}"] = IntegralDrift.from_series(spins[:, i])

    if is_full:
        fulls = sp.FullSphericalState.from_vector(flow.states, n)
        res = sp.constraint_residuals(p, fulls)
        rep.max_constraint_residual = res.max
        rep.diagnostics["space_frame_residual"] = float(np.max(sp.space_frame_residual(p, fulls), initial=0.0))
        rep.diagnostics["orthogonality_drift"] = max(
            geo.orthogonality_defect(fulls.g), geo.orthogonality_defect(fulls.g_list))
        rep.diagnostics["reorthonormalizations"] = float(observers[1].applied)
    else:
        rep.max_constraint_residual = sp.constraint_residuals(
            p, sp.FullSphericalState(red, None, None)).max
    rep.diagnostics["renormalizations"] = float(observers[0].applied)

    margins = [sp.no_contact_margin(p, g) for g in red.gammas]
    rep.admissible = {"initial": bool(margins[0] > 0), "all_samples": bool(min(margins) > 0)}

    reduced_field = sp.reduced_field(p)
    red_states = red.vector()
    if options.get("lr_evolution"):
        rate = sp.gamma_operator_rate(p, red)
        Gop = sp.gamma_operator(p, red.gammas)
        expected = p.epsilon * geo.commutator(Gop, geo.hat(red.omega))
        rep.diagnostics["gamma_operator_evolution_residual"] = float(np.max(np.abs(rate - expected)))
    if options.get("epsilon_limit_R"):
        R = options["epsilon_limit_R"]
        rep.diagnostics["epsilon_limit_gap"] = abs(R / (2.0 * R + 2.0 * p.r) - 0.5)
    if options.get("divergence"):
        dens = lambda z: sp.measure_density(p, z[3:].reshape(n, 3))
        rep.diagnostics["divergence_residual"] = _divergence_at_samples(reduced_field, dens, red_states)
    measure = options.get("measure")
    if measure:
        dens = unit_density if measure == "unit" else (lambda z: sp.measure_density(p, z[3:].reshape(n, 3)))
        rep.measure_transport_deviation = transport_check(
            reduced_field, dens, red_states[0], h, options.get("measure_t_end", t_end), sample_every)
        rep.diagnostics["measure_density_is_unit"] = float(measure == "unit")
    if options.get("convergence_order"):
        rep.diagnostics["convergence_order"] = observed_order(
            reduced_field, red_states[0], options.get("order_h", 0.05), options.get("order_t_end", 2.0))

    header = ["t", "Omega_1", "Omega_2", "Omega_3"]
    header += [f"Gamma_{i + 1}_{k + 1}" for i in range(n) for k in range(3)]
    header += ["F1", "F2", "T", "mu"]
    cols = [flow.times[:, None], red_states, ints.F1[:, None], ints.F2[:, None], ints.T[:, None],
            sp.measure_density(p, red.gammas)[:, None]]
    if is_full:
        header += [f"g_{a + 1}{b + 1}" for a in range(3) for b in range(3)]
        header += [f"g{i + 1}_{a + 1}{b + 1}" for i in range(n) for a in range(3) for b in range(3)]
        cols.append(flow.states[:, 3 + 3 * n:])
    rep.table = Table(header, np.hstack(cols))
    return rep


def _planar_reduced_columns(p, s):
    f = pl.integrals(p, s)
    header = ["v_x", "v_y", "v_phi", "N_1", "N_2", "M", "f1", "f2", "f3", "f4", "mu"]
    cols = np.column_stack((s.v, s.nvec, f.f1, f.f2, f.f3, f.f4, pl.measure_density(p, s)))
    return header, cols


def _planar_integral_drifts(rep, p, s):
    f = pl.integrals(p, s)
    for name, vals in zip(("f1", "f2", "f3", "f4"), f):
        rep.integrals[name] = IntegralDrift.from_series(vals)


def _planar_report(p: pl.PlanarParams, initial: pl.PlanarFullState, h, t_end, sample_every, options):
    n = p.n
    spin_z = initial.spins[:, 2].copy()
    flow = it.integrate(pl.phase_field(p), initial.phase_vector(), h, t_end, (), sample_every)
    s = pl.reduced_from_phase(p, flow.states)
    rep = DriftReport("planar")
    _planar_integral_drifts(rep, p, s)
    centers = flow.states[:, 6:].reshape(-1, n, 2)
    dist = pl.pairwise_distances(centers)
    for k, (i, j) in enumerate(zip(*np.triu_indices(n, 1))):
        rep.integrals[f"dist_{i + 1}{j + 1}"] = IntegralDrift.from_series(dist[:, k])
    # vertical spins are carried, so their reconstruction is exact by design
    recon = np.array([pl.PlanarFullState.from_phase_vector(p, z, spin_z).spins[:, 2] for z in flow.states])
    for i in range(n):
        rep.integrals[f"omega_{i + 1}3"] = IntegralDrift.from_series(recon[:, i])
    rep.triangle_drift = pl.triangle_residuals(centers)
    fulls = [pl.PlanarFullState.from_phase_vector(p, z, spin_z) for z in flow.states]
    rep.max_constraint_residual = max(float(np.max(np.abs(orc.constraint_values(p, f)))) for f in fulls)
    margins = pl.q_margin(p, s)
    sides = [pl.one_side_margin(p, c) for c in centers]
    rep.admissible = {
        "initial": bool(margins[0] > 0 and sides[0] >= 0),
        "all_samples": bool(np.all(margins > 0) and min(sides) >= 0),
        "in_Q": bool(np.all(margins > 0)),
        "one_side": bool(min(sides) >= 0),
    }
    rfield = pl.reduced_field(p)
    dens = lambda z: pl.measure_density(p, pl.PlanarReducedState.from_vector(z))
    if options.get("divergence"):
        rep.diagnostics["divergence_residual"] = _divergence_at_samples(rfield, dens, s.vector())
    if options.get("levelset_divergence"):
        d, _ = pl.level_set_of(p, s.__class__(s.v[0], s.nvec[0]))
        ys = np.column_stack((s.v[:, 2], s.nvec[:, :2]))
        lfield = pl.level_set_field(p, d)
        rep.diagnostics["levelset_divergence_residual"] = _divergence_at_samples(
            lfield, lambda y: pl.level_set_density(p, d, y), ys)
        idx = np.unique(np.linspace(0, len(ys) - 1, min(10, len(ys))).astype(int))
        fd_div = np.array([np.trace(it.fd_jacobian(lfield, ys[i])) for i in idx])
        rep.diagnostics["divergence_closed_form_gap"] = float(
            np.max(np.abs(fd_div - pl.level_set_divergence(p, d, ys[idx]))))
    measure = options.get("measure")
    if measure:
        rep.measure_transport_deviation = transport_check(
            rfield, unit_density if measure == "unit" else dens, s.vector()[0], h,
            options.get("measure_t_end", t_end), sample_every)
    header, cols = _planar_reduced_columns(p, s)
    pose_header = ["x", "y", "phi"] + [f"{c}_{i + 1}" for i in range(n) for c in ("x", "y")]
    rep.table = Table(["t"] + header + pose_header,
                      np.hstack((flow.times[:, None], cols, flow.states[:, 0:3], flow.states[:, 6:])))
    return rep


def _levelset_report(p: pl.PlanarParams, initial, h, t_end, sample_every, options):
    d, y0 = initial
    y0 = np.asarray(y0, dtype=float)
    fld = pl.level_set_field(p, d)
    flow = it.integrate(fld, y0, h, t_end, (), sample_every)
    rep = DriftReport("planar-levelset")
    emb = pl.level_set_embed(p, d, flow.states)
    _planar_integral_drifts(rep, p, emb)
    rep.admissible = {"initial": bool(pl.q_margin(p, emb)[0] > 0),
                      "all_samples": bool(np.all(pl.q_margin(p, emb) > 0))}
    rep.diagnostics["v_phi_drift"] = float(np.max(np.abs(flow.states[:, 0] - y0[0])))
    if d.d1 == 0 and d.d2 == 0:
        exact = pl.closed_form_zero_d(p, d.d3, y0, flow.times)
        rep.diagnostics["closed_form_deviation"] = float(np.max(np.abs(flow.states - exact)))
    dens = lambda y: pl.level_set_density(p, d, y)
    if options.get("divergence", True):
        rep.diagnostics["divergence_residual"] = _divergence_at_samples(fld, dens, flow.states)
        idx = np.linspace(0, len(flow.states) - 1, min(10, len(flow.states))).astype(int)
        fd_div = [np.trace(it.fd_jacobian(fld, flow.states[i])) for i in idx]
        exact = pl.level_set_divergence(p, d, flow.states[idx])
        rep.diagnostics["divergence_closed_form_gap"] = float(np.max(np.abs(np.array(fd_div) - exact)))
    measure = options.get("measure")
    if measure:
        rep.measure_transport_deviation = transport_check(
            fld, unit_density if measure == "unit" else dens, y0, h,
            options.get("measure_t_end", t_end), sample_every)
    rep.table = Table(["t", "v_phi", "N_1", "N_2", "mu"], np.column_stack(
        (flow.times, flow.states, pl.level_set_density(p, d, flow.states))))
    return rep


def _oracle_compare_report(p: pl.PlanarParams, initial: pl.PlanarFullState, h, t_end, sample_every, options):
    n = p.n
    ofield = orc.oracle_field(p)
    oflow = it.integrate(ofield, initial.vector(), h, t_end, (), sample_every)
    pflow = it.integrate(pl.phase_field(p), initial.phase_vector(), h, t_end, (), sample_every)
    fulls = [pl.PlanarFullState.from_vector(z, n) for z in oflow.states]
    s_oracle = pl.PlanarReducedState(np.array([f.velocity for f in fulls]),
                                     np.array([pl.aggregates(p, f) for f in fulls]))
    s_reduced = pl.reduced_from_phase(p, pflow.states)
    rep = DriftReport("planar-oracle-compare")
    _planar_integral_drifts(rep, p, s_oracle)
    energy = [pl.kinetic_energy(p, f) for f in fulls]
    rep.integrals["T_full"] = IntegralDrift.from_series(energy)
    spins = np.array([f.spins[:, 2] for f in fulls])
    for i in range(n):
        rep.integrals[f"omega_{i + 1}3"] = IntegralDrift.from_series(spins[:, i])
    rep.diagnostics["oracle_trajectory_divergence"] = float(max(
        np.max(np.abs(s_oracle.vector() - s_reduced.vector())),
        np.max(np.abs(oflow.states[:, :6 + 2 * n] - pflow.states))))
    deriv_gap = 0.0
    rate_gap = ratio_gap = derived_gap = printed_gap = 0.0
    for f in fulls:
        sol = orc.solve_multipliers(p, f)
        zd = orc.full_oracle_rhs(p, f)
        red = pl.PlanarReducedState(f.velocity, pl.aggregates(p, f))
        vd, nd = pl.reduced_rhs(p, red)
        deriv_gap = max(deriv_gap, float(np.max(np.abs(orc.reduced_rates(p, f, zd) - np.concatenate((vd, nd))))))
        rate_gap = max(rate_gap, float(np.max(np.abs(orc.constraint_rates(p, f)))))
        ratio_gap = max(ratio_gap, orc.mass_ratio_residual(p, sol))
        derived_gap = max(derived_gap, orc.derived_force_equation_residual(p, f, sol))
        printed_gap = max(printed_gap, orc.printed_force_equation_residual(p, f, sol))
    rep.diagnostics["oracle_derivative_agreement"] = deriv_gap
    rep.diagnostics["constraint_rate_residual"] = rate_gap
    rep.diagnostics["mass_ratio_residual"] = ratio_gap
    rep.diagnostics["derived_force_equation_residual"] = derived_gap
    rep.diagnostics["printed_force_equation_residual"] = printed_gap
    rep.max_constraint_residual = max(float(np.max(np.abs(orc.constraint_values(p, f)))) for f in fulls)
    centers = np.array([f.centers for f in fulls])
    rep.triangle_drift = pl.triangle_residuals(centers)
    margins = pl.q_margin(p, s_oracle)
    rep.admissible = {"initial": bool(margins[0] > 0), "all_samples": bool(np.all(margins > 0))}
    header, cols = _planar_reduced_columns(p, s_oracle)
    pose_header = ["x", "y", "phi"] + [f"{c}_{i + 1}" for i in range(n) for c in ("x", "y")]
    rep.table = Table(["t"] + header + pose_header, np.hstack(
        (oflow.times[:, None], cols, oflow.states[:, 0:3], oflow.states[:, 6:6 + 2 * n])))
    return rep


def drift_report(system: str, params, initial, h: float, t_end: float, *, seed: Optional[int] = None,
                 sample_every: int = 10, **options) -> DriftReport:
    """Integrate one scenario and collect every drift and residual for its system.

    ``initial`` is a :class:`~bearing_dyn.spherical.SphericalState` or
    :class:`~bearing_dyn.spherical.FullSphericalState` for ``"spherical"``, a
    :class:`~bearing_dyn.planar.PlanarFullState` for ``"planar"`` and
    ``"planar-oracle-compare"``, and ``(LevelSetParams, (v_phi, N_1, N_2))``
    for ``"planar-levelset"``.

    Options: ``measure`` ("sqrt_det" or "unit") runs the transport check,
    ``divergence`` the pointwise weighted-divergence check, ``lr_evolution``
    and ``convergence_order`` the corresponding spherical diagnostics.

    Raises:
        ValueError: for inadmissible initial states.
    """
    if system == "spherical":
        red = initial.reduced if isinstance(initial, sp.FullSphericalState) else initial
        norms = np.linalg.norm(red.gammas, axis=-1)
        if np.max(np.abs(norms - 1.0), initial=0.0) > geo.UNIT_REJECT_TOL:
            raise ValueError("ball directions are not unit vectors")
        rep = _spherical_report(params, initial, h, t_end, sample_every, options)
        n = params.n
    elif system == "planar":
        _check_planar_initial(params, initial)
        rep = _planar_report(params, initial, h, t_end, sample_every, options)
        n = params.n
    elif system == "planar-levelset":
        d, y0 = initial
        if pl.q_margin(params, pl.level_set_embed(params, d, y0)) <= 0:
            raise ValueError("level-set initial state lies outside Q")
        rep = _levelset_report(params, initial, h, t_end, sample_every, options)
        n = params.n
    elif system == "planar-oracle-compare":
        _check_planar_initial(params, initial)
        rep = _oracle_compare_report(params, initial, h, t_end, sample_every, options)
        n = params.n
    else:
        raise ValueError(f"unknown system {system!r}; expected one of {SYSTEMS}")
    rep.metadata = {"system": system, "h": h, "t_end": t_end, "n": n, "seed": seed,
                    "sample_every": sample_every, "samples": int(len(rep.table.rows))}
    return rep


def _check_planar_initial(p: pl.PlanarParams, full: pl.PlanarFullState) -> None:
    try:
        nvec = pl.aggregates(p, full)
    except ValueError as exc:
        raise ValueError(f"initial state is outside Q: {exc}") from None
    if not np.all(np.isfinite(nvec)):
        raise ValueError("initial state is not finite")
    if np.max(np.abs(orc.constraint_values(p, full))) > 1e-9:
        raise ValueError("initial state violates the rolling constraints")


def max_finite(values) -> float:
    vals = [v for v in values if v is not None and math.isfinite(v)]
    return max(vals) if vals else 0.0
