"""Energy of the ansatz, its small-delta expansion, the reduced energy and critical pairs."""
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .ansatz import Ansatz, make_params, solve_projected_correction, bubble_density, kernel_Z
from .errors import (BracketError, InsufficientDataError, MeanFieldError, NonConvergenceError,
                     NumericalMismatchError, ZeroMeanError)
from .fitting import extrapolate_limit, fit_order
from .landscape import (EIGHT_PI, coeff_A, coeff_B, grad_phi_m, hess_phi_m, log_k_masked,
                        phi_m)
from .surface import Field, integrate


class StaleSeedError(NonConvergenceError):
    """Newton in the concentration points did not settle near the seed."""


def J_lambda(lam, u, data):
    """(1/2) int |grad u|^2 - lam log int k e^u for a zero-mean grid field u."""
    if not isinstance(u, Field):
        raise TypeError("J_lambda expects a Field")
    g = u.grid
    if not u.is_zero_mean:
        raise ZeroMeanError(f"u must have zero mean (mean {u.mean:.3e})")
    grad = g.spectral.gradient(u.values)
    dirichlet = 0.5 * integrate(g, np.einsum("...i,...i->...", grad, grad))
    I = integrate(g, np.exp(log_k_masked(data, g.points) + u.values))
    if not np.isfinite(I) or I <= 0:
        raise MeanFieldError(f"int k e^u = {I} is not a positive number")
    return dirichlet - lam * np.log(I)


def leading_terms(lam, m, phi, delta):
    """Part of the small-delta expansion of J_lam(W) below order delta^2."""
    return (-EIGHT_PI * m - lam * np.log(np.pi * m) - 32 * np.pi**2 * phi
            + 2 * (lam - EIGHT_PI * m) * np.log(delta))


def expansion_value(lam, m, phi, A, B, delta):
    return leading_terms(lam, m, phi, delta) + A * delta**2 * np.log(delta) - B * delta**2


def expansion_ddelta(lam, m, A, B, delta):
    return 2 * (lam - EIGHT_PI * m) / delta + 2 * A * delta * np.log(delta) + (A - 2 * B) * delta


def expansion_ddelta2(lam, m, A, B, delta):
    return -2 * (lam - EIGHT_PI * m) / delta**2 + 2 * A * np.log(delta) + 3 * A - 2 * B


@dataclass
class AnsatzEnergy:
    J: float
    dJ: float = None
    grad2: float = None
    kW: float = None


def energy_of_ansatz(params, lam, derivative=False, check=True, ansatz=None):
    """J_lam(W) on the patch quadrature, with the analytic delta-derivative.

    The Dirichlet term uses int |grad W|^2 = int (-Lap W) W with the exact
    Laplacian of the ansatz. With ``check`` the derivative is compared with a
    central difference of J; disagreement beyond 1e-5 (relative) raises.
    """
    ans = ansatz or Ansatz(params)
    I = ans.integrals(derivative=derivative)
    J = 0.5 * I["grad2"] - lam * np.log(I["kW"])
    if not derivative:
        return AnsatzEnergy(J, None, I["grad2"], I["kW"])
    dJ = I["d_grad2"] - lam * I["d_kW"] / I["kW"]
    if check:
        h = 1e-3 * params.delta
        Jp = energy_of_ansatz(params.with_delta(params.delta + h), lam).J
        Jm = energy_of_ansatz(params.with_delta(params.delta - h), lam).J
        fd = (Jp - Jm) / (2 * h)
        floor = 1e-10 * abs(J) / h
        if abs(fd - dJ) > 1e-5 * abs(dJ) + floor:
            raise NumericalMismatchError(
                f"d J / d delta: analytic {dJ:.12g} vs difference quotient {fd:.12g}")
    return AnsatzEnergy(J, dJ, I["grad2"], I["kW"])


def ddelta2_of_ansatz(params, lam, rel_step=2e-3):
    """Second delta-derivative as a central difference of the analytic first one."""
    h = rel_step * params.delta
    dp = energy_of_ansatz(params.with_delta(params.delta + h), lam, True, False).dJ
    dm = energy_of_ansatz(params.with_delta(params.delta - h), lam, True, False).dJ
    return (dp - dm) / (2 * h)


def grad_xi_of_ansatz(params, lam, h=2e-3):
    """Gradient of J_lam(W) in the concentration points (five-point differences).

    The widths follow the points through d_j = delta sqrt(rho_j(xi_j)).
    """
    cfg = params.config
    n = 2 * cfg.m
    out = np.zeros(n)
    for a in range(n):
        e = np.zeros(n)
        e[a] = 1.0
        vals = []
        for s in (2, 1, -1, -2):
            c = cfg.moved((s * h * e).reshape(cfg.m, 2))
            p = make_params(params.data, c, params.delta, params.r0, params.cutoff.profile)
            vals.append(energy_of_ansatz(p, lam).J)
        out[a] = (-vals[0] + 8 * vals[1] - 8 * vals[2] + vals[3]) / (12 * h)
    return out


# -- expansion sweep ---------------------------------------------------------------

def lambda_rule(rule, m):
    """Turn ``rule`` into a function of delta.

    A number is used as is; ``"window+"``/``"window-"`` give
    8 pi m +- delta^2 |log delta|; a callable is passed through.
    """
    if callable(rule):
        return rule
    if rule in ("window+", "window-"):
        sgn = 1.0 if rule == "window+" else -1.0
        return lambda d: EIGHT_PI * m + sgn * d * d * abs(np.log(d))
    val = float(rule)
    return lambda d: val


@dataclass
class ExpansionReport:
    deltas: np.ndarray
    lambdas: np.ndarray
    J: np.ndarray
    J_theory: np.ndarray
    J_residual: np.ndarray
    J_order: float
    dJ: np.ndarray = None
    dJ_theory: np.ndarray = None
    dJ_residual: np.ndarray = None
    dJ_order: float = None
    ddJ: np.ndarray = None
    ddJ_theory: np.ndarray = None
    ddJ_residual: np.ndarray = None
    ddJ_limit: float = None
    grad_xi: np.ndarray = None
    grad_xi_theory: np.ndarray = None
    grad_xi_residual: np.ndarray = None
    grad_xi_order: float = None
    A: float = None
    B: float = None
    phi: float = None
    A_fit: float = None
    B_fit: float = None

    def rows(self):
        """Per-delta rows for CSV output."""
        out = []
        for i, d in enumerate(self.deltas):
            row = {"delta": d, "lambda": self.lambdas[i], "J": self.J[i],
                   "J_theory": self.J_theory[i], "J_residual": self.J_residual[i]}
            if self.dJ is not None:
                row.update(dJ=self.dJ[i], dJ_theory=self.dJ_theory[i],
                           dJ_residual=self.dJ_residual[i])
            if self.ddJ is not None:
                row.update(ddJ=self.ddJ[i], ddJ_theory=self.ddJ_theory[i],
                           ddJ_residual=self.ddJ_residual[i])
            if self.grad_xi is not None:
                row.update(grad_xi_residual=self.grad_xi_residual[i])
            out.append(row)
        return out


def fit_coefficients(deltas, values, lam, m, phi):
    """Least-squares (A, B) from (J - leading terms) / delta^2 = A log delta - B + remainder.

    The remainder is modelled by its next two terms, delta^2 and delta^2 log delta.
    """
    d = np.asarray(deltas, dtype=float)
    y = (np.asarray(values) - np.array([leading_terms(l, m, phi, x) for l, x in zip(lam, d)])) / d**2
    cols = [np.log(d), -np.ones_like(d), d**2, d**2 * np.log(d)]
    X = np.stack(cols[:min(4, len(d) - 1)], axis=1)
    (A, B, *_), *_ = np.linalg.lstsq(X, y, rcond=None)
    return float(A), float(B)


def verify_expansion(lam_rule, data, config, deltas, r0=None, derivatives=("delta", "delta2", "xi"),
                     A=None, B=None):
    """Compare J_lam(W), its delta-derivatives and its xi-gradient with the expansion."""
    deltas = np.asarray(sorted(deltas, reverse=True), dtype=float)
    if len(deltas) < 4:
        raise InsufficientDataError("an expansion sweep needs at least 4 values of delta")
    m = config.m
    rule = lambda_rule(lam_rule, m)
    lams = np.array([rule(d) for d in deltas])
    phi = phi_m(data, config)
    A = coeff_A(data, config) if A is None else A
    B = coeff_B(data, config) if B is None else B
    gphi = grad_phi_m(data, config)
    J, dJ, ddJ, gx = [], [], [], []
    for d, lam in zip(deltas, lams):
        p = make_params(data, config, d, r0)
        want_d = "delta" in derivatives
        e = energy_of_ansatz(p, lam, derivative=want_d)
        J.append(e.J)
        if want_d:
            dJ.append(e.dJ)
        if "delta2" in derivatives:
            ddJ.append(ddelta2_of_ansatz(p, lam))
        if "xi" in derivatives:
            gx.append(grad_xi_of_ansatz(p, lam))
    J = np.array(J)
    Jt = np.array([expansion_value(l, m, phi, A, B, d) for l, d in zip(lams, deltas)])
    res = J - Jt
    rep = ExpansionReport(deltas, lams, J, Jt, res, fit_order(deltas, res)[0], A=A, B=B, phi=phi)
    rep.A_fit, rep.B_fit = fit_coefficients(deltas, J, lams, m, phi)
    if dJ:
        rep.dJ = np.array(dJ)
        rep.dJ_theory = np.array([expansion_ddelta(l, m, A, B, d) for l, d in zip(lams, deltas)])
        rep.dJ_residual = rep.dJ - rep.dJ_theory
        rep.dJ_order = fit_order(deltas, rep.dJ_residual)[0]
    if ddJ:
        rep.ddJ = np.array(ddJ)
        rep.ddJ_theory = np.array([expansion_ddelta2(l, m, A, B, d) for l, d in zip(lams, deltas)])
        rep.ddJ_residual = rep.ddJ - rep.ddJ_theory
        shifted = rep.ddJ + 2 * (lams - EIGHT_PI * m) / deltas**2 - 2 * A * np.log(deltas)
        rep.ddJ_limit = extrapolate_limit(deltas, shifted, rate=2.0)
    if gx:
        rep.grad_xi = np.array(gx)
        rep.grad_xi_theory = np.tile(-32 * np.pi**2 * gphi, (len(deltas), 1))
        rep.grad_xi_residual = np.max(np.abs(rep.grad_xi - rep.grad_xi_theory), axis=1)
        rep.grad_xi_order = fit_order(deltas, rep.grad_xi_residual, log_power=1.0)[0]
    return rep


# -- reduced energy ------------------------------------------------------------------

@dataclass
class ReducedEnergy:
    E: float
    J_W: float
    difference: float
    dE: float
    correction: object = field(repr=False, default=None)


def _lap_pz_pointwise(params, pts, i, j, cutoff_mass):
    r = np.linalg.norm(params.surface.wrap(pts - params.config.points[j]), axis=-1)
    Z = kernel_Z(params, j, i, pts)
    return -params.cutoff(r) * bubble_density(r, params.deltas[j]) * Z + cutoff_mass


def reduced_E(lam, delta, data, config, r0=None, grid=None, correction=None):
    """E_lam = J_lam(W + phi) with phi the projected correction at (delta, xi).

    Also returns dE/d delta from the multipliers: since W + phi solves the
    equation up to sum_a c_a Lap PZ_a,
    dE/d delta = -sum_a c_a (int Lap PZ_a dW/d delta - int phi d(Lap PZ_a)/d delta).
    """
    params = make_params(data, config, delta, r0)
    ans = Ansatz(params)
    corr = correction or solve_projected_correction(params, lam, grid=grid, ansatz=ans)
    op = corr.op
    g = op.grid
    phi = corr.phi.values
    eW = energy_of_ansatz(params, lam, ansatz=ans)
    chi_rho = ans.chi_density(g.points)
    grad = g.spectral.gradient(phi)
    e1 = np.exp(op.logk + op.W + phi)
    e0 = np.exp(op.logk + op.W)
    E = (eW.J + integrate(g, chi_rho * phi) + 0.5 * integrate(g, np.einsum("...i,...i->...", grad, grad))
         - lam * np.log(integrate(g, e1) / integrate(g, e0)))
    # multipliers in the order: dilation (sum over j), then dipoles (i, j)
    area = params.surface.area
    coefs = np.concatenate([[corr.c0], corr.c])
    dW = ans.dW_singular(g.points) + _dpsi_on(ans, g)
    labels = [("dil", None)] + [(i, j) for j in range(config.m) for i in (1, 2)]
    h = 1e-4 * delta
    dE = 0.0
    for c, (i, j) in zip(coefs, labels):
        def lap(dd, i=i, j=j):
            p = params.with_delta(dd)
            if i == "dil":
                return sum(_lap_pz_pointwise(p, g.points, 0, jj, _dil_mass(p, jj) / area)
                           for jj in range(config.m))
            return _lap_pz_pointwise(p, g.points, i, j, 0.0)
        L0 = lap(delta)
        dL = (lap(delta + h) - lap(delta - h)) / (2 * h)
        dE -= c * (integrate(g, L0 * dW) - integrate(g, phi * dL))
    return ReducedEnergy(E, eW.J, E - eW.J, dE, corr)


def _dil_mass(params, j):
    from .ansatz import annulus_rule, dilation_profile
    cut = params.cutoff
    prof = dilation_profile(params.deltas[j], params.r0)
    rr, wr = annulus_rule(cut)
    return 2 * np.pi * float(np.sum(wr * rr * (2 * cut(rr, 1) * prof.deriv(rr)
                                               + prof.value(rr) * cut.laplacian(rr))))


def _dpsi_on(ans, grid):
    if grid is ans.grid:
        return ans.dpsi().values
    from .ansatz import project_profile, tail_profile_ddelta
    out = np.zeros(grid.shape)
    for c, dj in zip(ans.centers, ans.d):
        p = project_profile(grid, c, ans.cutoff, tail_profile_ddelta(dj, ans.cutoff.r0))
        out += dj / ans.params.delta * p.values
    return out


# -- critical pairs -------------------------------------------------------------------

@dataclass
class CriticalPair:
    lam: float
    delta: float
    config: object
    mu: float
    interval: tuple
    dE: float
    grad_xi: np.ndarray
    concave: bool
    delta_from_J: float
    history: list = field(default_factory=list)


def admissible_interval(lam, m, A, B):
    """[m0 / sqrt|log eps|, M] for mu = delta / sqrt(eps), eps = |lam - 8 pi m|.

    M = 2 / sqrt|B|; m0 = min(1, |A|^-1/2, sqrt(|log eps| / |B|) / 2) so the
    interval contains the leading-order root mu = 1 / sqrt|B| when A = 0.
    """
    eps = abs(lam - EIGHT_PI * m)
    if eps == 0:
        raise BracketError("lambda equals 8 pi m; no concentration scale")
    L = abs(np.log(eps))
    m0 = 1.0
    if abs(A) > 0:
        m0 = min(m0, abs(A) ** -0.5)
    if B != 0:
        m0 = min(m0, 0.5 * np.sqrt(L / abs(B)))
    M = 2.0 / np.sqrt(abs(B)) if B != 0 else 2.0
    return m0 / np.sqrt(L), M


def solve_critical_pair(lam, data, seed, r0=None, A=None, B=None, polish=True, xtol=1e-10,
                        max_newton=8, samples=5):
    """Critical pair (delta, xi) of the reduced energy near a critical point of phi_m.

    Stage one brackets the zero of f(mu) = delta dJ/d delta / (lam - 8 pi m)
    on the admissible interval using the ansatz energy. Stage two refines the
    concentration points by Newton on the xi-gradient, then the dilation by
    a secant iteration on dE/d delta with the projected correction included.
    """
    m = seed.m
    A = coeff_A(data, seed) if A is None else A
    B = coeff_B(data, seed) if B is None else B
    eps = abs(lam - EIGHT_PI * m)
    lo, hi = admissible_interval(lam, m, A, B)
    root = np.sqrt(eps)

    def f(mu, cfg):
        d = mu * root
        e = energy_of_ansatz(make_params(data, cfg, d, r0), lam, derivative=True, check=False)
        return d * e.dJ / (lam - EIGHT_PI * m)

    cfg = seed
    flo, fhi = f(lo, cfg), f(hi, cfg)
    if not (flo > 0 and fhi < 0):
        raise BracketError(f"f(mu) does not change sign on [{lo:.4g}, {hi:.4g}] "
                           f"(f = {flo:.4g}, {fhi:.4g}); lambda is on the wrong side of 8 pi m "
                           "for this critical point")
    mu = brentq(f, lo, hi, args=(cfg,), xtol=1e-12)
    # monotone decrease of f on the interval (uniqueness of the root)
    grid_mu = np.linspace(lo, hi, samples)
    fs = np.array([flo] + [f(x, cfg) for x in grid_mu[1:-1]] + [fhi])
    concave = bool(np.all(np.diff(fs) < 0))
    history = [("bracket", mu * root)]
    hess = -32 * np.pi**2 * hess_phi_m(data, cfg)
    for it in range(max_newton + 1):
        p = make_params(data, cfg, mu * root, r0)
        g = grad_xi_of_ansatz(p, lam)
        history.append(("xi", float(np.max(np.abs(g)))))
        if np.max(np.abs(g)) < 1e-8 * max(1.0, abs(lam)):
            break
        if it == max_newton:
            raise StaleSeedError(f"xi-Newton did not converge (|grad| = {np.max(np.abs(g)):.3e})")
        step = -np.linalg.solve(hess, g)
        cfg = cfg.moved(step.reshape(m, 2))
        mu = brentq(f, lo, hi, args=(cfg,), xtol=1e-12)
    delta_J = mu * root
    delta = delta_J
    dE = float("nan")
    if polish:
        d0, g0 = delta, reduced_E(lam, delta, data, cfg, r0).dE
        d1 = delta * (1 + 1e-3)
        g1 = reduced_E(lam, d1, data, cfg, r0).dE
        for _ in range(12):
            if g1 == g0:
                break
            d2 = d1 - g1 * (d1 - d0) / (g1 - g0)
            d0, g0 = d1, g1
            d1 = d2
            g1 = reduced_E(lam, d1, data, cfg, r0).dE
            history.append(("secant", d1, g1))
            if abs(d1 - d0) < xtol * d1:
                break
        delta, dE = d1, g1
    mu = delta / root
    if not lo <= mu <= hi:
        raise BracketError(f"refined mu = {mu:.4g} left the admissible interval")
    return CriticalPair(lam, delta, cfg, mu, (lo, hi), dE, g, concave, delta_J, history)
