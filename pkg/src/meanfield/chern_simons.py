"""Chern-Simons vortex condensates through the mean-field reduction.

A doubly periodic solution w of the self-dual equation is written as
w = u + c with u of zero mean. Integrating the equation fixes c in terms of
u; the non-topological branch c_-(u) turns the problem into a perturbed
mean-field equation for u with lam = 4 pi N.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .ansatz import Ansatz, fine_grid, make_params
from .energy import J_lambda
from .errors import BracketError, ConfigError, InadmissibleError, InsufficientDataError
from .fitting import fit_order
from .landscape import (EIGHT_PI, FOUR_PI, coeff_A, coeff_B, coeff_Btilde, log_k_masked, phi_m,
                        rho_at_centers)
from .mfsolver import Problem, find_peaks, fit_bubble, newton
from .surface import Field, integrate


def _check_even(data, m=None):
    N = data.N
    if abs(N - round(N)) > 1e-12 or round(N) % 2:
        raise ConfigError(f"the total multiplicity N = {N:g} must be an even integer")
    if m is not None and 2 * m != round(N):
        raise ConfigError(f"m = {m} does not equal N / 2 = {N / 2:g}")
    return int(round(N))


def C_value(N, I1, I2):
    """C = 16 pi N int k^2 e^{2u} / (int k e^u)^2."""
    return 16 * np.pi * N * I2 / I1**2


def exp_c_minus(N, eps, I1, I2):
    """e^{c_-} = 8 pi N eps^2 / (I1 (1 + sqrt(1 - eps^2 C)))."""
    x = eps * eps * C_value(N, I1, I2)
    if x > 1:
        raise InadmissibleError(f"eps^2 C(u) = {x:.6g} exceeds 1; u is outside the admissible set")
    return 8 * np.pi * N * eps * eps / (I1 * (1 + np.sqrt(1 - x)))


def _grid_integrals(data, u):
    g = u.grid
    e = np.exp(log_k_masked(data, g.points) + u.values)
    return integrate(g, e), integrate(g, e * e)


def C_of(u, data):
    I1, I2 = _grid_integrals(data, u)
    if not I1 > 0:
        raise InadmissibleError("int k e^u must be positive")
    return C_value(data.N, I1, I2)


def c_minus(u, data, eps):
    I1, I2 = _grid_integrals(data, u)
    return float(np.log(exp_c_minus(data.N, eps, I1, I2)))


def identity_residual(N, eps, I1, I2, ec):
    """Relative defect of e^c int k e^u - e^{2c} int k^2 e^{2u} = 4 pi N eps^2."""
    target = FOUR_PI * N * eps * eps
    return abs(ec * I1 - ec * ec * I2 - target) / target


def I_eps_parts(J, N, eps, C):
    """I_eps without the term |T| / (2 eps^2), which is returned separately.

    Keeping the large constant apart avoids cancellation when I_eps is
    compared with its small-delta expansion.
    """
    x = eps * eps * C
    if x > 1:
        raise InadmissibleError(f"eps^2 C = {x:.6g} exceeds 1")
    s = np.sqrt(1 - x)
    rest = (J - FOUR_PI * N * np.log1p(s) - FOUR_PI * N / (1 + s)
            + FOUR_PI * N * np.log(8 * np.pi * N * eps * eps) - 2 * np.pi * N)
    return rest


def I_eps(u, data, eps):
    """I_eps(u) = J_{4 pi N}(u) - 4 pi N log(1 + s) - 4 pi N / (1 + s)
    + 4 pi N log(8 pi N eps^2) + |T| / (2 eps^2) - 2 pi N, with s = sqrt(1 - eps^2 C(u))."""
    N = data.N
    J = J_lambda(FOUR_PI * N, u, data)
    return I_eps_parts(J, N, eps, C_of(u, data)) + data.surface.area / (2 * eps * eps)


def small_eps_constant(N, eps, area):
    """Limit of I_eps(u) - J_{4 pi N}(u) as eps -> 0 at fixed u."""
    return FOUR_PI * N * np.log(8 * np.pi * N * eps * eps) + area / (2 * eps * eps) - FOUR_PI * N \
        - FOUR_PI * N * np.log(2)


# -- the ansatz ---------------------------------------------------------------------------

@dataclass
class CSAnsatzValues:
    rest: float     # I_eps(W) - |T| / (2 eps^2)
    C: float
    dI: float = None


def cs_energy_of_ansatz(params, eps, derivative=False, ansatz=None):
    """I_eps(W) (without |T| / 2 eps^2) and optionally its delta-derivative, by patch quadrature."""
    N = params.data.N
    lam = FOUR_PI * N
    ans = ansatz or Ansatz(params)
    I = ans.integrals(derivative=derivative, square=True)
    J = 0.5 * I["grad2"] - lam * np.log(I["kW"])
    C = C_value(N, I["kW"], I["k2W"])
    rest = I_eps_parts(J, N, eps, C)
    out = CSAnsatzValues(rest, C)
    if derivative:
        dJ = I["d_grad2"] - lam * I["d_kW"] / I["kW"]
        dC = 16 * np.pi * N * (I["d_k2W"] / I["kW"] ** 2 - 2 * I["k2W"] * I["d_kW"] / I["kW"] ** 3)
        s = np.sqrt(1 - eps * eps * C)
        out.dI = dJ + 2 * np.pi * N * eps * eps * dC / (1 + s) ** 2
    return out


def cs_expansion_rest(m, phi, A, B, Bt, eps, delta):
    """Small-delta expansion of I_eps(W) - |T| / (2 eps^2).

    """
    return (-16 * np.pi * m + EIGHT_PI * m * np.log(8 * eps * eps) - 32 * np.pi**2 * phi
            + A * delta**2 * np.log(delta) - B * delta**2 + Bt * eps**2 / delta**2)


def eps_rule(rule):
    if callable(rule):
        return rule
    c = float(rule)
    return lambda d: c * d * d


@dataclass
class CSExpansionReport:
    deltas: np.ndarray
    eps: np.ndarray
    I_rest: np.ndarray
    theory: np.ndarray
    residual: np.ndarray
    order: float
    C_ratio: np.ndarray
    C_order: float
    admissible: np.ndarray
    A: float
    B: float
    Btilde: float
    phi: float
    A_fit: float = None
    B_fit: float = None
    Btilde_fit: float = None
    dI: np.ndarray = None
    dI_theory: np.ndarray = None
    dI_order: float = None

    def rows(self):
        out = []
        for i, d in enumerate(self.deltas):
            out.append({"delta": d, "eps": self.eps[i], "I_minus_area_term": self.I_rest[i],
                        "theory": self.theory[i], "residual": self.residual[i],
                        "C_ratio": self.C_ratio[i]})
        return out


def verify_cs_expansion(data, config, deltas, rule=1.0, second_rule=0.5, r0=None, A=None, B=None,
                        derivative=True):
    """Compare I_eps(W) with its small-delta expansion along eps = rule(delta).

    ``second_rule`` adds a sweep along a second eps rule so that B-tilde can
    be extracted by regression on eps^2 / delta^2.
    """
    deltas = np.asarray(sorted(deltas, reverse=True), dtype=float)
    if len(deltas) < 4:
        raise InsufficientDataError("an expansion sweep needs at least 4 values of delta")
    m = config.m
    N = _check_even(data, m)
    f1 = eps_rule(rule)
    phi = phi_m(data, config)
    A = coeff_A(data, config) if A is None else A
    B = coeff_B(data, config) if B is None else B
    Bt = coeff_Btilde(data, config)
    rest, Cs, ok, dI, dI_t, epss = [], [], [], [], [], []
    rest2 = []
    for d in deltas:
        p = make_params(data, config, d, r0)
        ans = Ansatz(p)
        eps = f1(d)
        epss.append(eps)
        try:
            v = cs_energy_of_ansatz(p, eps, derivative=derivative, ansatz=ans)
        except InadmissibleError:
            ok.append(False)
            rest.append(np.nan)
            Cs.append(np.nan)
            dI.append(np.nan)
            dI_t.append(np.nan)
            rest2.append(np.nan)
            continue
        ok.append(True)
        rest.append(v.rest)
        Cs.append(v.C)
        if derivative:
            dI.append(v.dI)
            dI_t.append(2 * A * d * np.log(d) + (A - 2 * B) * d - 2 * Bt * eps**2 / d**3)
        if second_rule is not None:
            e2 = eps_rule(second_rule)(d)
            try:
                rest2.append(cs_energy_of_ansatz(p, e2, ansatz=ans).rest)
            except InadmissibleError:
                rest2.append(np.nan)
    ok = np.array(ok)
    deltas_ok = deltas[ok]
    epss = np.array(epss)
    rest = np.array(rest)
    theory = np.array([cs_expansion_rest(m, phi, A, B, Bt, e, d) for e, d in zip(epss, deltas)])
    res = rest - theory
    C_ratio = np.array(Cs) * np.pi * m * deltas**2 / Bt
    rep = CSExpansionReport(deltas, epss, rest, theory, res, fit_order(deltas_ok, res[ok])[0],
                            C_ratio, fit_order(deltas_ok, (C_ratio - 1)[ok], log_power=1.0)[0],
                            ok, A, B, Bt, phi)
    # A from what is left after removing the eps-dependent terms; the square
    # root in I_eps contributes (eps^2 C)^2 and (eps^2 C)^3 corrections
    y = (rest - np.array([cs_expansion_rest(m, phi, 0.0, 0.0, Bt, e, d)
                          for e, d in zip(epss, deltas)])) / deltas**2
    d = deltas
    X = np.stack([np.log(d), -np.ones_like(d), epss**4 / d**6, d**2 * np.log(d), epss**6 / d**8], axis=1)
    (rep.A_fit, rep.B_fit, *_), *_ = np.linalg.lstsq(X[ok][:, :min(5, ok.sum() - 1)], y[ok], rcond=None)
    if second_rule is not None:
        e2 = np.array([eps_rule(second_rule)(d) for d in deltas])
        diff = rest - np.array(rest2)
        # the eps-independent parts cancel except for the log term
        diff -= EIGHT_PI * m * np.log(epss**2 / e2**2)
        x = (epss**2 - e2**2) / deltas**2
        good = np.isfinite(diff)
        # next corrections: eps^4 / delta^4 and the O(delta^2 |log delta|) drift of C(W)
        X = np.stack([x, x * deltas**2 * np.log(deltas), (epss**4 - e2**4) / deltas**4], axis=1)
        coef, *_ = np.linalg.lstsq(X[good], diff[good], rcond=None)
        rep.Btilde_fit = float(coef[0])
    if derivative:
        rep.dI = np.array(dI)
        rep.dI_theory = np.array(dI_t)
        rep.dI_order = fit_order(deltas_ok, (rep.dI - rep.dI_theory)[ok])[0]
    return rep


# -- condensates ----------------------------------------------------------------------------

def cs_nonlinearity(data, eps):
    """Measure term of the reduced Chern-Simons equation, with a complex-step derivative.

    Every term is invariant under u -> u + const, so u is shifted by its
    maximum before exponentiating.
    """
    N = data.N
    a = 16 * np.pi * N * eps * eps

    def density(u, prob):
        w = prob.grid.weights
        shift = float(np.max(prob.logk + u))

        def rho_of(v):
            e = np.exp(prob.logk + v - shift)
            e2 = e * e
            I1, I2 = np.sum(w * e), np.sum(w * e2)
            disc = I1 * I1 - a * I2
            if np.real(disc) < 0:
                raise InadmissibleError("the iterate left the admissible set eps^2 C(u) <= 1")
            Q = 4 * np.pi * N * a * I2 / (I1 + np.sqrt(disc)) ** 2
            K1 = e / I1
            return FOUR_PI * N * K1 + Q * (K1 - e2 / I2)

        h = 1e-30

        def deriv(v):
            return np.imag(rho_of(u + 1j * h * v)) / h

        return rho_of(u), deriv

    return density


def _admissible(data, eps, u):
    try:
        c_minus(u, data, eps)
    except InadmissibleError:
        return False
    return True


@dataclass
class CSState:
    eps: float
    u: Field
    c: float
    w: Field
    C: float
    identity_residual: float


@dataclass
class Condensate:
    state: CSState
    delta_reduced: float
    delta_fit: float
    center: np.ndarray
    masses: dict
    total_mass: float
    sup_kew: float
    residual: float
    iterations: int
    B: float
    Btilde: float
    extra: dict = field(default_factory=dict)


def reduced_delta(data, config, eps, B, Bt, r0=None, span=2.0):
    """Zero of d I_eps(W) / d delta near sqrt(eps) (Btilde / |B|)^(1/4)."""
    guess = np.sqrt(eps) * (Bt / abs(B)) ** 0.25

    def f(d):
        return cs_energy_of_ansatz(make_params(data, config, d, r0), eps, derivative=True).dI

    lo, hi = guess / span, guess * span
    flo, fhi = f(lo), f(hi)
    if not flo * fhi < 0:
        raise BracketError(f"d I_eps / d delta has no sign change on [{lo:.4g}, {hi:.4g}]")
    return brentq(f, lo, hi, xtol=1e-12 * guess)


def build_condensate(eps, data, seed, r0=None, B=None, radii=(0.1,), tol=1e-10,
                     points_per_width=3.0, verbose=False):
    """Non-topological condensate concentrating at the critical point ``seed`` (B < 0)."""
    m = seed.m
    N = _check_even(data, m)
    B = coeff_B(data, seed) if B is None else B
    if B >= 0:
        raise ConfigError(f"B = {B:.4g} >= 0 at the seed; the construction needs B < 0")
    Bt = coeff_Btilde(data, seed)
    delta = reduced_delta(data, seed, eps, B, Bt, r0)
    params = make_params(data, seed, delta, r0)
    grid = fine_grid(params, points_per_width)
    W = Ansatz(params).field(grid)
    if not _admissible(data, eps, W):
        raise InadmissibleError("the ansatz is outside the admissible set for this eps")
    prob = Problem(data, grid, FOUR_PI * N, cs_nonlinearity(data, eps))
    u, res, it = newton(prob, W.values, tol, verbose=verbose)
    uf = Field(grid, u)
    I1, I2 = _grid_integrals(data, uf)
    ec = exp_c_minus(N, eps, I1, I2)
    c = float(np.log(ec))
    w = Field(grid, u + c)
    ke = np.exp(log_k_masked(data, grid.points) + w.values)
    measure = ke * (1 - ke) / eps**2
    state = CSState(eps, uf, c, w, C_value(N, I1, I2), identity_residual(N, eps, I1, I2, ec))
    peaks = find_peaks(prob, u, radii)
    center = peaks[0].location if peaks else seed.points[0]
    fit = fit_bubble(prob, u, center)
    dist = grid.surface.distance(grid.points, fit.center)
    masses = {r: integrate(grid, np.where(dist < r, measure, 0.0)) for r in radii}
    rho = rho_at_centers(data, seed)
    return Condensate(state, delta, float(fit.delta / np.sqrt(rho[0])), fit.center, masses,
                      integrate(grid, measure), float(np.max(ke)), res, it, B, Bt)
