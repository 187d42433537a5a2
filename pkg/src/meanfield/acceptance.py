"""The acceptance suite: one function per criterion, each returning a Verdict."""
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss

from .ansatz import (Ansatz, LinearizedOperator, kernel_elements, bubble_expansion_error, make_params,
                     near_kernel_spectrum, residual_report, solve_projected_correction, fine_grid)
from .chern_simons import build_condensate, verify_cs_expansion
from .energy import solve_critical_pair, verify_expansion
from .errors import BracketError
from .fitting import extrapolate_limit, fit_order
from .greens import evaluator
from .landscape import (EIGHT_PI, Configuration, SingularData, admissible_radius, check_admissible,
                        classify, coeff_A, coeff_A_identity, coeff_B, coeff_B_cutoff, coeff_Btilde,
                        find_critical_points, grad_phi_m, hess_phi_m, log_k_masked)
from .mfsolver import continue_in_lambda
from .config import preset
from .surface import Cutoff, FlatTorus, QuadratureGrid, RoundSphere, integrate


@dataclass
class Verdict:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0
    values: dict = field(default_factory=dict)

    def line(self):
        mark = "PASS" if self.passed else "FAIL"
        return f"[{mark}] {self.number:2d} {self.name}: {self.detail} ({self.seconds:.1f} s)"


def _rect():
    return preset("rect-torus-n2").data()


XI1 = (0.5, 0.0)
XI3 = (0.5, 0.75)


# -- 1, 2: Green functions ------------------------------------------------------------------

def _radial_panels(a, b, levels=40, order=16):
    """Gauss rule on (a, b) graded geometrically towards a = 0."""
    x, w = leggauss(order)
    if a == 0:
        edges = np.concatenate([[0.0], b * 0.5 ** np.arange(levels, -1, -1)])
    else:
        edges = np.array([a, b])
    ts, ws = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        ts.append(0.5 * (hi - lo) * x + 0.5 * (hi + lo))
        ws.append(0.5 * (hi - lo) * w)
    return np.concatenate(ts), np.concatenate(ws)


def torus_green_weak(torus, xi, test, n_grid=256, n_theta=64):
    """int G(x, xi) test(x) dx with the logarithm integrated in polar coordinates.

    G = H_chi - chi(r) log r / (2 pi), where H_chi is smooth and periodic
    (integrated on a uniform grid) and the second part lives on a disk.
    """
    G = evaluator(torus)
    cut = Cutoff(torus.max_chart_radius)
    grid = QuadratureGrid(torus, n_grid)
    smooth = integrate(grid, G.regular_part(grid.points, xi, cut) * test(grid.points))
    r1, w1 = _radial_panels(0.0, cut.r0)
    r2, w2 = _radial_panels(cut.r0, 2 * cut.r0, order=48)
    r = np.concatenate([r1, r2])
    w = np.concatenate([w1, w2])
    th = 2 * np.pi * np.arange(n_theta) / n_theta
    R, TH = np.meshgrid(r, th, indexing="ij")
    pts = np.asarray(xi) + np.stack([R * np.cos(TH), R * np.sin(TH)], axis=-1)
    vals = test(torus.canonical(pts.reshape(-1, 2))).reshape(R.shape)
    ang = vals.mean(axis=1) * 2 * np.pi
    sing = -np.sum(w * cut(r) * r * np.log(r) * ang) / (2 * np.pi)
    return smooth + sing


def criterion_1(seed=0):
    rng = np.random.default_rng(seed)
    worst_sym = worst_mean = worst_pde = 0.0
    for torus in (FlatTorus.rectangle(1, 1), FlatTorus.rectangle(1, 1.5),
                  FlatTorus([[1.0, 0.0], [0.3, 0.9]])):
        G = evaluator(torus)
        x = torus.random_points(rng, 100)
        y = torus.random_points(rng, 100)
        keep = torus.distance(x, y) > 1e-3
        worst_sym = max(worst_sym, float(np.max(np.abs(G.green(x[keep], y[keep]) - G.green(y[keep], x[keep])))))
        xi = torus.random_points(rng, 1)[0]
        worst_mean = max(worst_mean, abs(torus_green_weak(torus, xi, lambda p: np.ones(p.shape[:-1]))))
        dual = torus.dual
        for _ in range(20 // 3 + 1):
            k = rng.integers(-3, 4, size=2)
            if not k.any():
                k = np.array([1, 0])
            q = 2 * np.pi * (k[0] * dual[0] + k[1] * dual[1])
            ph = rng.uniform(0, 2 * np.pi)
            psi = lambda p, q=q, ph=ph: np.cos(p @ q + ph)
            lap_neg = lambda p, q=q, ph=ph: (q @ q) * np.cos(p @ q + ph)
            got = torus_green_weak(torus, xi, lap_neg)
            worst_pde = max(worst_pde, abs(got - psi(xi)))
    ok = worst_sym <= 1e-10 and worst_mean <= 1e-10 and worst_pde <= 1e-8
    detail = f"symmetry {worst_sym:.1e}, |int G| {worst_mean:.1e}, PDE residual {worst_pde:.1e}"
    return ok, detail, dict(symmetry=worst_sym, mean=worst_mean, pde=worst_pde)


def _harmonic_tests():
    """Degree-l harmonic polynomials in R^3 and l; on the sphere -Lap Y = l(l+1) Y."""
    return [
        (lambda p: p[..., 2], 1),
        (lambda p: p[..., 0] * p[..., 1], 2),
        (lambda p: p[..., 0] ** 2 - p[..., 1] ** 2, 2),
        (lambda p: p[..., 0] ** 2 + p[..., 1] ** 2 - 2 * p[..., 2] ** 2, 2),
        (lambda p: p[..., 0] * p[..., 1] * p[..., 2], 3),
        (lambda p: p[..., 0] ** 3 - 3 * p[..., 0] * p[..., 1] ** 2, 3),
        (lambda p: p[..., 2] * (2 * p[..., 2] ** 2 - 3 * p[..., 0] ** 2 - 3 * p[..., 1] ** 2), 3),
    ]


def sphere_green_weak(sphere, xi, test, n_phi=64):
    """int G(x, xi) test(x) dA in polar angles about xi."""
    G = evaluator(sphere)
    xi = np.asarray(xi, dtype=float)
    a = np.array([1.0, 0, 0]) if abs(xi[0]) < 0.9 else np.array([0, 1.0, 0])
    e1 = a - (a @ xi) * xi
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(xi, e1)
    t1, w1 = _radial_panels(0.0, np.pi / 2, levels=30)
    t2, w2 = _radial_panels(np.pi / 2, np.pi, order=48)
    t = np.concatenate([t1, t2])
    w = np.concatenate([w1, w2])
    ph = 2 * np.pi * np.arange(n_phi) / n_phi
    T, P = np.meshgrid(t, ph, indexing="ij")
    pts = (np.cos(T)[..., None] * xi + (np.sin(T) * np.cos(P))[..., None] * e1
           + (np.sin(T) * np.sin(P))[..., None] * e2)
    vals = test(pts).mean(axis=1) * 2 * np.pi
    g = G.green(pts[:, 0], xi)
    return float(np.sum(w * np.sin(t) * g * vals))


def criterion_2(seed=0):
    rng = np.random.default_rng(seed)
    S = RoundSphere()
    G = evaluator(S)
    worst = 0.0
    for f, l in _harmonic_tests():
        for xi in S.random_points(rng, 3):
            got = sphere_green_weak(S, xi, lambda p: l * (l + 1) * f(p))
            worst = max(worst, abs(got - float(f(xi))))
    xis = S.random_points(rng, 20)
    rob = []
    for xi in xis:
        v = rng.normal(size=3)
        v -= (v @ xi) * xi
        x = xi * np.cos(1e-7) + v / np.linalg.norm(v) * np.sin(1e-7)
        rob.append(float(G.regular_part(x[None], xi)[0]))
    spread = float(np.ptp(rob))
    ok = worst <= 1e-6 and spread <= 1e-8
    return ok, f"weak identity {worst:.1e}, robin spread {spread:.1e}", dict(weak=worst, spread=spread)


# -- 3, 4, 5: landscape ---------------------------------------------------------------------

def _random_admissible(data, m, rng, min_dist=0.15):
    s = data.surface
    while True:
        pts = s.random_points(rng, m)
        c = Configuration(s, pts)
        if c.m > 1 and c.min_separation() < min_dist:
            continue
        if any(np.any(s.distance(pts, p) < min_dist) for p in data.sources):
            continue
        return c


def criterion_3(seed=0, count=20):
    rng = np.random.default_rng(seed)
    T = FlatTorus.rectangle(1, 1.5)
    cases = [(SingularData(T, [[0, 0]], [2]), 1),
             (SingularData(T, [[0, 0], [0.5, 0.75]], [3, 1]), 2)]
    worst = 0.0
    for data, m in cases:
        for _ in range(count):
            c = _random_admissible(data, m, rng)
            A = coeff_A(data, c)
            worst = max(worst, abs(A - coeff_A_identity(data, c)) / (1 + abs(A)))
    return worst <= 1e-8, f"max relative gap {worst:.1e}", dict(gap=worst)


def criterion_4():
    data = _rect()
    worst_r = worst_c = 0.0
    for xi in (XI1, XI3, (0.3, 0.6)):
        c = Configuration(data.surface, [xi])
        r0 = admissible_radius(data, c)
        B1 = coeff_B(data, c)
        B2 = coeff_B(data, c, r=r0 / 2)
        worst_r = max(worst_r, abs(B1 - B2) / (1 + abs(B1)))
        Bs = coeff_B_cutoff(data, c, Cutoff(r0 / 2, "smooth"))
        Bq = coeff_B_cutoff(data, c, Cutoff(r0 / 2, "quintic"))
        worst_c = max(worst_c, abs(Bs - Bq) / (1 + abs(B1)))
    ok = worst_r <= 1e-6 and worst_c <= 1e-6
    return ok, f"radius change {worst_r:.1e}, profile change {worst_c:.1e}", dict(radius=worst_r,
                                                                                    profile=worst_c)


def brute_force_critical_points(data, n=512):
    """Critical points of phi_1 from a uniform grid: cells where the discrete
    gradient is locally smallest, refined by one Newton step on the local
    quadratic model."""
    s = data.surface
    grid = QuadratureGrid(s, n)
    f = log_k_masked(data, grid.points)
    h1 = s.periods[0] / grid.shape[0]
    h2 = s.periods[1] / grid.shape[1]
    step = np.array([np.linalg.norm(h1), np.linalg.norm(h2)])
    f = np.where(np.isfinite(f), f, np.nan)
    fx = (np.roll(f, -1, 0) - np.roll(f, 1, 0)) / (2 * step[0])
    fy = (np.roll(f, -1, 1) - np.roll(f, 1, 1)) / (2 * step[1])
    fxx = (np.roll(f, -1, 0) - 2 * f + np.roll(f, 1, 0)) / step[0] ** 2
    fyy = (np.roll(f, -1, 1) - 2 * f + np.roll(f, 1, 1)) / step[1] ** 2
    fxy = (np.roll(np.roll(f, -1, 0), -1, 1) - np.roll(np.roll(f, -1, 0), 1, 1)
           - np.roll(np.roll(f, 1, 0), -1, 1) + np.roll(np.roll(f, 1, 0), 1, 1)) / (4 * step[0] * step[1])
    g = np.hypot(fx, fy)
    scale = np.hypot(np.abs(fxx) * step[0], np.abs(fyy) * step[1])
    g = np.where(np.isfinite(g), g, np.inf)
    is_min = g <= 2 * scale
    for s1 in (-1, 0, 1):
        for s2 in (-1, 0, 1):
            if s1 or s2:
                is_min &= g <= np.roll(np.roll(g, s1, 0), s2, 1)
    out = []
    for i, j in np.argwhere(is_min):
        H = np.array([[fxx[i, j], fxy[i, j]], [fxy[i, j], fyy[i, j]]])
        d = -np.linalg.solve(H, [fx[i, j], fy[i, j]])
        if np.all(np.abs(d) <= step):
            out.append(s.canonical(grid.points[i, j] + d))
    return np.array(out)


def criterion_5():
    data = _rect()
    s = data.surface
    found = find_critical_points(data, 1)
    pts = np.array([c.points[0] for c, _ in found])
    cls = [r.classification for _, r in found]
    Bs = [r.B for _, r in found]
    oracle = brute_force_critical_points(data)
    expected = {(0.5, 0.0): ("saddle", 1), (0.0, 0.75): ("saddle", 1), (0.5, 0.75): ("max", -1)}
    ok = len(found) == 3 and len(oracle) == 3
    match = np.inf
    if ok:
        match = max(float(np.min(s.distance(oracle, p))) for p in pts)
        ok = match <= 1e-4
        for p, c, B in zip(pts, cls, Bs):
            key = min(expected, key=lambda e: float(s.distance(p, np.array(e))))
            want_c, want_sign = expected[key]
            ok &= float(s.distance(p, np.array(key))) < 1e-8 and c == want_c and np.sign(B) == want_sign
    rows = ", ".join(f"({p[0]:.3f}, {p[1]:.3f}) {c} B={B:.3f}" for p, c, B in zip(pts, cls, Bs))
    return ok, f"{len(found)} points: {rows}; oracle match {match:.1e}", dict(match=match)


# -- 6 to 11: ansatz, energy, linear theory --------------------------------------------------

EXPANSION_DELTAS = (0.08, 0.057, 0.04, 0.028, 0.02)


def criterion_6():
    data = _rect()
    c = Configuration(data.surface, [XI3])
    errs = [bubble_expansion_error(make_params(data, c, d)) for d in EXPANSION_DELTAS]
    full = [e.full for e in errs]
    far = [e.far for e in errs]
    p_full, _ = fit_order(EXPANSION_DELTAS, full)
    p_far, _ = fit_order(EXPANSION_DELTAS, far)
    ok = p_full >= 3.5
    return ok, f"full-expansion order {p_full:.2f}, far-field order {p_far:.2f}", dict(order=p_full,
                                                                                       far=p_far)


def criterion_7(sigma=0.5):
    data = _rect()
    c = Configuration(data.surface, [XI3])
    star = [residual_report(make_params(data, c, d), EIGHT_PI, sigma).star for d in EXPANSION_DELTAS]
    p_crit, _ = fit_order(EXPANSION_DELTAS, star)
    ds = (0.04, 0.03, 0.02, 0.015)
    orders, coefs, coefs_global = [], [], []
    for xi in ((0.3, 0.6), (0.2, 0.3)):
        cg = Configuration(data.surface, [xi])
        gn = float(np.linalg.norm(grad_phi_m(data, cg)))
        vals, widths = [], []
        for d in ds:
            p = make_params(data, cg, d)
            vals.append(residual_report(p, EIGHT_PI, sigma).star)
            widths.append(p.deltas[0])
        orders.append(fit_order(ds, vals)[0])
        coefs.append(float(np.mean(np.array(vals) / (np.array(widths) * gn))))
        coefs_global.append(float(np.mean(np.array(vals) / (np.array(ds) * gn))))
    spread = max(coefs) / min(coefs)
    ok = p_crit >= 2 - sigma - 0.1 and min(orders) >= 0.9 and spread <= 2.0
    detail = (f"order at critical point {p_crit:.2f}; generic orders {orders[0]:.2f}, {orders[1]:.2f}; "
              f"coefficient ratio {spread:.2f} per bubble width "
              f"({max(coefs_global) / min(coefs_global):.2f} per global delta)")
    return ok, detail, dict(order=p_crit, generic=orders, ratio=spread)


SWEEP = (0.08, 0.057, 0.04, 0.028, 0.02, 0.014, 0.01)


def criterion_8():
    data = _rect()
    c = Configuration(data.surface, [XI3])
    A, B = coeff_A(data, c), coeff_B(data, c)
    r = verify_expansion(EIGHT_PI, data, c, SWEEP, A=A, B=B, derivatives=("delta", "delta2"))
    target = 3 * A - 2 * B
    ok = (abs(r.A_fit - A) <= 5e-3 * (1 + abs(A)) and abs(r.B_fit - B) <= 0.02 * abs(B)
          and r.J_order >= 2.0 and abs(r.ddJ_limit - target) <= 0.03 * abs(target))
    detail = (f"A_fit {r.A_fit:.2e} (A {A:.2e}), B_fit {r.B_fit:.4f} (B {B:.4f}), remainder order "
              f"{r.J_order:.2f}, ddJ limit {r.ddJ_limit:.4f} vs 3A-2B {target:.4f}")
    return ok, detail, dict(A_fit=r.A_fit, B_fit=r.B_fit, order=r.J_order, limit=r.ddJ_limit)


def criterion_9():
    data = _rect()
    orders = []
    for xi in ((0.3, 0.6), (0.2, 0.3)):
        c = Configuration(data.surface, [xi])
        r = verify_expansion(EIGHT_PI, data, c, SWEEP, derivatives=("xi",))
        orders.append(r.grad_xi_order)
    ok = min(orders) >= 1.8
    return ok, "orders " + ", ".join(f"{o:.2f}" for o in orders), dict(orders=orders)


def square_two_point(h_value=10.0):
    T = FlatTorus.rectangle(1, 1)
    data = SingularData(T, h=lambda x: np.full(np.shape(x)[:-1], h_value), name="square-k10")
    return data, Configuration(T, [(0.0, 0.0), (0.5, 0.5)])


def criterion_10():
    data = _rect()
    c3 = Configuration(data.surface, [XI3])
    d2, c2 = square_two_point()
    gaps = []
    for dat, cfg in ((data, c3), (d2, c2)):
        m = cfg.m
        p = make_params(dat, cfg, 0.05)
        mu = near_kernel_spectrum(LinearizedOperator(p, EIGHT_PI * m, ansatz=Ansatz(p)))
        gaps.append(float(mu[2 * m] / mu[2 * m + 1]))
    prods = []
    for d in SWEEP:
        p = make_params(data, c3, d)
        a = Ansatz(p)
        op = LinearizedOperator(p, EIGHT_PI, ansatz=a)
        mu = near_kernel_spectrum(op, kernel_elements(p, op.grid, a), k=3)
        prods.append(float(mu[0] * abs(np.log(d))))
    bracket = max(prods) / min(prods)
    # 2m + 1 small eigenvalues: the (2m+1)-th is below a tenth of the next
    ok = max(gaps) < 0.1 and bracket <= 3.0
    detail = (f"eigenvalue 2m+1 over 2m+2: {gaps[0]:.3f} (m=1), {gaps[1]:.3f} (m=2); projected "
              f"mu |log delta| from {prods[0]:.2f} to {prods[-1]:.2f}, bracket {bracket:.2f}")
    return ok, detail, dict(gaps=gaps, bracket=bracket)


def criterion_11(sigma=0.5):
    data = _rect()
    c = Configuration(data.surface, [XI3])
    ds = (0.08, 0.057, 0.04, 0.028, 0.02)
    sup, orth = [], 0.0
    for d in ds:
        r = solve_projected_correction(make_params(data, c, d), EIGHT_PI)
        sup.append(float(np.max(np.abs(r.phi.values))))
        orth = max(orth, float(np.max(np.abs(r.orthogonality))))
    p, _ = fit_order(ds, sup)
    ok = p >= 2 - sigma - 0.2 and orth <= 1e-9
    return ok, f"order {p:.2f}, orthogonality {orth:.1e}", dict(order=p, orthogonality=orth)


# -- 12, 13: nonlinear solutions -------------------------------------------------------------

def criterion_12(verbose=False):
    data = _rect()
    s = data.surface
    c1 = Configuration(s, [XI1])
    lam0, lam1 = EIGHT_PI + 0.05, EIGHT_PI + 0.005
    B = coeff_B(data, c1)
    pair = solve_critical_pair(lam0, data, c1, B=B, polish=False)
    p = make_params(data, c1, pair.delta)
    W = Ansatz(p).field(fine_grid(p, 3.0))
    br = continue_in_lambda(data, W, [lam0, lam1], verbose=verbose)
    end = br.results[-1]
    peak = end.peaks[0]
    mass = peak.masses[0.1]
    dist = float(s.distance(peak.location, np.array(XI1)))
    c3 = Configuration(s, [XI3])
    try:
        solve_critical_pair(lam0, data, c3)
        wrong = False
    except BracketError:
        wrong = True
    ok = mass >= 0.95 * EIGHT_PI and dist <= 0.02 and end.residual <= 1e-10 and wrong
    detail = (f"{len(br.results)} solutions, endpoint mass {mass:.3f} (>= {0.95 * EIGHT_PI:.3f}), "
              f"peak offset {dist:.1e}, residual {end.residual:.1e}, "
              f"wrong-sign run {'raises BracketError' if wrong else 'did not fail'}")
    return ok, detail, dict(mass=mass, offset=dist, residual=end.residual, wrong_sign=wrong)


CS_EPS = (1e-3, 5e-4, 2.5e-4)


def criterion_13(verbose=False):
    data = _rect()
    c3 = Configuration(data.surface, [XI3])
    B = coeff_B(data, c3)
    Bt = coeff_Btilde(data, c3)
    rep = verify_cs_expansion(data, c3, np.geomspace(0.02, 0.002, 7), B=B, A=0.0, derivative=False)
    conds = [build_condensate(e, data, c3, B=B, verbose=verbose) for e in CS_EPS]
    masses = np.array([cd.masses[0.1] for cd in conds])
    limit = extrapolate_limit(CS_EPS, masses, rate=1.0)
    slope = float(np.polyfit(np.log(CS_EPS), np.log([cd.delta_fit for cd in conds]), 1)[0])
    ident = max(cd.state.identity_residual for cd in conds)
    ok = (rep.C_order >= 1.8 and rep.order >= 2.0 and abs(limit - EIGHT_PI) <= 0.5
          and abs(slope - 0.5) <= 0.05 and ident <= 1e-10
          and abs(rep.Btilde_fit - Bt) <= 0.02 * Bt)
    detail = (f"C ratio order {rep.C_order:.2f}, remainder order {rep.order:.2f}, "
              f"B~ fit {rep.Btilde_fit:.2f} vs {Bt:.2f}; masses "
              + ", ".join(f"{m_:.3f}" for m_ in masses)
              + f" -> limit {limit:.3f} (8 pi = {EIGHT_PI:.3f}); delta slope {slope:.3f}; "
              f"identity residual {ident:.1e}")
    return ok, detail, dict(C_order=rep.C_order, order=rep.order, masses=masses.tolist(),
                            limit=limit, slope=slope, identity=ident)


CRITERIA = {
    1: ("torus Green function exactness", criterion_1),
    2: ("sphere Green function exactness", criterion_2),
    3: ("flat-torus A identity", criterion_3),
    4: ("B independent of radius and cutoff", criterion_4),
    5: ("rectangular-torus landscape", criterion_5),
    6: ("projected bubble expansion order", criterion_6),
    7: ("ansatz residual in the star norm", criterion_7),
    8: ("energy expansion coefficients", criterion_8),
    9: ("xi-gradient of the energy", criterion_9),
    10: ("near-kernel spectrum", criterion_10),
    11: ("correction size and orthogonality", criterion_11),
    12: ("concentration along lambda continuation", criterion_12),
    13: ("Chern-Simons condensates", criterion_13),
}


def run(number, **kw):
    name, fn = CRITERIA[number]
    t = time.time()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ok, detail, values = fn(**kw)
    return Verdict(number, name, bool(ok), detail, time.time() - t, values)


def run_all(numbers=None, echo=None):
    out = []
    for n in numbers or sorted(CRITERIA):
        v = run(n)
        if echo:
            echo(v.line())
        out.append(v)
    return out
