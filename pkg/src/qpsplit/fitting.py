"""Least-squares fits of the Rabi and circuit models to extracted branches."""

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .circuit import BasisSpec, CircuitParams, omega20, transitions_at
from .errors import InvalidParametersError, QpsplitError
from .rabi import RabiParams, converged_fock, level_traces

log = logging.getLogger(__name__)

RABI_PAIRS = {"w10": (0, 1), "w20": (0, 2), "w31": (1, 3)}


# ---------------------------------------------------------------------------
# bounded Levenberg-Marquardt
# ---------------------------------------------------------------------------


@dataclass
class LMResult:
    x: np.ndarray
    cost: float
    residuals: np.ndarray
    jac: np.ndarray
    n_iter: int
    converged: bool
    history: list
    message: str = ""


def _jacobian(fun, x, r0, lower, upper, scale, step):
    jac = np.empty((r0.size, x.size))
    for i in range(x.size):
        h = step * max(abs(x[i]), scale[i])
        if x[i] + h > upper[i]:
            h = -h
        xp = x.copy()
        xp[i] += h
        try:
            jac[:, i] = (fun(xp) - r0) / h
        except QpsplitError:
            # the model failed on one side; difference towards the other
            if x[i] - h < lower[i] or x[i] - h > upper[i]:
                raise
            xp[i] = x[i] - h
            jac[:, i] = (fun(xp) - r0) / -h
            log.info("one-sided difference for parameter %d flipped after a model failure", i)
    return jac


def levenberg_marquardt(fun, x0, lower, upper, x_scale=None, max_iter=100, ftol=1e-12,
                        xtol=1e-10, gtol=1e-12, diff_step=1e-6, lam0=1e-3):
    """Minimize ``0.5 * |fun(x)|^2`` inside a box.

    Trial points are projected onto the bounds.  A trial that raises a
    package error or increases the cost is rejected and the damping is
    raised, so ``history`` (the costs of accepted points) never increases.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    x = np.clip(np.asarray(x0, dtype=float), lower, upper)
    scale = np.ones_like(x) if x_scale is None else np.asarray(x_scale, dtype=float)
    r = np.asarray(fun(x), dtype=float)
    cost = 0.5 * float(r @ r)
    history = [cost]
    lam = lam0
    jac = _jacobian(fun, x, r, lower, upper, scale, diff_step)
    converged, message, it = False, "max iterations", 0
    for it in range(1, max_iter + 1):
        g = jac.T @ r
        if np.max(np.abs(g * scale)) <= gtol * max(cost, 1e-300):
            converged, message = True, "gradient"
            break
        a = jac.T @ jac
        d = np.maximum(np.diag(a), 1e-12 * np.max(np.diag(a)) + 1e-300)
        accepted = False
        while lam < 1e16:
            try:
                step = np.linalg.solve(a + lam * np.diag(d), -g)
            except np.linalg.LinAlgError:
                lam *= 4.0
                continue
            x_new = np.clip(x + step, lower, upper)
            try:
                r_new = np.asarray(fun(x_new), dtype=float)
                cost_new = 0.5 * float(r_new @ r_new)
            except QpsplitError as exc:
                log.info("trial point rejected: %s", exc)
                cost_new = np.inf
            if np.isfinite(cost_new) and cost_new < cost:
                accepted = True
                break
            lam *= 4.0
        if not accepted:
            converged, message = True, "no decrease possible"
            break
        dx = np.max(np.abs(x_new - x) / np.maximum(np.abs(x), scale))
        drop = (cost - cost_new) / max(cost, 1e-300)
        x, r, cost = x_new, r_new, cost_new
        history.append(cost)
        lam = max(lam / 3.0, 1e-12)
        if drop < ftol or dx < xtol:
            converged, message = True, "ftol" if drop < ftol else "xtol"
            jac = _jacobian(fun, x, r, lower, upper, scale, diff_step)
            break
        jac = _jacobian(fun, x, r, lower, upper, scale, diff_step)
    return LMResult(x, cost, r, jac, it, converged, history, message)


def multistart(fun, x0, lower, upper, n_starts=8, spread=0.05, seed=0, **kw):
    """Run :func:`levenberg_marquardt` from ``x0`` and ``n_starts - 1`` perturbed copies."""
    rng = np.random.default_rng(seed)
    x0 = np.asarray(x0, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    best = None
    for k in range(n_starts):
        start = x0 if k == 0 else np.clip(x0 * (1 + spread * rng.uniform(-1, 1, x0.size)), lower, upper)
        try:
            res = levenberg_marquardt(fun, start, lower, upper, **kw)
        except QpsplitError as exc:
            log.info("start %d failed: %s", k, exc)
            continue
        if best is None or res.cost < best.cost:
            best = res
    if best is None:
        raise QpsplitError("every start failed")
    return best


# ---------------------------------------------------------------------------
# problem and result containers
# ---------------------------------------------------------------------------


@dataclass
class Constraint:
    name: str
    target: float   # GHz
    weight: float = 1.0


@dataclass
class FitProblem:
    """Data points, parameter bounds and penalty constraints of a fit.

    ``free`` maps a parameter name to ``(initial, lower, upper)``.
    """

    branch: np.ndarray
    bias: np.ndarray
    freq: np.ndarray
    weight: np.ndarray
    free: dict
    fixed: dict = field(default_factory=dict)
    constraints: list = field(default_factory=list)

    def __post_init__(self):
        self.branch = np.asarray(self.branch, dtype=str)
        self.bias = np.asarray(self.bias, dtype=float)
        self.freq = np.asarray(self.freq, dtype=float)
        self.weight = np.broadcast_to(np.asarray(self.weight, dtype=float), self.bias.shape).copy()
        if not self.free:
            raise InvalidParametersError("at least one free parameter is required")
        if not (self.branch.shape == self.bias.shape == self.freq.shape):
            raise ValueError("data columns must have equal length")
        for name, (x, lo, hi) in self.free.items():
            if not lo <= x <= hi:
                raise InvalidParametersError(f"initial {name}={x} outside [{lo}, {hi}]")
        # canonical order makes the fit independent of the input permutation
        order = np.lexsort((self.freq, self.bias, self.branch))
        for k in ("branch", "bias", "freq", "weight"):
            setattr(self, k, getattr(self, k)[order])

    @classmethod
    def from_ridges(cls, ridges, labels, free, fixed=None, constraints=None):
        rows = [(r.label, b, f) for r in ridges.branches if r.label in labels
                for b, f in zip(r.bias, r.freq)]
        if not rows:
            raise InvalidParametersError(f"no ridge carries any of the labels {sorted(labels)}")
        br, b, f = zip(*rows)
        return cls(np.array(br), np.array(b), np.array(f), 1.0, dict(free), dict(fixed or {}),
                   list(constraints or []))

    def subset(self, labels):
        m = np.isin(self.branch, list(labels))
        return self.branch[m], self.bias[m], self.freq[m], self.weight[m]

    def to_text(self):
        lines = ["free:"]
        lines += [f"  {k}: [{v[0]!r}, {v[1]!r}, {v[2]!r}]" for k, v in self.free.items()]
        lines.append("fixed:")
        lines += [f"  {k}: {v!r}" for k, v in self.fixed.items()]
        lines.append("constraints:")
        lines += [f"  {c.name}: {{target: {c.target!r}, weight: {c.weight!r}}}" for c in self.constraints]
        lines.append(f"n_points: {self.bias.size}")
        return "\n".join(lines) + "\n"


@dataclass
class FitResult:
    params: dict
    residual_rms: float          # GHz, data residuals only
    covariance: np.ndarray
    names: list
    converged: bool
    iterations: int
    history: list
    stages: dict = field(default_factory=dict)
    constraints: dict = field(default_factory=dict)

    @property
    def stderr(self):
        return dict(zip(self.names, np.sqrt(np.clip(np.diag(self.covariance), 0, None))))

    def to_text(self):
        err = self.stderr
        lines = [f"converged: {str(self.converged).lower()}", f"iterations: {self.iterations}",
                 f"residual_rms_ghz: {self.residual_rms!r}", "params:"]
        for k, v in self.params.items():
            e = err.get(k)
            lines.append(f"  {k}: {v!r}" + (f"  # +- {e:.3g}" if e is not None else ""))
        if self.constraints:
            lines.append("constraints:")
            lines += [f"  {k}: {v!r}" for k, v in self.constraints.items()]
        for name, st in self.stages.items():
            lines.append(f"stage {name}: rms_ghz={st['rms']!r} iterations={st['iterations']}")
        return "\n".join(lines) + "\n"

    def table(self, units=None):
        units = units or {}
        return "\n".join(f"{k:>10s} = {v:.6g} {units.get(k, '')}".rstrip() for k, v in self.params.items())


def _covariance(res, n_data):
    n = res.x.size
    dof = max(n_data - n, 1)
    s2 = 2.0 * res.cost / dof
    try:
        return s2 * np.linalg.pinv(res.jac.T @ res.jac)
    except np.linalg.LinAlgError:
        return np.full((n, n), np.nan)


# ---------------------------------------------------------------------------
# Rabi fit
# ---------------------------------------------------------------------------


def rabi_model(p, bias, branch, bias_map=(1.0, 0.0), n_fock=None):
    """Model frequency for every ``(branch, bias)`` data point.

    ``branch`` holds ``w10``, ``w20``, ``w31`` (suffixes such as
    ``_upper`` are ignored).  Levels are followed by adiabatic continuation
    along the sorted grid of all requested epsilon values.
    """
    a, b = bias_map
    eps = a * np.asarray(bias, dtype=float) + b
    grid, inv = np.unique(eps, return_inverse=True)
    if a < 0:
        raise InvalidParametersError("bias map slope must be positive")
    e = level_traces(p, grid, 4, n_fock=n_fock)
    out = np.empty(eps.size)
    for name, (i, j) in RABI_PAIRS.items():
        m = np.char.startswith(branch, name)
        out[m] = e[inv[m], j] - e[inv[m], i]
    return out


def _rabi_stage(names, x0, bounds, make_params, branch, bias, freq, weight, n_starts, seed, n_fock):
    lower = [bounds[k][0] for k in names]
    upper = [bounds[k][1] for k in names]
    sw = np.sqrt(weight)

    def resid(x):
        p, bmap = make_params(dict(zip(names, x)))
        return (rabi_model(p, bias, branch, bmap, n_fock) - freq) * sw

    res = multistart(resid, x0, lower, upper, n_starts=n_starts, seed=seed, x_scale=np.abs(x0) + 1e-3)
    rms = float(np.sqrt(np.mean((res.residuals / sw) ** 2)))
    return res, rms


def fit_rabi_two_delta(ridges, init=None, delta_green=None, bias_map=(1.0, 0.0),
                       fit_bias_map=False, n_starts=8, seed=0, rel_bounds=0.3):
    """Two-stage Rabi fit with one qubit gap per parity.

    Stage 1 fits ``delta``, ``g``, ``omega_r`` (and the affine bias map
    ``eps = a * bias + b`` if ``fit_bias_map``) to the ``w10``,
    ``w20_upper`` and ``w31`` ridges.  Stage 2 fits only ``delta_green`` to
    ``w20_lower`` with everything else frozen.  A plain ``w20`` label is
    treated as ``w20_upper``.
    """
    init = init or RabiParams()
    blue = {"w10", "w20_upper", "w20", "w31"}
    labels = {r.label for r in ridges.branches}
    if not labels & blue:
        raise InvalidParametersError("ridges need w10/w20_upper/w31 labels")
    names = ["delta", "g", "omega_r"] + (["a", "b"] if fit_bias_map else [])
    x0 = np.array([init.delta, init.g, init.omega_r] + (list(bias_map) if fit_bias_map else []))
    bounds = {k: (v * (1 - rel_bounds), v * (1 + rel_bounds)) for k, v in zip(names[:3], x0)}
    if fit_bias_map:
        span = max(abs(bias_map[0]), 1.0)
        bounds["a"] = (bias_map[0] * (1 - rel_bounds), bias_map[0] * (1 + rel_bounds))
        bounds["b"] = (bias_map[1] - rel_bounds * span, bias_map[1] + rel_bounds * span)
    problem = FitProblem.from_ridges(ridges, blue | {"w20_lower"}, {k: (x, *bounds[k]) for k, x in zip(names, x0)})
    # one Fock cutoff for the whole fit, converged at the upper parameter bounds
    hi = RabiParams(epsilon=0.0, delta=bounds["delta"][1], omega_r=bounds["omega_r"][1], g=bounds["g"][1],
                    n_fock=init.n_fock)
    a_max = bounds.get("a", (0, bias_map[0]))[1]
    eps_max = a_max * np.max(np.abs(problem.bias)) + abs(bias_map[1]) + 1.0
    n_fock = converged_fock(hi, (0.0, eps_max), k=5)

    def make_blue(d):
        p = replace(init, delta=d["delta"], g=d["g"], omega_r=d["omega_r"])
        return p, ((d["a"], d["b"]) if fit_bias_map else bias_map)

    br, b, f, w = problem.subset(blue)
    res1, rms1 = _rabi_stage(names, x0, bounds, make_blue, br, b, f, w, n_starts, seed, n_fock)
    best = dict(zip(names, res1.x))
    p_blue, bmap = make_blue(best)
    stages = {"blue": {"rms": rms1, "iterations": res1.n_iter, "converged": res1.converged}}
    params = {"delta_blue": float(best["delta"]), "g": float(best["g"]), "omega_r": float(best["omega_r"])}
    if fit_bias_map:
        params.update(a=float(best["a"]), b=float(best["b"]))
    cov = _covariance(res1, b.size)
    out_names = list(params)
    converged = res1.converged
    iterations = res1.n_iter
    history = list(res1.history)

    br2, b2, f2, w2 = problem.subset({"w20_lower"})
    if b2.size:
        dg0 = float(delta_green if delta_green is not None else p_blue.delta * 0.95)
        bounds2 = {"delta": (dg0 * (1 - rel_bounds), dg0 * (1 + rel_bounds))}

        def make_green(d):
            return replace(p_blue, delta=d["delta"]), bmap

        res2, rms2 = _rabi_stage(["delta"], np.array([dg0]), bounds2, make_green,
                                 np.full(b2.size, "w20"), b2, f2, w2, n_starts, seed + 1, n_fock)
        params["delta_green"] = float(res2.x[0])
        stages["green"] = {"rms": rms2, "iterations": res2.n_iter, "converged": res2.converged}
        cov2 = _covariance(res2, b2.size)
        full = np.zeros((cov.shape[0] + 1,) * 2)
        full[:-1, :-1] = cov
        full[-1, -1] = cov2[0, 0]
        cov = full
        out_names.append("delta_green")
        converged = converged and res2.converged
        iterations += res2.n_iter
        history += list(res2.history)
        r_all = np.concatenate([res1.residuals / np.sqrt(w), res2.residuals / np.sqrt(w2)])
    else:
        r_all = res1.residuals / np.sqrt(w)
    rms = float(np.sqrt(np.mean(r_all ** 2)))
    out = FitResult(params, rms, cov, out_names, converged, iterations, history, stages)
    out.problem = problem
    out.n_fock = n_fock
    return out


# ---------------------------------------------------------------------------
# circuit fit
# ---------------------------------------------------------------------------

CIRCUIT_FREE_DEFAULT = ("e_j", "e_c", "omega_r", "l_r", "alpha", "beta", "u", "eta", "q_g2")
DEFAULT_CONSTRAINT_PHI = 0.5018


def default_constraints():
    """Middle frequency 4.526 GHz at q_g2 = 0.5 e and maximum split 18 MHz."""
    return [Constraint("f_mid", 4.526), Constraint("max_split", 0.018)]


def _circuit_from(base, values, eta_mode):
    kw = {k: v for k, v in values.items() if k in ("e_j", "e_c", "omega_r", "l_r", "alpha", "beta", "u")}
    if eta_mode == "tied" and "eta" in values:
        kw["eta"] = (values["eta"],) * 3
    elif eta_mode == "free":
        eta = list(base.eta)
        for i in range(3):
            if f"eta{i + 1}" in values:
                eta[i] = values[f"eta{i + 1}"]
        kw["eta"] = tuple(eta)
    return replace(base, **kw)


def circuit_constraint_values(params, basis=None, phi_ext=DEFAULT_CONSTRAINT_PHI):
    """(middle frequency at q_g2 = 0.5 e, split between q_g2 = 0 and e) in GHz."""
    mid = omega20(params, (0, 0.5, 0, 0), phi_ext, basis)
    split = abs(omega20(params, (0, 0, 0, 0), phi_ext, basis) - omega20(params, (0, 1, 0, 0), phi_ext, basis))
    return mid, split


def circuit_model(params, q_g2, bias, branch, basis=None):
    """Model frequencies for circuit data labelled ``<parity>_<transition>``.

    ``parity`` is ``blue`` (charges (0, q_g2, 0, 0)) or ``green``
    ((0, q_g2 + 1, 0, 0)); ``bias`` is the reduced flux.  Levels are taken
    in energy order at each flux point.
    """
    out = np.empty(bias.size)
    parity = np.array([s.split("_")[0] for s in branch])
    trans = np.array([s.split("_")[1] for s in branch])
    pairs = tuple(RABI_PAIRS[t] for t in RABI_PAIRS)
    for par, shift in (("blue", 0.0), ("green", 1.0)):
        sel = parity == par
        if not np.any(sel):
            continue
        charges = (0.0, q_g2 + shift, 0.0, 0.0)
        for phi in np.unique(bias[sel]):
            vals = dict(zip(RABI_PAIRS, transitions_at(params, charges, phi, basis, pairs)))
            m = sel & (bias == phi)
            for t in np.unique(trans[m]):
                out[m & (trans == t)] = vals[t]
    return out


def fit_circuit_two_parity(ridges, init=None, q_g2=0.15, constraints=None, free=CIRCUIT_FREE_DEFAULT,
                           eta_mode="tied", basis=None, n_starts=1, seed=0, rel_bounds=0.2,
                           constraint_phi=DEFAULT_CONSTRAINT_PHI, max_iter=50):
    """Fit circuit parameters and ``q_g2`` to both parity families of branches.

    Constraint residuals are plain GHz differences so that a 1 MHz
    violation weighs as much as a 1 MHz data residual.
    """
    init = init or CircuitParams()
    constraints = default_constraints() if constraints is None else constraints
    if eta_mode not in ("tied", "free"):
        raise InvalidParametersError("eta_mode must be 'tied' or 'free'")
    names = []
    for k in free:
        if k == "eta" and eta_mode == "free":
            names += ["eta1", "eta2", "eta3"]
        else:
            names.append(k)
    start = {"q_g2": q_g2, "eta": init.eta[0], "eta1": init.eta[0], "eta2": init.eta[1], "eta3": init.eta[2]}
    x0 = np.array([start[k] if k in start else getattr(init, k) for k in names], dtype=float)
    lower, upper = [], []
    for k, v in zip(names, x0):
        if k in ("alpha", "beta", "u"):
            lower.append(max(v - 0.2, 0.01))
            upper.append(v + 0.2)
        elif k == "q_g2":
            lower.append(0.0)
            upper.append(0.5)
        elif k.startswith("eta"):
            lower.append(0.0)
            upper.append(max(2 * v, 0.3))
        else:
            lower.append(v * (1 - rel_bounds))
            upper.append(v * (1 + rel_bounds))
    labels = {r.label for r in ridges.branches if r.label and r.label.split("_")[0] in ("blue", "green")}
    problem = FitProblem.from_ridges(ridges, labels, {k: (x, lo, hi) for k, x, lo, hi in zip(names, x0, lower, upper)},
                                     fixed={k: v for k, v in init.to_config().items()}, constraints=constraints)
    sw = np.sqrt(problem.weight)
    byname = {c.name: c for c in constraints}

    def unpack(x):
        d = dict(zip(names, x))
        return _circuit_from(init, d, eta_mode), d.get("q_g2", q_g2)

    def resid(x):
        p, q = unpack(x)
        r = (circuit_model(p, q, problem.bias, problem.branch, basis) - problem.freq) * sw
        if byname:
            mid, split = circuit_constraint_values(p, basis, constraint_phi)
            extra = []
            if "f_mid" in byname:
                extra.append(np.sqrt(byname["f_mid"].weight) * (mid - byname["f_mid"].target))
            if "max_split" in byname:
                extra.append(np.sqrt(byname["max_split"].weight) * (split - byname["max_split"].target))
            r = np.concatenate([r, extra])
        return r

    res = multistart(resid, x0, lower, upper, n_starts=n_starts, seed=seed, max_iter=max_iter,
                     x_scale=np.maximum(np.abs(x0), 1e-2), diff_step=1e-5)
    p, q = unpack(res.x)
    n_data = problem.bias.size
    rms = float(np.sqrt(np.mean((res.residuals[:n_data] / sw) ** 2)))
    cvals = {}
    if byname:
        mid, split = circuit_constraint_values(p, basis, constraint_phi)
        cvals = {"f_mid_ghz": float(mid), "max_split_ghz": float(split)}
    params = dict(zip(names, map(float, res.x)))
    out = FitResult(params, rms, _covariance(res, n_data), names, res.converged, res.n_iter,
                    res.history, {"main": {"rms": rms, "iterations": res.n_iter}}, cvals)
    out.circuit = p
    out.q_g2 = q
    out.problem = problem
    return out


def synthetic_rabi_ridges(p, eps, delta_green=None, jitter=0.0, seed=0):
    """Labelled Rabi ridges for tests and demos, optionally with Gaussian jitter (GHz)."""
    from .extract import Ridge, RidgeSet
    from .rabi import rabi_branches

    rng = np.random.default_rng(seed)
    eps = np.asarray(eps, dtype=float)
    out = []
    for b in rabi_branches(p, eps):
        label = "w20_upper" if b.branch == "w20" else b.branch
        out.append(Ridge(eps.copy(), b.freq + jitter * rng.standard_normal(eps.size), np.ones(eps.size), label))
    if delta_green is not None:
        g20 = rabi_branches(replace(p, delta=delta_green), eps, pairs=((0, 2),))[0]
        out.append(Ridge(eps.copy(), g20.freq + jitter * rng.standard_normal(eps.size), np.ones(eps.size), "w20_lower"))
    return RidgeSet(out)


def synthetic_circuit_ridges(params, q_g2, phis, basis=None, transitions=("w10", "w20", "w31")):
    """Labelled two-parity circuit ridges (noiseless) on the reduced-flux grid ``phis``."""
    from .extract import Ridge, RidgeSet

    phis = np.asarray(phis, dtype=float)
    out = []
    for par, shift in (("blue", 0.0), ("green", 1.0)):
        vals = np.array([transitions_at(params, (0, q_g2 + shift, 0, 0), ph, basis,
                                        tuple(RABI_PAIRS[t] for t in transitions)) for ph in phis])
        for k, t in enumerate(transitions):
            out.append(Ridge(phis.copy(), vals[:, k], np.ones(phis.size), f"{par}_{t}"))
    return RidgeSet(out)
