"""Simulation of the benchmark kinetic systems.

Contains an adaptive Dormand--Prince 4(5) integrator with dense output,
mass-action reaction systems (the Maillard reaction network and a small
system with hidden species), a sigmoid-predictor target system, the three
benchmark dataset samplers and the measurement-noise models.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .kinetic_data import Dataset, Experiment, Repetition

__all__ = [
    "IntegrationError",
    "Reaction",
    "OdeSystem",
    "NoiseSpec",
    "SimResult",
    "integrate",
    "solve_ivp_dopri",
    "maillard_system",
    "hidden_system",
    "quadratic_grid",
    "exponential_grid",
    "uniform_grid",
    "total_variation",
    "noise_sd",
    "add_noise",
    "substream",
    "sample_dataset1",
    "sample_dataset2",
    "sample_dataset3",
]


class IntegrationError(RuntimeError):
    def __init__(self, message, last_time=None):
        super().__init__(message)
        self.last_time = last_time


# ------------------------------------------------------------- integrator

_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
]
_B = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
_E = np.array([-71 / 57600, 0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
# dense output: y(t + s h) = y + h K' P [s, s^2, s^3, s^4]
_P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])


def _rms(x):
    return float(np.sqrt(np.mean(x * x)))


def _initial_step(f, t0, y0, f0, direction, rtol, atol):
    scale = atol + np.abs(y0) * rtol
    d0, d1 = _rms(y0 / scale), _rms(f0 / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    y1 = y0 + h0 * direction * f0
    f1 = f(t0 + h0 * direction, y1)
    d2 = _rms((f1 - f0) / scale) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1)


def solve_ivp_dopri(f, t0, y0, t_out, rtol=1e-6, atol=1e-9, max_steps=1_000_000):
    """Integrate ``y' = f(t, y)`` forward and return ``y`` at ``t_out``.

    Returns an array of shape ``(len(y0), len(t_out))``.
    """
    t_out = np.asarray(t_out, dtype=float)
    y = np.array(y0, dtype=float)
    if rtol <= 0 or atol <= 0:
        raise ValueError("tolerances must be positive")
    if np.any(np.diff(t_out) < 0) or (t_out.size and t_out[0] < t0):
        raise ValueError("output times must be sorted and not precede t0")
    out = np.empty((y.size, t_out.size))
    t = float(t0)
    t_end = float(t_out[-1]) if t_out.size else t
    i_out = 0
    while i_out < t_out.size and t_out[i_out] == t:
        out[:, i_out] = y
        i_out += 1
    if i_out == t_out.size:
        return out
    fy = np.asarray(f(t, y), dtype=float)
    if not np.all(np.isfinite(fy)):
        raise IntegrationError("non-finite derivative", t)
    h = _initial_step(f, t, y, fy, 1.0, rtol, atol)
    K = np.empty((7, y.size))
    steps = 0
    while i_out < t_out.size:
        steps += 1
        if steps > max_steps:
            raise IntegrationError("step limit reached", t)
        h = min(h, t_end - t)
        if h <= 10 * np.finfo(float).eps * max(abs(t), 1.0):
            raise IntegrationError("step size underflow", t)
        K[0] = fy
        for s in range(1, 6):
            K[s] = f(t + _C[s] * h, y + h * (np.asarray(_A[s]) @ K[:s]))
        y_new = y + h * (_B @ K[:6])
        f_new = np.asarray(f(t + h, y_new), dtype=float)
        K[6] = f_new
        if not (np.all(np.isfinite(y_new)) and np.all(np.isfinite(f_new))):
            h *= 0.2
            continue
        scale = atol + np.maximum(np.abs(y), np.abs(y_new)) * rtol
        err = _rms(h * (_E @ K) / scale)
        if err > 1.0:
            h *= max(0.2, 0.9 * err ** -0.2)
            continue
        t_new = t + h
        while i_out < t_out.size and t_out[i_out] <= t_new:
            s = (t_out[i_out] - t) / h
            out[:, i_out] = y + h * (K.T @ (_P @ np.array([s, s * s, s**3, s**4])))
            i_out += 1
        t, y, fy = t_new, y_new, f_new
        h *= 10.0 if err == 0 else min(10.0, 0.9 * err ** -0.2)
    return out


# ---------------------------------------------------------------- systems


@dataclass(frozen=True)
class Reaction:
    """Mass-action reaction ``sum(reactants) -> sum(products)`` at rate ``k``."""

    rate: str
    reactants: tuple
    products: tuple


@dataclass
class OdeSystem:
    """Mass-action system over named species with named rate constants."""

    species_names: list
    reactions: list
    params: dict
    initial_state: np.ndarray
    _S: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.initial_state = np.asarray(self.initial_state, dtype=float)
        d = len(self.species_names)
        if self.initial_state.shape != (d,):
            raise ValueError("initial state has the wrong length")
        S = np.zeros((d, len(self.reactions)))
        for r, rx in enumerate(self.reactions):
            for j in rx.reactants:
                S[j, r] -= 1
            for j in rx.products:
                S[j, r] += 1
        self._S = S

    @property
    def dimension(self):
        return len(self.species_names)

    @property
    def stoichiometry(self):
        return self._S.copy()

    def rate_vector(self):
        return np.array([self.params[rx.rate] for rx in self.reactions])

    def rhs(self, t, x, k=None):
        k = self.rate_vector() if k is None else k
        flux = k * np.array([np.prod(x[list(rx.reactants)]) for rx in self.reactions])
        return self._S @ flux

    def _fast_rhs(self):
        k = self.rate_vector()
        S = self._S
        pad = self.dimension
        idx = np.full((len(self.reactions), 2), pad)
        for r, rx in enumerate(self.reactions):
            idx[r, : len(rx.reactants)] = rx.reactants
        ext = np.ones(pad + 1)

        def f(t, x):
            ext[:pad] = x
            return S @ (k * ext[idx[:, 0]] * ext[idx[:, 1]])

        return f

    def with_params(self, **updates):
        unknown = set(updates) - set(self.params)
        if unknown:
            raise KeyError(f"unknown rate constants {sorted(unknown)}")
        return replace(self, params={**self.params, **updates})

    def with_initial_state(self, x0):
        return replace(self, initial_state=np.asarray(x0, dtype=float))

    def equation_rates(self, j):
        """Rate names of the reactions that change species ``j``."""
        return [rx.rate for r, rx in enumerate(self.reactions) if self._S[j, r] != 0]

    def parents(self, j):
        """Species appearing on the right-hand side of the equation of ``j``."""
        out = set()
        for r, rx in enumerate(self.reactions):
            if self._S[j, r] != 0:
                out.update(rx.reactants)
        return sorted(out)


def integrate(system: OdeSystem, t_span, output_grid, rel_tol=1e-6, abs_tol=1e-9):
    """Trajectory of ``system`` at ``output_grid``, shape (d, L)."""
    t0, t1 = map(float, t_span)
    grid = np.asarray(output_grid, dtype=float)
    if grid.size and (grid[0] < t0 or grid[-1] > t1):
        raise ValueError("output grid must lie inside the integration span")
    return solve_ivp_dopri(system._fast_rhs(), t0, system.initial_state, grid, rel_tol, abs_tol)


MAILLARD_SPECIES = [
    "Glu", "Fru", "Formic acid", "Triose", "Acetic acid", "Cn",
    "Amadori", "AMP", "C5", "lys R", "Melanoidin",
]


def maillard_system() -> OdeSystem:
    """Maillard reaction network of heated monosaccharide-casein systems."""
    G, F, FA, TR, AA, CN, AM, AMP, C5, LR, MEL = range(11)
    reactions = [
        Reaction("k1", (G,), (F,)),
        Reaction("k2", (F,), (G,)),
        Reaction("k3", (G,), (FA, C5)),
        Reaction("k4", (F,), (FA, C5)),
        Reaction("k5", (F,), (TR, TR)),
        Reaction("k6", (TR,), (CN, AA)),
        Reaction("k7", (LR, G), (AM,)),
        Reaction("k8", (AM,), (AA, LR)),
        Reaction("k9", (AM,), (AMP,)),
        Reaction("k10", (LR, F), (AMP,)),
        Reaction("k11", (AMP,), (MEL,)),
    ]
    k = [0.01, 0.00509, 0.00047, 0.0011, 0.00712, 0.00439, 0.00018, 0.11134, 0.14359, 0.00015, 0.12514]
    x0 = np.zeros(11)
    x0[G], x0[LR] = 160.0, 15.0
    return OdeSystem(list(MAILLARD_SPECIES), reactions, {f"k{i + 1}": v for i, v in enumerate(k)}, x0)


HIDDEN_SPECIES = ["X1", "X2", "X3", "X4", "X5", "X6", "H1", "H2", "Y"]


def hidden_system() -> OdeSystem:
    """Nine-species system whose target ``Y`` is fed by a hidden species."""
    X1, X2, X3, X4, X5, X6, H1, H2, Y = range(9)
    reactions = [
        Reaction("k1", (X1,), (H1,)),
        Reaction("k2", (H1,), (X2, H2)),
        Reaction("k3", (H1,), (X1,)),
        Reaction("k4", (H2,), (Y,)),
        Reaction("k5", (X3,), (Y, X4)),
        Reaction("k6", (X1, X4), (X3,)),
        Reaction("k7", (X2,), (X6,)),
        Reaction("k8", (X5,), (X3,)),
        Reaction("k9", (X4,), (X5,)),
    ]
    k = [0.08, 0.08, 0.01, 0.1, 0.003, 0.06, 0.1, 0.02, 0.05]
    x0 = np.zeros(9)
    x0[X1], x0[X4] = 5.0, 5.0
    return OdeSystem(list(HIDDEN_SPECIES), reactions, {f"k{i + 1}": v for i, v in enumerate(k)}, x0)


# ------------------------------------------------------------------ grids


def quadratic_grid(L, T=100.0):
    return T * (np.arange(L) / (L - 1)) ** 2


def exponential_grid(L, T=100.0, rate=3.0):
    return T * np.expm1(rate * np.arange(L) / (L - 1)) / np.expm1(rate)


def uniform_grid(L, T=10.0):
    return np.linspace(0.0, T, L)


# ------------------------------------------------------------------ noise


@dataclass(frozen=True)
class NoiseSpec:
    """Measurement noise with sd ``c * TV(y) + 1e-7`` per trajectory.

    ``kind`` is ``"iid"`` or ``"ar1"`` (stationary, coefficient ``a``,
    marginal sd matching the iid case).  ``scale`` multiplies the sd.
    """

    kind: str = "iid"
    c: float = 0.05
    a: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("iid", "ar1"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if not abs(self.a) < 1:
            raise ValueError("AR coefficient must satisfy |a| < 1")
        if self.c < 0 or self.scale < 0:
            raise ValueError("noise level must be nonnegative")


def total_variation(values):
    return float(np.sum(np.abs(np.diff(np.asarray(values, dtype=float)))))


def noise_sd(values, c, scale=1.0):
    return scale * (c * total_variation(values) + 1e-7)


def substream(seed, *key):
    """Independent generator for a (seed, key) pair, order independent."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


def _ar1_path(rng, L, a):
    w = rng.standard_normal(L)
    e = np.empty(L)
    e[0] = w[0]
    root = np.sqrt(1 - a * a)
    for ell in range(1, L):
        # unit marginal variance: e_t = a e_{t-1} + sqrt(1-a^2) w_t
        e[ell] = a * e[ell - 1] + root * w[ell]
    return e


def add_noise(traj, spec: NoiseSpec, seed, key=()):
    """Noisy copy of a (d, L) trajectory; one substream per variable.

    A noise level of exactly zero returns the trajectory unchanged.
    """
    traj = np.asarray(traj, dtype=float)
    if spec.c == 0 or spec.scale == 0:
        return traj.copy()
    out = traj.copy()
    for j, row in enumerate(traj):
        rng = substream(seed, *key, j)
        e = _ar1_path(rng, row.size, spec.a) if spec.kind == "ar1" else rng.standard_normal(row.size)
        out[j] = row + noise_sd(row, spec.c, spec.scale) * e
    return out


# --------------------------------------------------------------- samplers

_DESIGN, _INTERVENE, _NOISE = 0, 1, 2


@dataclass
class SimResult:
    dataset: Dataset
    truth: list
    info: dict
    hidden_mask: list | None = None
    trajectories: list | None = None

    def __iter__(self):
        yield self.dataset
        yield self.truth


def _block(system, eligible, expected, rng):
    p = min(1.0, expected / len(eligible)) if eligible else 0.0
    blocked = [r for r in eligible if rng.random() < p]
    return system.with_params(**{r: 0.0 for r in blocked}), blocked


def _simulate_conditions(make_condition, grid, m, seed, max_tries=20):
    """Integrate each condition, redrawing its intervention on failure."""
    trajs, details, failures = [], [], 0
    for k in range(m):
        for attempt in range(max_tries):
            system, detail = make_condition(k, substream(seed, _INTERVENE, k, attempt))
            try:
                x = integrate(system, (0.0, grid[-1]), grid)
            except IntegrationError:
                failures += 1
                continue
            if np.all(np.isfinite(x)):
                break
            failures += 1
        else:
            raise IntegrationError(f"condition {k + 1} failed {max_tries} times")
        trajs.append(x)
        details.append(detail)
    return trajs, details, failures


def _noisy_dataset(names, target, trajs, grid, R, spec, seed):
    exps = []
    for k, x in enumerate(trajs):
        reps = [Repetition(grid, add_noise(x, spec, seed, (_NOISE, k, r))) for r in range(R)]
        exps.append(Experiment(str(k + 1), tuple(reps)))
    return Dataset(list(names), target, tuple(exps))


def _noise_spec(c, c_range, rng, kind, a, scale):
    c = float(rng.uniform(*c_range)) if c is None else float(c)
    return NoiseSpec(kind, c, a, scale)


def sample_dataset1(seed, L=11, m=5, R=3, target=None, c=None, c_range=(0.01, 0.1),
                    noise_kind="iid", ar=0.0, noise_scale=1.0, T=100.0, expected_blocked=3.0) -> SimResult:
    """Maillard-network benchmark data.

    Condition 1 is observational; the others draw initial values of Glu,
    Fru (uniform on [0, 800]) and lys R (uniform on [0, 75]) and block each
    reaction outside the target equation independently so that on average
    ``expected_blocked`` are switched off.  ``c=0`` gives noiseless data.
    """
    base = maillard_system()
    design = substream(seed, _DESIGN)
    target = int(design.integers(11)) if target is None else int(target)
    spec = _noise_spec(c, c_range, design, noise_kind, ar, noise_scale)
    grid = quadratic_grid(L, T)
    own = set(base.equation_rates(target))
    eligible = [rx.rate for rx in base.reactions if rx.rate not in own]

    def condition(k, rng):
        if k == 0:
            return base, {"blocked": [], "initial": base.initial_state.tolist()}
        x0 = np.zeros(11)
        x0[0], x0[1], x0[9] = rng.uniform(0, 800), rng.uniform(0, 800), rng.uniform(0, 75)
        system, blocked = _block(base.with_initial_state(x0), eligible, expected_blocked, rng)
        return system, {"blocked": blocked, "initial": x0.tolist()}

    trajs, details, failures = _simulate_conditions(condition, grid, m, seed)
    ds = _noisy_dataset(base.species_names, target, trajs, grid, R, spec, seed)
    info = {"dataset": "maillard", "seed": int(seed), "target": target, "c": spec.c,
            "noise": spec.kind, "ar": spec.a, "noise_scale": spec.scale, "L": L, "m": m, "R": R,
            "conditions": details, "integration_failures": failures}
    return SimResult(ds, base.parents(target), info, trajectories=trajs)


def sigmoid_pair(t, c):
    c1, c2, c3, c4 = c
    return c1 / (1 + np.exp(c2 * (t - 3))) + c3 / (1 + np.exp(c4 * (t - 3)))


def sample_dataset2(seed, L=15, m=5, R=3, n_predictors=12, theta=(1e-4, 2e-4), c=None,
                    c_range=(0.05, 0.15), T=10.0) -> SimResult:
    """Sigmoid predictors with target ``Y' = theta1 X1 + theta2 X2``, ``Y(0) = 0``.

    Predictors are drawn independently per condition; the target is the last
    variable.
    """
    design = substream(seed, _DESIGN)
    spec = _noise_spec(c, c_range, design, "iid", 0.0, 1.0)
    grid = uniform_grid(L, T)
    th = np.asarray(theta, dtype=float)
    trajs, coefs = [], []
    for k in range(m):
        cc = substream(seed, _INTERVENE, k, 0).standard_normal((n_predictors, 4))

        def f(t, y, cc=cc):
            return np.array([th @ np.array([sigmoid_pair(t, cc[0]), sigmoid_pair(t, cc[1])])])

        y = solve_ivp_dopri(f, 0.0, [0.0], grid)
        X = np.array([sigmoid_pair(grid, row) for row in cc])
        trajs.append(np.vstack([X, y]))
        coefs.append(cc.tolist())
    names = [f"X{j + 1}" for j in range(n_predictors)] + ["Y"]
    ds = _noisy_dataset(names, n_predictors, trajs, grid, R, spec, seed)
    info = {"dataset": "sigmoid", "seed": int(seed), "c": spec.c, "L": L, "m": m, "R": R,
            "theta": list(th), "sigmoid_coefficients": coefs}
    return SimResult(ds, [0, 1], info, trajectories=trajs)


def sample_dataset3(seed, k7_mode="wide", hide=True, L=20, m=16, R=3, c=None, c_range=(0.01, 0.1),
                    T=100.0, expected_blocked=2.0) -> SimResult:
    """Hidden-species benchmark with target ``Y``.

    Interventional conditions draw X1, X2, X5 uniform on [0, 10], block
    reactions other than k4, k5, k7 and perturb k7 (``narrow``: [0, 0.2],
    ``wide``: [-0.1, 0.3]).  With ``hide`` the species H1 and H2 are dropped
    from the returned dataset; ``truth`` always refers to the full system
    and ``observed_truth`` (in ``info``) to the returned columns.
    """
    if k7_mode not in ("narrow", "wide"):
        raise ValueError("k7_mode must be 'narrow' or 'wide'")
    base = hidden_system()
    design = substream(seed, _DESIGN)
    spec = _noise_spec(c, c_range, design, "iid", 0.0, 1.0)
    grid = exponential_grid(L, T)
    lo, hi = (0.0, 0.2) if k7_mode == "narrow" else (-0.1, 0.3)
    eligible = ["k1", "k2", "k3", "k6", "k8", "k9"]

    def condition(k, rng):
        if k == 0:
            return base, {"blocked": [], "initial": base.initial_state.tolist(), "k7": base.params["k7"]}
        x0 = np.zeros(9)
        x0[[0, 1, 4]] = rng.uniform(0, 10, 3)
        system, blocked = _block(base.with_initial_state(x0), eligible, expected_blocked, rng)
        k7 = float(rng.uniform(lo, hi))
        return system.with_params(k7=k7), {"blocked": blocked, "initial": x0.tolist(), "k7": k7}

    trajs, details, failures = _simulate_conditions(condition, grid, m, seed)
    full = _noisy_dataset(base.species_names, 8, trajs, grid, R, spec, seed)
    mask = [j not in (6, 7) for j in range(9)] if hide else [True] * 9
    keep = [j for j in range(9) if mask[j]]
    ds = full.select_variables(keep) if hide else full
    truth = base.parents(8)
    if 8 in truth:
        truth.remove(8)
    observed_truth = [keep.index(j) for j in truth if j in keep]
    info = {"dataset": "hidden", "seed": int(seed), "k7_mode": k7_mode, "hide": hide, "c": spec.c,
            "L": L, "m": m, "R": R, "conditions": details, "integration_failures": failures,
            "observed_truth": observed_truth}
    return SimResult(ds, truth, info, hidden_mask=mask, trajectories=trajs)
