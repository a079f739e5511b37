"""Model families: finite-dimensional SDEs, spectral Galerkin SPDEs on (0, 1)
with Dirichlet boundary conditions, and stochastic delay equations stored on a
segment grid.

All evaluation methods are vectorised over a leading replica axis:

* SODE states are ``(R, d)``
* SPDE states are ``(R, N)`` sine-mode coefficients
* SFDE states are ``(R, n_seg + 1, d)`` segments, node 0 at ``-delay`` and the
  last node at ``0``
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Union

import numpy as np


class ModelError(ValueError):
    """A model parameter or declared constant violates an invariant."""


@dataclass(frozen=True)
class AssumptionMeta:
    """Exponents and rate forms declared for a (model, scheme) pair.

    ``q`` and ``r`` are the moment exponents available from the moment
    bounds; ``inf`` encodes "any q".  ``alpha = (alpha1, alpha2)`` are the
    spatial and temporal strong-convergence exponents.
    """

    r_tilde: float = 1.0
    q_tilde: float = 1.0
    gamma1: float = 1.0
    gamma2: float = 1.0
    beta: float = 0.0
    kappa: float = 0.0
    alpha: tuple[float, float] = (0.0, 0.5)
    mixing: str = "exponential"
    mixing_rate: float | None = None
    q: float = math.inf
    r: float = math.inf
    spatial: bool = False

    def __post_init__(self):
        if self.r_tilde < 1 or self.q_tilde < 1:
            raise ModelError("r_tilde and q_tilde must be >= 1")
        for name in ("gamma1", "gamma2"):
            g = getattr(self, name)
            if not 0 < g <= 1:
                raise ModelError(f"{name}={g} outside (0, 1]")
        if self.beta < 0 or self.kappa < 0:
            raise ModelError("growth exponents beta, kappa must be >= 0")
        a1, a2 = self.alpha
        if not a2 > 0:
            raise ModelError("alpha2 must be > 0")
        if self.spatial and not a1 > 0:
            raise ModelError("alpha1 must be > 0 for a spatial discretization")
        if self.mixing not in ("exponential", "tabulated"):
            raise ModelError(f"unknown mixing form {self.mixing!r}")


def _euclid(values: np.ndarray) -> np.ndarray:
    v = values.reshape(values.shape[0], -1)
    return np.sqrt(np.einsum("ri,ri->r", v, v))


@dataclass(frozen=True, eq=False)
class SodeModel:
    """dX = b(X) dt + sigma(X) dW in R^d with D-dimensional noise.

    Dissipativity is declared as
    ``<x - y, b(x) - b(y)> <= -c_dis |x - y|^2 + dis_const``.
    """

    name: str
    dim: int
    noise_dim: int
    drift: Callable[[np.ndarray], np.ndarray]
    diffusion: Callable[[np.ndarray], np.ndarray]
    c_dis: float
    growth_degree: float
    dis_const: float = 0.0
    drift_jac: Callable[[np.ndarray], np.ndarray] | None = None
    additive: bool = False
    meta: AssumptionMeta = field(default_factory=AssumptionMeta)
    params: Mapping[str, float] = field(default_factory=dict)
    linear_rate: float | None = None

    family = "sode"

    def __post_init__(self):
        if self.dim < 1 or self.noise_dim < 1:
            raise ModelError("dimensions must be positive")
        if not self.c_dis > 0:
            raise ModelError("c_dis must be > 0")
        zero = np.zeros((1, self.dim))
        if not (np.all(np.isfinite(self.drift(zero)))
                and np.all(np.isfinite(self.diffusion(zero)))):
            raise ModelError("coefficients are not finite at the origin")
        object.__setattr__(self, "_sigma0", np.array(self.diffusion(zero)[0]))

    @property
    def state_shape(self) -> tuple[int, ...]:
        return (self.dim,)

    @property
    def noise_width(self) -> int:
        return self.noise_dim

    def b(self, x):
        return self.drift(x)

    def sigma(self, x):
        return self.diffusion(x)

    def noise_term(self, x, dw):
        """sigma(x) dW for a batch, ``(R, d)``."""
        if self.additive:
            return dw @ self._sigma0.T
        return np.einsum("rij,rj->ri", self.diffusion(x), dw)

    def jac(self, x):
        """Drift Jacobian ``(R, d, d)``; central differences if none given."""
        if self.drift_jac is not None:
            return self.drift_jac(x)
        r, d = x.shape
        out = np.empty((r, d, d))
        for j in range(d):
            hstep = 1e-6 * (1.0 + np.abs(x[:, j]))
            xp = x.copy()
            xm = x.copy()
            xp[:, j] += hstep
            xm[:, j] -= hstep
            out[:, :, j] = (self.drift(xp) - self.drift(xm)) / (2 * hstep)[:, None]
        return out

    def norm(self, values):
        return _euclid(values)

    def zero_state(self, replicas: int = 1) -> np.ndarray:
        return np.zeros((replicas, self.dim))

    def dissipativity_excess(self, x, y):
        """lhs - rhs of the declared dissipativity inequality, per pair."""
        dx = x - y
        lhs = np.einsum("ri,ri->r", dx, self.drift(x) - self.drift(y))
        rhs = -self.c_dis * np.einsum("ri,ri->r", dx, dx) + self.dis_const
        return lhs - rhs


@dataclass(frozen=True, eq=False)
class SpectralSpdeModel:
    """dX = (A X + F(X)) dt + dW on L^2(0, 1), truncated to N sine modes.

    Basis ``e_j(xi) = sqrt(2) sin(j pi xi)``; ``lam[j-1]`` is the eigenvalue of
    ``-A`` for mode ``j``.  F is a Nemytskii operator with pointwise map
    ``f``; its Galerkin projection is evaluated by collocation on the
    ``2N + 1`` interior points ``xi_m = m / (2N + 2)``, which is exact for
    cubic ``f``.  Noise on mode ``j`` has intensity ``noise_scale^2 * q[j-1]``.
    """

    name: str
    n_modes: int
    lam: np.ndarray
    q: np.ndarray
    beta1: float
    lambda_f: float
    f: Callable[[np.ndarray], np.ndarray]
    df: Callable[[np.ndarray], np.ndarray]
    noise_scale: float = 1.0
    hs_bound: float = 10.0
    meta: AssumptionMeta = field(default_factory=AssumptionMeta)
    params: Mapping[str, float] = field(default_factory=dict)

    family = "spde"

    def __post_init__(self):
        n = self.n_modes
        if n < 1:
            raise ModelError("mode count N must be positive")
        lam = np.asarray(self.lam, dtype=float)
        q = np.asarray(self.q, dtype=float)
        if lam.shape != (n,) or q.shape != (n,):
            raise ModelError("lam and q must have one entry per mode")
        if np.any(np.diff(lam) <= 0):
            raise ModelError("eigenvalues must be strictly increasing")
        if not lam[0] > self.lambda_f:
            raise ModelError(f"lambda_1={lam[0]} must exceed lambda_F={self.lambda_f}")
        if not 0 < self.beta1 <= 1:
            raise ModelError(f"beta1={self.beta1} outside (0, 1]")
        if np.any(q < 0):
            raise ModelError("noise weights must be nonnegative")
        hs = float(np.sum(lam ** (self.beta1 - 1) * q))
        if hs > self.hs_bound:
            raise ModelError(f"truncated Hilbert-Schmidt sum {hs} exceeds bound {self.hs_bound}")
        m = 2 * n + 1
        xi = np.arange(1, m + 1) / (m + 1)
        basis = np.sqrt(2.0) * np.sin(np.pi * np.outer(np.arange(1, n + 1), xi))
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "grid", xi)
        object.__setattr__(self, "_basis", basis)
        # DF[r, j, l] = sum_m S[j, m] S[l, m] f'(u)[r, m] / (M + 1) as one product
        pairs = np.einsum("jm,lm->mjl", basis, basis).reshape(m, n * n) / (m + 1)
        object.__setattr__(self, "_pairs", pairs)

    @property
    def h(self) -> float:
        return 1.0 / self.n_modes

    @property
    def state_shape(self) -> tuple[int, ...]:
        return (self.n_modes,)

    @property
    def noise_width(self) -> int:
        return self.n_modes

    @property
    def noise_std(self) -> np.ndarray:
        return self.noise_scale * np.sqrt(self.q)

    def to_physical(self, modes):
        return modes @ self._basis

    def to_modes(self, values):
        return values @ self._basis.T / (self.grid.size + 1)

    def F(self, modes):
        """Projected nonlinearity P^h F on mode coefficients, ``(R, N)``."""
        return self.to_modes(self.f(self.to_physical(modes)))

    def DF(self, modes):
        """Jacobian of the projected nonlinearity, ``(R, N, N)``."""
        dfu = self.df(self.to_physical(modes))
        n = self.n_modes
        return (dfu @ self._pairs).reshape(-1, n, n)

    def norm(self, values):
        return _euclid(values)

    def zero_state(self, replicas: int = 1) -> np.ndarray:
        return np.zeros((replicas, self.n_modes))

    def one_sided_excess(self, a, b):
        """<a - b, PF(a) - PF(b)> - lambda_F |a - b|^2 per pair."""
        d = a - b
        return (np.einsum("ri,ri->r", d, self.F(a) - self.F(b))
                - self.lambda_f * np.einsum("ri,ri->r", d, d))


@dataclass(frozen=True, eq=False)
class SfdeModel:
    """dX(t) = b(X_t) dt + sigma(X_t) dW with segment X_t on [-delay, 0].

    ``constants`` holds L1..L6 of the standing hypotheses; ``nu1``/``nu2`` are
    probability weights on the segment grid nodes.
    """

    name: str
    dim: int
    noise_dim: int
    delay: Fraction
    n_seg: int
    drift: Callable[[np.ndarray], np.ndarray]
    diffusion: Callable[[np.ndarray], np.ndarray]
    constants: Mapping[str, float]
    ell: float
    nu1: np.ndarray
    nu2: np.ndarray
    initial: np.ndarray
    additive: bool = False
    meta: AssumptionMeta = field(default_factory=AssumptionMeta)
    params: Mapping[str, float] = field(default_factory=dict)

    family = "sfde"

    def __post_init__(self):
        if self.n_seg < 1 or self.dim < 1 or self.noise_dim < 1:
            raise ModelError("n_seg, dim and noise_dim must be positive")
        if not self.delay > 0:
            raise ModelError("delay must be > 0")
        c = self.constants
        missing = {"L1", "L2", "L3", "L4", "L5", "L6"} - set(c)
        if missing:
            raise ModelError(f"missing hypothesis constants {sorted(missing)}")
        if any(c[k] <= 0 for k in ("L1", "L2", "L3", "L4", "L5", "L6")):
            raise ModelError("hypothesis constants must be positive")
        if not c["L3"] > c["L1"] + c["L4"]:
            raise ModelError(
                f"dissipativity gap violated: L3={c['L3']} <= L1 + L4 = {c['L1'] + c['L4']}")
        if self.ell < 0.5:
            raise ModelError("Hölder exponent ell must be >= 1/2")
        for name in ("nu1", "nu2"):
            w = np.asarray(getattr(self, name), dtype=float)
            if w.shape != (self.n_seg + 1,) or np.any(w < 0) or not math.isclose(w.sum(), 1.0, abs_tol=1e-12):
                raise ModelError(f"{name} must be nonnegative grid weights summing to 1")
            object.__setattr__(self, name, w)
        init = np.asarray(self.initial, dtype=float).reshape(self.n_seg + 1, self.dim)
        object.__setattr__(self, "initial", init)
        th = self.grid
        gap = np.abs(th[:, None] - th[None, :])
        diff = np.linalg.norm(init[:, None, :] - init[None, :, :], axis=-1)
        bound = c["L6"] * gap ** self.ell
        if np.any(diff > bound * (1 + 1e-12) + 1e-12):
            raise ModelError("initial segment violates the declared Hölder bound")

    @property
    def tau_exact(self) -> Fraction:
        return self.delay / self.n_seg

    @property
    def tau(self) -> float:
        return float(self.tau_exact)

    @property
    def grid(self) -> np.ndarray:
        return np.array([float(self.tau_exact * j) for j in range(-self.n_seg, 1)])

    @property
    def state_shape(self) -> tuple[int, ...]:
        return (self.n_seg + 1, self.dim)

    @property
    def noise_width(self) -> int:
        return self.noise_dim

    def b(self, seg):
        return self.drift(seg)

    def sigma(self, seg):
        return self.diffusion(seg)

    def norm(self, values):
        """Sup norm over the segment nodes."""
        return np.max(np.linalg.norm(values, axis=-1), axis=-1)

    def zero_state(self, replicas: int = 1) -> np.ndarray:
        return np.zeros((replicas,) + self.state_shape)

    def initial_state(self, replicas: int = 1) -> np.ndarray:
        return np.broadcast_to(self.initial, (replicas,) + self.state_shape).copy()

    def with_resolution(self, n_seg: int) -> "SfdeModel":
        """Rebuild the same builtin model on a finer segment grid."""
        params = dict(self.params)
        params["Nseg"] = n_seg
        return builtin_model(self.name, params)


ModelSpec = Union[SodeModel, SpectralSpdeModel, SfdeModel]


# --------------------------------------------------------------------------
# registry

_DEFAULTS: dict[str, dict[str, float | None]] = {
    "ou": {"theta": 1.0, "sigma": 1.0, "d": 1},
    "double_well": {"sigma": 1.0, "multiplicative": 0, "d": 1},
    "allen_cahn": {"N": None, "beta1": 1.0, "sigma": 1.0},
    "stochastic_heat": {"N": None, "beta1": 1.0, "sigma": 1.0},
    "linear_delay": {"a": None, "b": None, "delta0": None, "Nseg": None, "sigma": None,
                     "x0": 0.0, "L1": 0.1, "L6": 1.0, "ell": 1.0},
}

MODEL_NAMES = tuple(_DEFAULTS)


def _resolve(name: str, params: Mapping[str, float]) -> dict:
    if name not in _DEFAULTS:
        raise ModelError(f"unknown model {name!r}; expected one of {', '.join(MODEL_NAMES)}")
    spec = _DEFAULTS[name]
    unknown = set(params) - set(spec)
    if unknown:
        raise ModelError(f"unknown parameter(s) {sorted(unknown)} for model {name!r}")
    out = {}
    for key, default in spec.items():
        if key in params:
            out[key] = params[key]
        elif default is None:
            raise ModelError(f"model {name!r} requires parameter {key!r}")
        else:
            out[key] = default
    return out


def _positive_int(p, key):
    v = p[key]
    if int(v) != v or v < 1:
        raise ModelError(f"parameter {key!r}={v} must be a positive integer")
    return int(v)


def builtin_model(name: str, params: Mapping[str, float] | None = None) -> ModelSpec:
    """Build one of the registered models from flat scalar parameters."""
    p = _resolve(name, dict(params or {}))
    if name == "ou":
        return _ou(p)
    if name == "double_well":
        return _double_well(p)
    if name in ("allen_cahn", "stochastic_heat"):
        return _spectral(name, p)
    return _linear_delay(p)


def _ou(p) -> SodeModel:
    theta, sigma, d = float(p["theta"]), float(p["sigma"]), _positive_int(p, "d")
    if not theta > 0:
        raise ModelError(f"parameter 'theta'={theta} must be > 0")
    if sigma < 0:
        raise ModelError(f"parameter 'sigma'={sigma} must be >= 0")
    eye = np.eye(d)
    return SodeModel(
        name="ou", dim=d, noise_dim=d,
        drift=lambda x: -theta * x,
        diffusion=lambda x: np.broadcast_to(sigma * eye, (x.shape[0], d, d)),
        drift_jac=lambda x: np.broadcast_to(-theta * eye, (x.shape[0], d, d)),
        c_dis=theta, growth_degree=1.0, additive=True,
        meta=AssumptionMeta(alpha=(0.0, 0.5), mixing_rate=theta),
        params={"theta": theta, "sigma": sigma, "d": d}, linear_rate=theta,
    )


def _double_well(p) -> SodeModel:
    sigma, d = float(p["sigma"]), _positive_int(p, "d")
    mult = bool(p["multiplicative"])
    if sigma < 0:
        raise ModelError(f"parameter 'sigma'={sigma} must be >= 0")
    eye = np.eye(d)

    def drift(x):
        return x - x * x * x

    def jac(x):
        return (1.0 - 3.0 * x * x)[:, :, None] * eye

    if mult:
        def diffusion(x):
            return (sigma * (1.0 + np.sin(x)))[:, :, None] * eye
    else:
        def diffusion(x):
            return np.broadcast_to(sigma * eye, (x.shape[0], d, d))

    # (x-y)(b(x)-b(y)) = (x-y)^2 (1 - (x^2+xy+y^2)) <= -|x-y|^2 + 4 per coordinate
    return SodeModel(
        name="double_well", dim=d, noise_dim=d, drift=drift, diffusion=diffusion,
        drift_jac=jac, c_dis=1.0, dis_const=4.0 * d, growth_degree=3.0,
        additive=not mult, meta=AssumptionMeta(alpha=(0.0, 0.5)),
        params={"sigma": sigma, "multiplicative": int(mult), "d": d},
    )


def _spectral(name, p) -> SpectralSpdeModel:
    n = _positive_int(p, "N")
    beta1, sigma = float(p["beta1"]), float(p["sigma"])
    if not 0 < beta1 <= 1:
        raise ModelError(f"parameter 'beta1'={beta1} outside (0, 1]")
    lam = (np.pi * np.arange(1, n + 1)) ** 2
    q = lam ** (-beta1)
    if name == "allen_cahn":
        f = lambda u: u - u * u * u
        df = lambda u: 1.0 - 3.0 * u * u
        lambda_f = 1.0
    else:
        f = lambda u: np.zeros_like(u)
        df = lambda u: np.zeros_like(u)
        lambda_f = 0.0
    return SpectralSpdeModel(
        name=name, n_modes=n, lam=lam, q=q, beta1=beta1, lambda_f=lambda_f,
        f=f, df=df, noise_scale=sigma,
        meta=AssumptionMeta(alpha=(beta1, beta1 / 2), spatial=True,
                            mixing_rate=float(lam[0] - lambda_f)),
        params={"N": n, "beta1": beta1, "sigma": sigma},
    )


def _linear_delay(p) -> SfdeModel:
    a, b, sigma = float(p["a"]), float(p["b"]), float(p["sigma"])
    n_seg = _positive_int(p, "Nseg")
    delay = Fraction(str(p["delta0"]))
    if not delay > 0:
        raise ModelError("parameter 'delta0' must be > 0")
    if delay / n_seg > 1:
        raise ModelError("step delta0 / Nseg must lie in (0, 1]")
    if sigma < 0:
        raise ModelError("parameter 'sigma' must be >= 0")
    # b(phi) = -a phi(0) + b phi(-delta0).  With nu2 split evenly between the
    # two ends, b xy <= |b| (x^2 + y^2) / 2 reads off L3 = a and L4 = |b|;
    # Cauchy-Schwarz with weights (3/2, 1/2) gives L5.
    constants = {
        "L1": float(p["L1"]),
        "L2": max(abs(sigma), 1e-12),
        "L3": a,
        "L4": max(abs(b), 1e-12),
        "L5": 2 * a * a / 3 + 2 * b * b,
        "L6": float(p["L6"]),
    }
    nu1 = np.zeros(n_seg + 1)
    nu1[0] = 1.0
    nu2 = np.zeros(n_seg + 1)
    nu2[0] = nu2[-1] = 0.5

    def drift(seg):
        return -a * seg[:, -1, :] + b * seg[:, 0, :]

    def diffusion(seg):
        return np.full((seg.shape[0], 1, 1), sigma)

    return SfdeModel(
        name="linear_delay", dim=1, noise_dim=1, delay=delay, n_seg=n_seg,
        drift=drift, diffusion=diffusion, constants=constants,
        ell=float(p["ell"]), nu1=nu1, nu2=nu2,
        initial=np.full((n_seg + 1, 1), float(p["x0"])), additive=True,
        meta=AssumptionMeta(alpha=(0.0, 0.5)),
        params={k: p[k] for k in _DEFAULTS["linear_delay"]},
    )


# --------------------------------------------------------------------------
# hypothesis validation for delay models

@dataclass
class ValidationReport:
    ratios: dict[str, float]
    passed: dict[str, bool]
    samples: int
    box: float

    @property
    def verdict(self) -> bool:
        return all(self.passed.values())

    def to_dict(self):
        return {"ratios": dict(self.ratios), "passed": dict(self.passed),
                "samples": self.samples, "box": self.box, "verdict": self.verdict}


def _ratio(lhs, rhs):
    rhs = np.maximum(rhs, 1e-300)
    return float(np.max(lhs / rhs))


def validate_hypotheses(model: SfdeModel, samples: int = 1000, rng_seed: int = 0,
                        box: float = 2.0, tol: float = 1e-9) -> ValidationReport:
    """Worst observed ratio lhs/rhs of each hypothesis inequality on random
    segment pairs drawn from ``[-box, box]`` node values (plus the constant
    corner segments)."""
    rng = np.random.default_rng(rng_seed)
    shape = model.state_shape
    s1 = rng.uniform(-box, box, size=(samples,) + shape)
    s2 = rng.uniform(-box, box, size=(samples,) + shape)
    corners = np.stack([np.full(shape, box), np.full(shape, -box)])
    s1 = np.concatenate([s1, corners, corners[::-1]])
    s2 = np.concatenate([s2, corners[::-1], np.zeros((2,) + shape)])
    c = model.constants
    d = s1 - s2
    d0 = np.sum(d[:, -1, :] ** 2, axis=-1)
    nu1 = np.einsum("n,rn->r", model.nu1, np.sum(d ** 2, axis=-1))
    nu2 = np.einsum("n,rn->r", model.nu2, np.sum(d ** 2, axis=-1))

    sig1, sig2 = model.sigma(s1), model.sigma(s2)
    r_h1_lip = _ratio(np.sum((sig1 - sig2) ** 2, axis=(1, 2)), c["L1"] * (d0 + nu1))
    sig_norm = np.sqrt(np.sum(sig1 ** 2, axis=(1, 2)))
    r_h1_bound = float(np.max(sig_norm)) / c["L2"]

    db = model.b(s1) - model.b(s2)
    inner = np.einsum("ri,ri->r", d[:, -1, :], db)
    # <d0, db> + L3 |d0|^2 <= L4 int |d|^2 dnu2
    r_h2_dis = _ratio(inner + c["L3"] * d0, c["L4"] * nu2)
    r_h2_lip = _ratio(np.sum(db ** 2, axis=-1), c["L5"] * (d0 + nu2))

    th = model.grid
    init = model.initial
    iu = np.triu_indices(th.size, k=1)
    gap = np.abs(th[iu[0]] - th[iu[1]])
    jump = np.linalg.norm(init[iu[0]] - init[iu[1]], axis=-1)
    r_h3 = _ratio(jump, c["L6"] * gap ** model.ell) if gap.size else 0.0

    ratios = {"H1": max(r_h1_lip, r_h1_bound), "H2": max(r_h2_dis, r_h2_lip), "H3": r_h3}
    detail = {"H1_lipschitz": r_h1_lip, "H1_bound": r_h1_bound,
              "H2_dissipative": r_h2_dis, "H2_lipschitz": r_h2_lip}
    ratios.update(detail)
    passed = {k: ratios[k] <= 1 + tol for k in ("H1", "H2", "H3")}
    return ValidationReport(ratios=ratios, passed=passed, samples=samples, box=box)
