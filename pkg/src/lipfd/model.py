"""State-space plant and residual-structure models.

The plant class covers systems of the form

    xdot = A x + B u + phi(x, u) + D1 d + Q1 f
    y    = C x + D2 d + Q2 f

where phi is Lipschitz in x with a declared constant.  Residual
structures hold the second-order coefficient matrices of an analytical
redundancy relation

    r = M1 ydd + M2 yd + M3 y + N1 udd + N2 ud + N3 u + Psi(y, u)

with Psi Lipschitz in y (bound matrix Upsilon).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


class ContractViolation(ValueError):
    """Raised when an operation's preconditions are violated."""


def _matrix(name: str, value, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.ndim != 2:
        raise ContractViolation(f"{name} must be a 2-d matrix, got ndim={arr.ndim}")
    if rows is not None and arr.shape[0] != rows:
        raise ContractViolation(f"{name} must have {rows} rows, got {arr.shape[0]}")
    if cols is not None and arr.shape[1] != cols:
        raise ContractViolation(f"{name} must have {cols} cols, got {arr.shape[1]}")
    arr.setflags(write=False)
    return arr


def _vector(name: str, value, size: int) -> np.ndarray:
    arr = np.asarray(value, dtype=float).reshape(-1)
    if arr.shape[0] != size:
        raise ContractViolation(f"{name} must have length {size}, got {arr.shape[0]}")
    return arr


# ---------------------------------------------------------------------------
# nonlinearity registry
# ---------------------------------------------------------------------------

def _phi_none(n: int):
    zero = np.zeros(n)

    def ev(x, u=None):
        return zero.copy()

    return ev


def _phi_manipulator_gravity(mgh: float):
    # gravity torque on the link enters the third state equation
    def ev(x, u=None):
        x = np.asarray(x, dtype=float)
        out = np.zeros(4)
        out[2] = -mgh * np.sin(x[3])
        return out

    return ev


def _psi_none(r: int):
    def ev(y, u=None):
        y = np.asarray(y, dtype=float)
        if y.ndim == 2:
            return np.zeros((y.shape[0], r))
        return np.zeros(r)

    return ev


def _psi_manipulator_gravity(mgh: float):
    # Psi(y, u) = (0, mgh sin y2); independent of u.  The sign is fixed by
    # requiring the fault-free ARR to vanish on the plant's trajectories
    # (the link equation carries -mgh sin x4, so the torque-balance
    # residual needs +mgh sin y2).  Accepts a single output vector or a
    # (samples, 2) trajectory.
    def ev(y, u=None):
        y = np.asarray(y, dtype=float)
        if y.ndim == 2:
            out = np.zeros_like(y)
            out[:, 1] = mgh * np.sin(y[:, 1])
            return out
        return np.array([0.0, mgh * np.sin(y[1])])

    return ev


PHI_REGISTRY = {
    "none": _phi_none,
    "manipulator_gravity": _phi_manipulator_gravity,
}

PSI_REGISTRY = {
    "none": _psi_none,
    "manipulator_gravity": _psi_manipulator_gravity,
}


def registry_phi(name: str, **params):
    """Build a registered nonlinearity evaluator, e.g. registry_phi("manipulator_gravity", mgh=0.3087)."""
    try:
        factory = PHI_REGISTRY[name]
    except KeyError:
        raise ContractViolation(f"unknown nonlinearity {name!r}; known: {sorted(PHI_REGISTRY)}")
    return factory(**params)


@dataclass(frozen=True)
class NonlinearMap:
    """An evaluable state nonlinearity with a declared Lipschitz bound.

    evaluator(x, u) must return a state-dimension vector; u may be None
    when the map is evaluated for bound estimation only.  domain_box is
    an (n, 2) array of per-coordinate [lo, hi] bounds used for sampling.
    registry_name/registry_params identify a serializable registry entry
    (custom evaluators leave them None and cannot be serialized).
    """

    evaluator: Callable[[np.ndarray, Optional[np.ndarray]], np.ndarray]
    declared_lipschitz_bound: float
    domain_box: np.ndarray
    registry_name: Optional[str] = None
    registry_params: Optional[dict] = None

    def __post_init__(self):
        if self.declared_lipschitz_bound < 0:
            raise ContractViolation("declared_lipschitz_bound must be >= 0")
        box = np.array(self.domain_box, dtype=float)
        if box.ndim != 2 or box.shape[1] != 2:
            raise ContractViolation("domain_box must be an (n, 2) array of [lo, hi] rows")
        if np.any(box[:, 1] < box[:, 0]):
            raise ContractViolation("domain_box rows must satisfy lo <= hi")
        box.setflags(write=False)
        object.__setattr__(self, "domain_box", box)

    def __call__(self, x, u=None) -> np.ndarray:
        return np.asarray(self.evaluator(x, u), dtype=float)


def zero_map(n: int, domain_half_width: float = 10.0) -> NonlinearMap:
    box = np.column_stack([-domain_half_width * np.ones(n), domain_half_width * np.ones(n)])
    return NonlinearMap(_phi_none(n), 0.0, box, registry_name="none", registry_params={"n": n})


@dataclass(frozen=True)
class LipschitzPlant:
    """Plant matrices plus the Lipschitz nonlinearity (disturbance and fault channels included)."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D1: np.ndarray
    D2: np.ndarray
    Q1: np.ndarray
    Q2: np.ndarray
    phi: NonlinearMap

    def __post_init__(self):
        A = _matrix("A", self.A)
        n = A.shape[0]
        if A.shape[1] != n:
            raise ContractViolation("A must be square")
        B = _matrix("B", self.B, rows=n)
        C = _matrix("C", self.C, cols=n)
        l = C.shape[0]
        D1 = _matrix("D1", self.D1, rows=n)
        k1 = D1.shape[1]
        D2 = _matrix("D2", self.D2, rows=l, cols=k1)
        Q1 = _matrix("Q1", self.Q1, rows=n)
        k2 = Q1.shape[1]
        Q2 = _matrix("Q2", self.Q2, rows=l, cols=k2)
        for name, val in (("A", A), ("B", B), ("C", C), ("D1", D1), ("D2", D2), ("Q1", Q1), ("Q2", Q2)):
            object.__setattr__(self, name, val)
        if self.phi.domain_box.shape[0] != n:
            raise ContractViolation("phi.domain_box rows must equal the state dimension")
        probe = self.phi(np.zeros(n), np.zeros(B.shape[1]))
        if probe.shape != (n,):
            raise ContractViolation("phi evaluator must return a state-dimension vector")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def l(self) -> int:
        return self.C.shape[0]

    @property
    def k1(self) -> int:
        return self.D1.shape[1]

    @property
    def k2(self) -> int:
        return self.Q1.shape[1]


@dataclass(frozen=True)
class ResidualStructure:
    """Coefficient matrices and nonlinearity of a second-order ARR.

    M3n is the coefficient used by the linearized error-based residual.
    The printed derivation adds the Lipschitz bound matrix to M3 while
    the worked single-link example subtracts it; the sign is therefore
    data.  When M3n is not supplied it defaults to M3 - Upsilon, the
    worked-example convention.
    """

    M1: np.ndarray
    M2: np.ndarray
    M3: np.ndarray
    N1: np.ndarray
    N2: np.ndarray
    N3: np.ndarray
    Psi: Callable[[np.ndarray, Optional[np.ndarray]], np.ndarray]
    Upsilon: np.ndarray
    M3n: Optional[np.ndarray] = None
    psi_registry_name: Optional[str] = None
    psi_registry_params: Optional[dict] = None

    def __post_init__(self):
        M1 = _matrix("M1", self.M1)
        r, l = M1.shape
        M2 = _matrix("M2", self.M2, rows=r, cols=l)
        M3 = _matrix("M3", self.M3, rows=r, cols=l)
        N1 = _matrix("N1", self.N1, rows=r)
        m = N1.shape[1]
        N2 = _matrix("N2", self.N2, rows=r, cols=m)
        N3 = _matrix("N3", self.N3, rows=r, cols=m)
        Upsilon = _matrix("Upsilon", self.Upsilon, rows=r, cols=l)
        if np.any(Upsilon < 0):
            raise ContractViolation("Upsilon entries must be >= 0")
        M3n = self.M3n
        if M3n is None:
            M3n = M3 - Upsilon
        M3n = _matrix("M3n", M3n, rows=r, cols=l)
        for name, val in (("M1", M1), ("M2", M2), ("M3", M3), ("N1", N1),
                          ("N2", N2), ("N3", N3), ("Upsilon", Upsilon), ("M3n", M3n)):
            object.__setattr__(self, name, val)

    @property
    def r(self) -> int:
        return self.M1.shape[0]

    @property
    def l(self) -> int:
        return self.M1.shape[1]

    @property
    def m(self) -> int:
        return self.N1.shape[1]


@dataclass(frozen=True)
class UncertaintyEnvelope:
    """Norm-bounded parametric uncertainty: dA = Ma F Na, dB = Mb F Nb with ||F||_2 <= 1."""

    Ma: np.ndarray
    Na: np.ndarray
    Mb: np.ndarray
    Nb: np.ndarray
    contraction_bound: float = 1.0

    def __post_init__(self):
        Ma = _matrix("Ma", self.Ma)
        Na = _matrix("Na", self.Na)
        Mb = _matrix("Mb", self.Mb)
        Nb = _matrix("Nb", self.Nb)
        if Ma.shape[1] != Na.shape[0]:
            raise ContractViolation("Ma cols must equal Na rows")
        if Mb.shape[1] != Nb.shape[0]:
            raise ContractViolation("Mb cols must equal Nb rows")
        if Ma.shape[0] != Mb.shape[0]:
            raise ContractViolation("Ma and Mb must have the same row count (state dimension)")
        for name, val in (("Ma", Ma), ("Na", Na), ("Mb", Mb), ("Nb", Nb)):
            object.__setattr__(self, name, val)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def evaluate_dynamics(plant: LipschitzPlant, x, u, d, f) -> np.ndarray:
    """Right-hand side A x + B u + phi(x, u) + D1 d + Q1 f."""
    x = _vector("x", x, plant.n)
    u = _vector("u", u, plant.m)
    d = _vector("d", d, plant.k1)
    f = _vector("f", f, plant.k2)
    return plant.A @ x + plant.B @ u + plant.phi(x, u) + plant.D1 @ d + plant.Q1 @ f


def evaluate_output(plant: LipschitzPlant, x, d, f) -> np.ndarray:
    """Measurement C x + D2 d + Q2 f."""
    x = _vector("x", x, plant.n)
    d = _vector("d", d, plant.k1)
    f = _vector("f", f, plant.k2)
    return plant.C @ x + plant.D2 @ d + plant.Q2 @ f


def estimate_lipschitz_bound(nl_map: NonlinearMap, samples: int, seed: int, u=None) -> float:
    """Sampling estimate of the Lipschitz constant of a map over its domain box.

    Draws `samples` point pairs and returns the largest difference
    quotient ||phi(x) - phi(x')|| / ||x - x'||.  Even-indexed pairs are
    independent uniform draws (global probing); odd-indexed pairs
    perturb a single random coordinate of the first point by a random
    small scale, which resolves coordinate-aligned slopes such as the
    benchmark gravity term.  Deterministic for a fixed seed, and the
    pair sequence for a smaller sample count is a prefix of the
    sequence for a larger one, so the estimate is monotone in `samples`.
    """
    if samples < 2:
        raise ContractViolation("samples must be >= 2")
    box = nl_map.domain_box
    dim = box.shape[0]
    lo, hi = box[:, 0], box[:, 1]
    if not np.all(np.isfinite(box)):
        raise ContractViolation("domain_box must be finite")
    width = hi - lo
    if np.all(width == 0):
        raise ContractViolation("domain_box is empty (zero width in every coordinate)")

    rng = np.random.default_rng(seed)
    # each pair consumes one row of 2*dim+2 variates so prefixes are stable
    raw = rng.uniform(size=(samples, 2 * dim + 2))
    xa = lo + raw[:, :dim] * width
    xb = lo + raw[:, dim:2 * dim] * width
    axis = np.minimum((raw[:, 2 * dim] * dim).astype(int), dim - 1)
    scale = 10.0 ** (-8.0 + 6.0 * raw[:, 2 * dim + 1])

    best = 0.0
    for i in range(samples):
        a = xa[i]
        if i % 2 == 0:
            b = xb[i]
        else:
            b = a.copy()
            b[axis[i]] = a[axis[i]] + (xb[i, axis[i]] - a[axis[i]]) * scale[i]
        dist = np.linalg.norm(a - b)
        if dist == 0.0:
            continue
        diff = np.linalg.norm(nl_map(a, u) - nl_map(b, u))
        ratio = diff / dist
        if ratio > best:
            best = ratio
    return best


def wrap_uncertain(plant: LipschitzPlant, env: UncertaintyEnvelope, F,
                   tolerance: float = 1e-9) -> LipschitzPlant:
    """Absorb a realized parametric uncertainty into the nonlinearity.

    Returns a plant with the same nominal A, B and
    phi2(x, u) = Ma F Na x + Mb F Nb u + phi(x, u); the declared bound
    is inflated by ||Ma||_2 ||Na||_2, a valid upper bound for any
    contraction F.
    """
    F = np.atleast_2d(np.asarray(F, dtype=float))
    if F.shape != (env.Ma.shape[1], env.Na.shape[0]):
        raise ContractViolation("F shape must match the Ma/Na factorization")
    norm_f = np.linalg.norm(F, 2)
    if norm_f > env.contraction_bound + tolerance:
        raise ContractViolation(f"||F||_2 = {norm_f:.6g} exceeds the contraction bound")
    if env.Ma.shape[0] != plant.n:
        raise ContractViolation("envelope state dimension does not match the plant")

    dA = env.Ma @ F @ env.Na
    dB = env.Mb @ F @ env.Nb
    base = plant.phi

    def ev(x, u=None):
        out = dA @ np.asarray(x, dtype=float) + base(x, u)
        if u is not None:
            out = out + dB @ np.asarray(u, dtype=float)
        return out

    inflation = np.linalg.norm(env.Ma, 2) * np.linalg.norm(env.Na, 2)
    phi2 = NonlinearMap(ev, base.declared_lipschitz_bound + inflation, base.domain_box)
    return LipschitzPlant(plant.A, plant.B, plant.C, plant.D1, plant.D2,
                          plant.Q1, plant.Q2, phi2)


def transform_coordinates(plant: LipschitzPlant, T, condition_cap: float = 1e8) -> LipschitzPlant:
    """Similarity transform z = T x of the plant realization.

    A' = T A T^-1, B' = T B, C' = C T^-1, D1' = T D1, Q1' = T Q1,
    phi'(z, u) = T phi(T^-1 z, u); the output-side matrices D2, Q2 are
    unchanged.  T must be invertible with condition number below the cap.
    """
    T = _matrix("T", T, rows=plant.n, cols=plant.n)
    cond = np.linalg.cond(T)
    if not np.isfinite(cond) or cond > condition_cap:
        raise ContractViolation(f"T is singular or ill-conditioned (cond={cond:.3g})")
    Tinv = np.linalg.inv(T)
    base = plant.phi

    def ev(z, u=None):
        return T @ base(Tinv @ np.asarray(z, dtype=float), u)

    # image of the domain box under T, per-coordinate interval bound
    box = base.domain_box
    lo = np.minimum(T * box[:, 0], T * box[:, 1]).sum(axis=1)
    hi = np.maximum(T * box[:, 0], T * box[:, 1]).sum(axis=1)
    bound = base.declared_lipschitz_bound * np.linalg.norm(T, 2) * np.linalg.norm(Tinv, 2)
    phi_t = NonlinearMap(ev, bound, np.column_stack([lo, hi]))
    return LipschitzPlant(T @ plant.A @ Tinv, T @ plant.B, plant.C @ Tinv,
                          T @ plant.D1, plant.D2, T @ plant.Q1, plant.Q2, phi_t)


def check_psi_lipschitz(rs: ResidualStructure, samples: int, seed: int,
                        y_half_width: float = np.pi, u=None) -> float:
    """Largest componentwise violation of |Psi(y,u) - Psi(y',u)| <= Upsilon |y - y'|
    over sampled output pairs (<= 0 means the declared bound holds on the sample)."""
    rng = np.random.default_rng(seed)
    ya = rng.uniform(-y_half_width, y_half_width, size=(samples, rs.l))
    yb = rng.uniform(-y_half_width, y_half_width, size=(samples, rs.l))
    worst = -np.inf
    for a, b in zip(ya, yb):
        lhs = np.abs(np.asarray(rs.Psi(a, u)) - np.asarray(rs.Psi(b, u)))
        rhs = rs.Upsilon @ np.abs(a - b)
        worst = max(worst, float(np.max(lhs - rhs)))
    return worst
