"""Robust observer synthesis via semidefinite programming.

Solves  min eps - w*gamma  over P > 0, X, N, eps, gamma subject to a
block LMI that certifies: decay-rate-beta stability of the estimation
error, an H-infinity bound mu = sqrt(eps) from disturbance to output
estimation error, and validity for any nonlinearity with Lipschitz
constant up to gamma.  The observer gain is recovered as L = X^-T N.

Two assemblies of the LMI are provided.  The "printed" form follows the
source inequality verbatim; its (1,1) block C'C + 2*beta*P is positive
definite for any admissible P, so that program is infeasible for every
plant (the projection-lemma step behind it drops one of the two
null-space conditions).  The "repaired" form is the standard slack
relaxation with multiplier basis [I, lambda*I, 0]; it injects the
(A - LC)'X coupling into the first block row, is feasible, and implies
the same compressed inequality.  Solving uses the repaired form;
post-solve certificates rebuild the pre-Schur matrix and the null-space
compression and are the ground truth for accepting a design.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla

from .model import ContractViolation, LipschitzPlant, _matrix

PRINTED = "printed"
REPAIRED = "repaired"
CLASSICAL = "classical"
AUTO = "auto"

STATUS_OPTIMAL = "optimal"
STATUS_NEAR_OPTIMAL = "near_optimal"
STATUS_INFEASIBLE = "infeasible"
STATUS_UNBOUNDED = "unbounded"
STATUS_NUMERICAL_FAILURE = "numerical_failure"

_SOLVER_PREFERENCE = ("CLARABEL", "CVXOPT", "SCS")


def default_margin(A: np.ndarray) -> float:
    return 1e-7 * (1.0 + np.linalg.norm(A, "fro"))


@dataclass(frozen=True)
class SynthesisProblem:
    """Data of the observer LMI: plant matrices plus decay rate and multiplier weight."""

    A: np.ndarray
    C: np.ndarray
    D1: np.ndarray
    D2: np.ndarray
    beta: float = 1.0
    lam: float = 0.2
    strictness_margin: Optional[float] = None

    def __post_init__(self):
        A = _matrix("A", self.A)
        n = A.shape[0]
        if A.shape[1] != n:
            raise ContractViolation("A must be square")
        C = _matrix("C", self.C, cols=n)
        D1 = _matrix("D1", self.D1, rows=n)
        D2 = _matrix("D2", self.D2, rows=C.shape[0], cols=D1.shape[1])
        if self.beta <= 0:
            raise ContractViolation("beta must be > 0")
        if self.lam <= 0:
            raise ContractViolation("lambda must be > 0")
        margin = self.strictness_margin
        if margin is None:
            margin = default_margin(A)
        if margin <= 0:
            raise ContractViolation("strictness_margin must be > 0")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D1", D1)
        object.__setattr__(self, "D2", D2)
        object.__setattr__(self, "strictness_margin", float(margin))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def l(self) -> int:
        return self.C.shape[0]

    @property
    def k1(self) -> int:
        return self.D1.shape[1]

    @classmethod
    def from_plant(cls, plant: LipschitzPlant, beta: float = 1.0, lam: float = 0.2,
                   strictness_margin: Optional[float] = None) -> "SynthesisProblem":
        return cls(plant.A, plant.C, plant.D1, plant.D2, beta, lam, strictness_margin)


@dataclass(frozen=True)
class LmiBlockSpec:
    """Block-structured affine LMI: entry builders keyed by (row-block, col-block).

    Builders take the decision values (P, X, N, eps, gamma) -- numpy
    arrays/floats or cvxpy expressions -- and return the block, so the
    same spec serves numeric evaluation and conic solving.  Only the
    upper triangle is stored; assembly mirrors it.
    """

    block_rows: tuple
    entries: dict
    form: str

    @property
    def size(self) -> int:
        return sum(dim for _, dim in self.block_rows)

    def assemble(self, P, X, N, eps, gamma, bmat: Callable = np.block):
        """Full symmetric matrix at the given decision values.

        Pass ``bmat=cvxpy.bmat`` to build a cvxpy expression instead of
        a numpy array.
        """
        dims = [dim for _, dim in self.block_rows]
        k = len(dims)
        cells = [[None] * k for _ in range(k)]
        for i in range(k):
            for j in range(i, k):
                builder = self.entries.get((i, j))
                if builder is None:
                    cells[i][j] = np.zeros((dims[i], dims[j]))
                else:
                    cells[i][j] = builder(P, X, N, eps, gamma)
        for i in range(k):
            for j in range(i):
                upper = cells[j][i]
                cells[i][j] = upper.T
        return bmat(cells)


def assemble_lmi(problem: SynthesisProblem, form: str = PRINTED) -> LmiBlockSpec:
    """Build the 5x5 block LMI for the given problem data.

    ``form="printed"`` reproduces the source inequality exactly:
    (1,1)=C'C+2bP, (1,2)=gI, (1,3)=P, (1,4)=P+l*A'X-l*C'N', (1,5)=C'D2,
    (2,2)=(3,3)=-I, (4,4)=-l(X+X'), (4,5)=l*X'D1-l*N*D2,
    (5,5)=D2'D2-eI.  ``form="repaired"`` adds the closed-loop coupling
    (A'X-C'N') + transpose to (1,1), replaces (1,4) by
    P+l*(A'X-C'N')-X', and adds X'D1-N*D2 to (1,5); that variant is the
    feasible slack relaxation actually solved.  ``form="classical"`` is
    the multiplier-free 4-block program with X pinned to P (N = P L);
    it is exactly the compressed inequality and serves as fallback when
    the multiplier structure is infeasible for the given lambda.
    """
    if form not in (PRINTED, REPAIRED, CLASSICAL):
        raise ContractViolation(f"unknown LMI form {form!r}")
    A, C, D1, D2 = problem.A, problem.C, problem.D1, problem.D2
    n, l, k1 = problem.n, problem.l, problem.k1
    beta, lam = problem.beta, problem.lam
    CtC = C.T @ C
    CtD2 = C.T @ D2
    D2tD2 = D2.T @ D2
    I_n = np.eye(n)
    I_k1 = np.eye(k1)

    def acl_t_x(X, N):
        # (A - LC)' X expressed in the decision variables, N = X'L
        return A.T @ X - C.T @ N.T

    def x_t_dcl(X, N):
        # X'(D1 - L D2)
        return X.T @ D1 - N @ D2

    if form == CLASSICAL:
        def c00(P, X, N, e, g):
            cross = A.T @ P - C.T @ N.T
            return CtC + 2.0 * beta * P + cross + cross.T

        entries = {
            (0, 0): c00,
            (0, 1): lambda P, X, N, e, g: g * I_n,
            (0, 2): lambda P, X, N, e, g: P * 1.0,
            (0, 3): lambda P, X, N, e, g: P @ D1 - N @ D2 + CtD2,
            (1, 1): lambda P, X, N, e, g: -I_n,
            (2, 2): lambda P, X, N, e, g: -I_n,
            (3, 3): lambda P, X, N, e, g: D2tD2 - e * I_k1,
        }
        block_rows = (("e", n), ("lips", n), ("pp", n), ("dist", k1))
        return LmiBlockSpec(block_rows=block_rows, entries=entries, form=form)

    entries = {
        (0, 1): lambda P, X, N, e, g: g * I_n,
        (0, 2): lambda P, X, N, e, g: P * 1.0,
        (0, 4): lambda P, X, N, e, g: CtD2,
        (1, 1): lambda P, X, N, e, g: -I_n,
        (2, 2): lambda P, X, N, e, g: -I_n,
        (3, 3): lambda P, X, N, e, g: -lam * X - lam * X.T,
        (3, 4): lambda P, X, N, e, g: lam * x_t_dcl(X, N),
        (4, 4): lambda P, X, N, e, g: D2tD2 - e * I_k1,
    }
    if form == PRINTED:
        entries[(0, 0)] = lambda P, X, N, e, g: CtC + 2.0 * beta * P
        entries[(0, 3)] = lambda P, X, N, e, g: P + lam * acl_t_x(X, N)
        # (0,4) stays C'D2
    else:
        def m00(P, X, N, e, g):
            cross = acl_t_x(X, N)
            return CtC + 2.0 * beta * P + cross + cross.T

        entries[(0, 0)] = m00
        entries[(0, 3)] = lambda P, X, N, e, g: P + lam * acl_t_x(X, N) - X.T
        entries[(0, 4)] = lambda P, X, N, e, g: CtD2 + x_t_dcl(X, N)

    block_rows = (("e", n), ("lips", n), ("pp", n), ("proj", n), ("dist", k1))
    return LmiBlockSpec(block_rows=block_rows, entries=entries, form=form)


@dataclass(frozen=True)
class CertificateReport:
    """Post-solve eigenvalue certificates; all four headline scalars must be < 0."""

    lmi_max_eig: float
    preschur_max_eig: float
    closedloop_spectral_abscissa: float
    decay_max_eig: float
    nullspace_max_eig: float
    passed: bool

    def as_dict(self) -> dict:
        return {
            "lmi_max_eig": self.lmi_max_eig,
            "preschur_max_eig": self.preschur_max_eig,
            "closedloop_spectral_abscissa": self.closedloop_spectral_abscissa,
            "decay_max_eig": self.decay_max_eig,
            "nullspace_max_eig": self.nullspace_max_eig,
            "passed": self.passed,
        }


@dataclass(frozen=True)
class ObserverDesign:
    L: Optional[np.ndarray]
    P: Optional[np.ndarray]
    X: Optional[np.ndarray]
    N: Optional[np.ndarray]
    epsilon: Optional[float]
    mu: Optional[float]
    gamma: Optional[float]
    solver_status: str
    certificates: Optional[CertificateReport]
    meta: dict = field(default_factory=dict)


def preschur_matrix(problem: SynthesisProblem, L: np.ndarray, P: np.ndarray,
                    X: np.ndarray, epsilon: float, gamma: float,
                    form: str = REPAIRED) -> np.ndarray:
    """Pre-Schur 3x3 block matrix with the quadratic terms PP and gamma^2 I expanded.

    The printed variant is the source Eq.; the repaired variant carries
    the same slack coupling used by the solve (and is the one that can
    actually be negative definite).
    """
    A, C, D1, D2 = problem.A, problem.C, problem.D1, problem.D2
    n, k1 = problem.n, problem.k1
    beta, lam = problem.beta, problem.lam
    Acl = A - L @ C
    Dcl = D1 - L @ D2
    sigma = 2.0 * beta * P + P @ P + gamma ** 2 * np.eye(n) + C.T @ C
    if form == CLASSICAL:
        m11 = sigma + Acl.T @ P + P @ Acl
        m12 = P @ Dcl + C.T @ D2
        m22 = D2.T @ D2 - epsilon * np.eye(k1)
        return np.block([[m11, m12], [m12.T, m22]])
    acl_t_x = Acl.T @ X
    if form == PRINTED:
        m11 = sigma
        m12 = P + lam * acl_t_x
        m13 = C.T @ D2
    else:
        m11 = sigma + acl_t_x + acl_t_x.T
        m12 = P + lam * acl_t_x - X.T
        m13 = C.T @ D2 + X.T @ Dcl
    m22 = -lam * (X + X.T)
    m23 = lam * X.T @ Dcl
    m33 = D2.T @ D2 - epsilon * np.eye(k1)
    return np.block([
        [m11, m12, m13],
        [m12.T, m22, m23],
        [m13.T, m23.T, m33],
    ])


def _certificates(problem: SynthesisProblem, L, P, X, N, epsilon, gamma,
                  form: str) -> CertificateReport:
    A, C, D1, D2 = problem.A, problem.C, problem.D1, problem.D2
    n, k1 = problem.n, problem.k1
    beta = problem.beta
    Acl = A - L @ C
    Dcl = D1 - L @ D2

    spec = assemble_lmi(problem, form=form)
    lmi_eig = float(np.max(np.linalg.eigvalsh(spec.assemble(P, X, N, epsilon, gamma))))
    pre_eig = float(np.max(np.linalg.eigvalsh(
        preschur_matrix(problem, L, P, X, epsilon, gamma, form=form))))
    abscissa = float(np.max(np.real(np.linalg.eigvals(Acl))))
    decay = Acl.T @ P + P @ Acl + 2.0 * beta * P + P @ P + gamma ** 2 * np.eye(n)
    decay_eig = float(np.max(np.linalg.eigvalsh(decay)))

    # Lemma-1 consistency: compress the multiplier-free matrix onto null([Acl -I Dcl]);
    # this is the actual H-infinity requirement and is form-independent.
    U = np.hstack([Acl, -np.eye(n), Dcl])
    NU = sla.null_space(U)
    Z = np.block([
        [2.0 * beta * P + P @ P + gamma ** 2 * np.eye(n) + C.T @ C, P, C.T @ D2],
        [P, np.zeros((n, n)), np.zeros((n, k1))],
        [(C.T @ D2).T, np.zeros((k1, n)), D2.T @ D2 - epsilon * np.eye(k1)],
    ])
    null_eig = float(np.max(np.linalg.eigvalsh(NU.T @ Z @ NU)))

    passed = lmi_eig < 0 and pre_eig < 0 and abscissa < 0 and decay_eig < 0
    return CertificateReport(lmi_eig, pre_eig, abscissa, decay_eig, null_eig, passed)


def verify_certificates(problem: SynthesisProblem, design: ObserverDesign) -> CertificateReport:
    """Recompute the eigenvalue certificates of a solved design from scratch."""
    if design.solver_status not in (STATUS_OPTIMAL, STATUS_NEAR_OPTIMAL):
        raise ContractViolation("certificates require an optimal or near-optimal design")
    form = design.meta.get("form", REPAIRED)
    return _certificates(problem, design.L, design.P, design.X, design.N,
                         design.mu ** 2, design.gamma, form)


def _solve_form(problem: SynthesisProblem, form: str, weight: float,
                fix_gamma, solvers, verbose: bool):
    import cvxpy as cp

    n, l = problem.n, problem.l
    delta = problem.strictness_margin
    spec = assemble_lmi(problem, form=form)

    P = cp.Variable((n, n), symmetric=True)
    X = P if form == CLASSICAL else cp.Variable((n, n))
    N = cp.Variable((n, l))
    eps = cp.Variable()
    gam = cp.Variable()

    M = spec.assemble(P, X, N, eps, gam, bmat=cp.bmat)
    constraints = [
        M << -delta * np.eye(spec.size),
        P >> delta * np.eye(n),
        eps >= delta,
        gam >= 0,
    ]
    if fix_gamma is not None:
        constraints.append(gam == float(fix_gamma))
    prob = cp.Problem(cp.Minimize(eps - weight * gam), constraints)

    status = None
    used_solver = None
    for solver in solvers:
        try:
            prob.solve(solver=solver, verbose=verbose)
        except cp.error.SolverError:
            status = STATUS_NUMERICAL_FAILURE
            continue
        used_solver = solver
        if prob.status in ("optimal", "optimal_inaccurate"):
            status = STATUS_OPTIMAL if prob.status == "optimal" else STATUS_NEAR_OPTIMAL
            break
        if prob.status in ("infeasible", "infeasible_inaccurate"):
            status = STATUS_INFEASIBLE
            break
        if prob.status in ("unbounded", "unbounded_inaccurate"):
            status = STATUS_UNBOUNDED
            break
        status = STATUS_NUMERICAL_FAILURE

    values = None
    if status in (STATUS_OPTIMAL, STATUS_NEAR_OPTIMAL):
        values = (P.value, (P if form == CLASSICAL else X).value, N.value,
                  float(eps.value), float(gam.value))
    elif status == STATUS_NUMERICAL_FAILURE and P.value is not None:
        values = (P.value, None if form == CLASSICAL else X.value, N.value,
                  None if eps.value is None else float(eps.value),
                  None if gam.value is None else float(gam.value))
    return status or STATUS_NUMERICAL_FAILURE, used_solver, values


def solve_design(problem: SynthesisProblem, solver_opts: Optional[dict] = None) -> ObserverDesign:
    """Solve  min eps - w*gamma  subject to the observer LMI.

    solver_opts keys (all optional):
      objective_weight : weight w on gamma (default 0.2; 1.0 is the
                         literal source objective, which over-trades
                         attenuation for Lipschitz margin on the
                         benchmark)
      form             : "auto" (default: repaired, then classical when
                         the multiplier structure is infeasible for the
                         given lambda), or an explicit
                         "printed"/"repaired"/"classical"
      fix_gamma        : pin gamma to a value instead of optimizing it
      solvers          : iterable of cvxpy solver names to try in order
      verbose          : pass-through to cvxpy
    """
    opts = dict(solver_opts or {})
    weight = float(opts.pop("objective_weight", 0.2))
    form = opts.pop("form", AUTO)
    fix_gamma = opts.pop("fix_gamma", None)
    solvers = tuple(opts.pop("solvers", _SOLVER_PREFERENCE))
    verbose = bool(opts.pop("verbose", False))
    if opts:
        raise ContractViolation(f"unknown solver_opts keys: {sorted(opts)}")
    if form not in (AUTO, PRINTED, REPAIRED, CLASSICAL):
        raise ContractViolation(f"unknown LMI form {form!r}")

    attempts = [REPAIRED, CLASSICAL] if form == AUTO else [form]
    meta = {"objective_weight": weight, "beta": problem.beta,
            "lambda": problem.lam, "delta": problem.strictness_margin}
    status, used_solver, values = None, None, None
    solved_form = attempts[-1]
    for attempt in attempts:
        status, used_solver, values = _solve_form(problem, attempt, weight,
                                                  fix_gamma, solvers, verbose)
        solved_form = attempt
        if status in (STATUS_OPTIMAL, STATUS_NEAR_OPTIMAL):
            break
        if status != STATUS_INFEASIBLE:
            break
    meta["form"] = solved_form
    meta["solver"] = used_solver
    if form == AUTO and solved_form == CLASSICAL and status in (
            STATUS_OPTIMAL, STATUS_NEAR_OPTIMAL):
        meta["fallback"] = "multiplier form infeasible at this lambda"

    if status not in (STATUS_OPTIMAL, STATUS_NEAR_OPTIMAL):
        best = None
        if status == STATUS_NUMERICAL_FAILURE and values is not None:
            best = {"P": values[0], "X": values[1], "N": values[2],
                    "epsilon": values[3], "gamma": values[4]}
        meta["best_iterate"] = best
        return ObserverDesign(None, None, None, None, None, None, None,
                              status, None, meta)

    P_v, X_v, N_v, eps_v, gam_v = values
    L = np.linalg.solve(X_v.T, N_v)
    mu = float(np.sqrt(eps_v))
    certificates = _certificates(problem, L, P_v, X_v, N_v, eps_v, gam_v, solved_form)
    return ObserverDesign(L=L, P=P_v, X=X_v, N=N_v, epsilon=eps_v, mu=mu,
                          gamma=gam_v, solver_status=status,
                          certificates=certificates, meta=meta)


def lipschitz_margin_check(design: ObserverDesign, plant: LipschitzPlant) -> bool:
    """True iff the synthesized gamma dominates the plant's declared Lipschitz bound."""
    if design.certificates is None or not design.certificates.passed:
        raise ContractViolation("margin check requires a design with passing certificates")
    return plant.phi.declared_lipschitz_bound <= design.gamma


# ---------------------------------------------------------------------------
# sparse triplet dump and design serialization
# ---------------------------------------------------------------------------

def lmi_triplets(spec: LmiBlockSpec, problem: SynthesisProblem):
    """Decompose the assembled LMI into (row, col, variable-name, coefficient) triplets.

    The matrix is affine in the decision variables, so probing each
    scalar variable with a unit value (others zero) recovers its
    coefficient pattern exactly; the all-zeros evaluation gives the
    constant part (named "const").  Symmetric-variable entries P[i,j]
    (i < j) are probed with the symmetric unit pair.
    """
    n, l = problem.n, problem.l
    zP, zX, zN = np.zeros((n, n)), np.zeros((n, n)), np.zeros((n, l))

    def emit(name, mat, out):
        rows, cols = np.nonzero(mat)
        for r, c in zip(rows, cols):
            out.append((int(r), int(c), name, float(mat[r, c])))

    triplets = []
    const = spec.assemble(zP, zX, zN, 0.0, 0.0)
    emit("const", const, triplets)

    for i in range(n):
        for j in range(i, n):
            E = np.zeros((n, n))
            E[i, j] = 1.0
            E[j, i] = 1.0
            emit(f"P[{i},{j}]", spec.assemble(E, zX, zN, 0.0, 0.0) - const, triplets)
    for i in range(n):
        for j in range(n):
            E = np.zeros((n, n))
            E[i, j] = 1.0
            emit(f"X[{i},{j}]", spec.assemble(zP, E, zN, 0.0, 0.0) - const, triplets)
    for i in range(n):
        for j in range(l):
            E = np.zeros((n, l))
            E[i, j] = 1.0
            emit(f"N[{i},{j}]", spec.assemble(zP, zX, E, 0.0, 0.0) - const, triplets)
    emit("eps", spec.assemble(zP, zX, zN, 1.0, 0.0) - const, triplets)
    emit("gamma", spec.assemble(zP, zX, zN, 0.0, 1.0) - const, triplets)
    return triplets


def write_lmi_triplets(spec: LmiBlockSpec, problem: SynthesisProblem, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"# lipfd LMI triplets form={spec.form} size={spec.size}\n")
        fh.write("# row col variable coefficient\n")
        for r, c, name, coeff in lmi_triplets(spec, problem):
            fh.write(f"{r} {c} {name} {coeff:.17g}\n")


def design_to_dict(design: ObserverDesign) -> dict:
    data = {
        "format": "lipfd-observer-design",
        "version": 1,
        "solver_status": design.solver_status,
        "meta": {k: v for k, v in design.meta.items() if k != "best_iterate"},
    }
    if design.L is not None:
        data.update({
            "L": [[float(v) for v in row] for row in design.L],
            "P": [[float(v) for v in row] for row in design.P],
            "X": [[float(v) for v in row] for row in design.X],
            "N": [[float(v) for v in row] for row in design.N],
            "epsilon": float(design.epsilon),
            "mu": float(design.mu),
            "gamma": float(design.gamma),
            "certificates": design.certificates.as_dict(),
        })
    return data


def design_from_dict(data: dict) -> ObserverDesign:
    if data.get("format") != "lipfd-observer-design":
        raise ContractViolation("not a lipfd-observer-design document")
    if "L" not in data:
        return ObserverDesign(None, None, None, None, None, None, None,
                              data["solver_status"], None, dict(data.get("meta", {})))
    cert = data["certificates"]
    report = CertificateReport(
        cert["lmi_max_eig"], cert["preschur_max_eig"],
        cert["closedloop_spectral_abscissa"], cert["decay_max_eig"],
        cert["nullspace_max_eig"], cert["passed"],
    )
    return ObserverDesign(
        L=np.array(data["L"]), P=np.array(data["P"]),
        X=np.array(data["X"]), N=np.array(data["N"]),
        epsilon=float(data["epsilon"]), mu=float(data["mu"]),
        gamma=float(data["gamma"]), solver_status=data["solver_status"],
        certificates=report, meta=dict(data.get("meta", {})),
    )


def save_design(design: ObserverDesign, path) -> None:
    with open(path, "w") as fh:
        json.dump(design_to_dict(design), fh, indent=1)
        fh.write("\n")


def load_design(path) -> ObserverDesign:
    with open(path) as fh:
        return design_from_dict(json.load(fh))
