"""
Per-iteration conic subproblem of the joint beamforming design.

For fixed assignment, extraction ratios, CPU frequencies and auxiliary
matrices the problem is a real SDP over the realified communication and
sensing covariances:

    minimize   sum_served  eps * (-eta_S) + (1 - eps) * eta
    subject to eta_S <= rate epigraph (affine in W, R)
               [J11 - Omega, J12; J12^T, J22] >= 0   (weighted units, scaled)
               [Omega, e_i; e_i^T, t_i] >= 0, sum_i d_i t_i <= eta
               sum Tr(W) + Tr(R) <= P_t - p_comp(rho) - p_dt(f)
"""

import logging
import math
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import cvxpy as cp
import numpy as np

from ..utils.constants import FEASIBILITY_TOL
from ..utils.errors import InfeasibleError, SolverError
from .link_metrics import (
    BeamPlan, ChannelSet, _h, computing_power, dt_power, power_breakdown, received_covariances,
)
from .nf_channel import ChannelRealization
from .sensing_crb import FimCoefficients, fim_coefficients, unit_scaling

logger = logging.getLogger(__name__)

SOLVED_STATUSES = {cp.OPTIMAL, cp.OPTIMAL_INACCURATE}
INFEASIBLE_STATUSES = {cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE}
SUPPORTED_SOLVERS = ("CLARABEL", "SCS")

Pair = Tuple[int, int]


@dataclass(frozen=True)
class SubproblemParams:
    """Scalars shared by every subproblem of a slot."""

    noise_comm: float
    noise_sense: float
    t_obs: int
    iota: float
    tx_power: float
    compute_coeff: float
    kappa: float
    weight_epsilon: float
    crb_weight_dist: float = 1.0
    crb_weight_angle: float = 1.0
    solver: str = "CLARABEL"

    @classmethod
    def from_config(cls, config, solver: Optional[str] = None) -> "SubproblemParams":
        return cls(
            noise_comm=config.noise_comm_w,
            noise_sense=config.noise_sense_w,
            t_obs=config.sensing_samples,
            iota=config.iota,
            tx_power=config.tx_power_w,
            compute_coeff=config.compute_coeff_w_per_nat,
            kappa=config.kappa,
            weight_epsilon=config.weight_epsilon,
            crb_weight_dist=config.crb_weight_dist,
            crb_weight_angle=config.crb_weight_angle,
            solver=(solver or config.solver).upper(),
        )


def realify(x: np.ndarray) -> np.ndarray:
    """Real embedding [Re X, -Im X; Im X, Re X] of a complex matrix."""
    return np.block([[x.real, -x.imag], [x.imag, x.real]])


def derealify(y: np.ndarray) -> np.ndarray:
    """Inverse of realify for a realified Hermitian matrix, re-symmetrized."""
    n = y.shape[0] // 2
    x = y[:n, :n] + 1j * y[n:, :n]
    return (x + x.conj().T) / 2


def project_psd(x: np.ndarray) -> np.ndarray:
    """Nearest Hermitian PSD matrix in Frobenius norm."""
    herm = (x + x.conj().T) / 2
    eig, vec = np.linalg.eigh(herm)
    if eig.min() >= 0:
        return herm
    out = (vec * np.maximum(eig, 0.0)) @ vec.conj().T
    return (out + out.conj().T) / 2


class ConicProgram:
    """
    A cvxpy problem plus named variable handles and tagged constraints.

    Tags group constraints by role (psd, structure, rate, crb_lmi,
    omega_lmi, crb_sum, power) so the construction can be audited.
    """

    def __init__(self, rsu_count: int, vehicle_count: int, n_tx: int, solver: str = "CLARABEL"):
        self.rsu_count = rsu_count
        self.vehicle_count = vehicle_count
        self.n_tx = n_tx
        self.solver = solver
        self.variables: Dict[str, cp.Variable] = {}
        self.constraints: List[Tuple[str, cp.Constraint]] = []
        self._groups: Counter = Counter()
        self.objective: Optional[cp.Minimize] = None

        # Role-specific handles
        self.comm: Dict[Pair, cp.Variable] = {}
        self.sense: Dict[int, cp.Variable] = {}
        self.eta_s: Dict[Pair, cp.Variable] = {}
        self.eta: Dict[Pair, cp.Variable] = {}
        self.omega: Dict[Pair, cp.Variable] = {}
        self.t: Dict[Pair, cp.Variable] = {}
        self.omega_scale: Dict[Pair, np.ndarray] = {}
        self._problem: Optional[cp.Problem] = None

    def variable(self, name: str, shape, **kwargs) -> cp.Variable:
        if name in self.variables:
            raise ValueError(f"variable {name} declared twice")
        var = cp.Variable(shape, name=name, **kwargs)
        self.variables[name] = var
        return var

    def add(self, tag: str, *constraints: cp.Constraint) -> None:
        for c in constraints:
            for v in c.variables():
                if v.name() not in self.variables:
                    raise ValueError(f"constraint {tag} references undeclared variable {v.name()}")
            self.constraints.append((tag, c))
        self._groups[tag] += 1

    def hermitian_psd(self, name: str) -> cp.Variable:
        """Realified Hermitian PSD block with its structure equalities."""
        n = self.n_tx
        var = self.variable(name, (2 * n, 2 * n), symmetric=True)
        self.add("psd", var >> 0)
        self.add("structure", var[:n, :n] == var[n:, n:])
        self.add("structure", var[:n, n:] == -var[n:, :n])
        return var

    def constraint_counts(self) -> Dict[str, int]:
        """Logical constraints per tag; an LMI with its slack equality counts once."""
        return dict(self._groups)

    @property
    def problem(self) -> cp.Problem:
        if self._problem is None:
            if self.objective is None:
                raise ValueError("objective not set")
            self._problem = cp.Problem(self.objective, [c for _, c in self.constraints])
        return self._problem

    def describe(self) -> str:
        """Plain-text listing of the variables and tagged constraints."""
        lines = [f"# conic program M={self.rsu_count} K={self.vehicle_count} n_tx={self.n_tx}",
                 f"# solver {self.solver}", "variables:"]
        for name, var in self.variables.items():
            attrs = "symmetric" if var.attributes.get("symmetric") else (
                "nonneg" if var.attributes.get("nonneg") else "free")
            lines.append(f"  {name} shape={var.shape} {attrs}")
        lines.append("constraints:")
        for i, (tag, c) in enumerate(self.constraints):
            kind = type(c).__name__
            refs = ",".join(sorted(v.name() for v in c.variables()))
            lines.append(f"  [{i}] {tag} {kind} shape={c.shape} vars={refs}")
        lines.append("counts: " + ", ".join(f"{k}={v}" for k, v in sorted(self.constraint_counts().items())))
        return "\n".join(lines) + "\n"


@dataclass
class SubproblemSolution:
    comm_cov: np.ndarray        # (M, K, n, n)
    sense_cov: np.ndarray       # (M, n, n)
    rate_epigraph: np.ndarray   # (M, K)
    crb_epigraph: np.ndarray    # (M, K)
    omega: Dict[Pair, np.ndarray] = field(default_factory=dict)  # weighted units
    t: Dict[Pair, np.ndarray] = field(default_factory=dict)
    objective: float = 0.0
    status: str = ""
    solve_time: float = 0.0

    def apply_to(self, plan: BeamPlan) -> BeamPlan:
        """Copy of plan carrying the solved covariances and epigraphs."""
        return BeamPlan(
            comm_cov=self.comm_cov.copy(),
            sense_cov=self.sense_cov.copy(),
            assignment=plan.assignment.copy(),
            extraction_ratio=plan.extraction_ratio.copy(),
            cpu_freq=plan.cpu_freq.copy(),
            rate_epigraph=self.rate_epigraph.copy(),
            crb_epigraph=self.crb_epigraph.copy(),
        )


def mmse_auxiliary_update(channels: ChannelSet, plan: BeamPlan, noise_var: float) -> Dict[Pair, np.ndarray]:
    """
    Closed-form auxiliary matrices A = E^-1 for every served pair.

    E = I + H^H (total received covariance) H / sigma^2, summed over all RSUs.
    """
    aux = {}
    for k in range(plan.vehicle_count):
        m = plan.serving_rsu(k)
        _, total = received_covariances(k, channels, plan)
        e = np.eye(total.shape[0]) + total / noise_var
        a = np.linalg.inv((e + e.conj().T) / 2)
        aux[(m, k)] = (a + a.conj().T) / 2
    return aux


def identity_auxiliary(plan: BeamPlan, n_rx: int) -> Dict[Pair, np.ndarray]:
    return {(plan.serving_rsu(k), k): np.eye(n_rx, dtype=complex) for k in range(plan.vehicle_count)}


def _rate_scale(iota: float, rho: float) -> float:
    return iota / rho / math.log(2)


def rate_epigraph_value(k: int, channels: ChannelSet, plan: BeamPlan, aux: Mapping[Pair, np.ndarray],
                        noise_var: float, iota: float) -> float:
    """
    Numeric value of the rate epigraph bound for vehicle k at a given plan.

    (iota/rho)/ln2 * [Tr(A E_total) - ln|A| - N_r - Tr(interference)/sigma^2]
    """
    m = plan.serving_rsu(k)
    a = aux[(m, k)]
    signal, total = received_covariances(k, channels, plan)
    n_rx = a.shape[0]
    e_total = np.eye(n_rx) + total / noise_var
    _, logdet_a = np.linalg.slogdet(a)
    inner = np.real(np.trace(a @ e_total)) - logdet_a - n_rx - np.real(np.trace(total - signal)) / noise_var
    return _rate_scale(iota, plan.extraction_ratio[m, k]) * float(inner)


def power_budget(plan: BeamPlan, rsu: int, params: SubproblemParams, cycles_per_bit: Sequence[float]) -> float:
    """Power left for radiation once extraction and DT modelling are paid for."""
    served = plan.served(rsu)
    p_comp = computing_power([plan.extraction_ratio[rsu, k] for k in served], params.compute_coeff) if served else 0.0
    p_dt = sum(dt_power(plan.cpu_freq[rsu, k], cycles_per_bit[k], params.kappa) for k in served)
    return params.tx_power - p_comp - p_dt


def _scaled_coefficients(coef: FimCoefficients, params: SubproblemParams,
                         r_ref: np.ndarray) -> Tuple[FimCoefficients, np.ndarray]:
    """
    Move the FIM coefficients to weighted (m, deg) units and congruence-scale
    them by the reference-covariance diagonal.

    Returns:
        Tuple[FimCoefficients, np.ndarray]: Scaled coefficients and the 2-vector
        d1 such that Omega = diag(1/d1) Omega' diag(1/d1)
    """
    t_inv = 1.0 / np.diag(unit_scaling(params.crb_weight_dist, params.crb_weight_angle))
    ref = coef.contract(r_ref)
    j11_ref = np.array([ref.j11[i, i] * t_inv[i] ** 2 for i in range(2)])
    d1 = np.where(j11_ref > 0, 1.0 / np.sqrt(np.where(j11_ref > 0, j11_ref, 1.0)), 1.0)
    d2 = 1.0 / math.sqrt(ref.j22[0, 0]) if ref.j22[0, 0] > 0 else 1.0
    s = d1 * t_inv
    j11 = coef.j11 * (s[:, None, None, None] * s[None, :, None, None])
    j12 = coef.j12 * (s[:, None, None, None] * d2)
    j22 = coef.j22 * d2 ** 2
    return FimCoefficients(j11, j12, j22, coef.t_obs, coef.noise_var, coef.beta), d1


def _lin(g: np.ndarray, x_real: cp.Expression) -> cp.Expression:
    """Re Tr(G X) for Hermitian G expressed on the realified X."""
    g_r = realify((g + g.conj().T) / 2)
    return 0.5 * cp.sum(cp.multiply(g_r, x_real))


def _unit(i: int, j: int, size: int) -> np.ndarray:
    e = np.zeros((size, size))
    e[i, j] = 1.0
    e[j, i] = 1.0
    return e


def build_subproblem(channels: ChannelSet, betas: np.ndarray, aux: Mapping[Pair, np.ndarray], plan: BeamPlan,
                     cycles_per_bit: Sequence[float], params: SubproblemParams) -> ConicProgram:
    """
    Assemble the conic subproblem for fixed (assignment, rho, f, A).

    Args:
        channels (ChannelSet): ChannelRealization per (RSU, vehicle) at the predicted poses
        betas (np.ndarray): (M, K) predicted reflection coefficients
        aux (Mapping[Pair, np.ndarray]): Auxiliary matrices of the served pairs
        plan (BeamPlan): Carries assignment, extraction ratios and CPU frequencies
        cycles_per_bit (Sequence[float]): C of every vehicle
        params (SubproblemParams): Shared scalars

    Returns:
        ConicProgram: Ready to solve

    Raises:
        InfeasibleError: When extraction and DT power already exceed P_t at an RSU
    """
    m_count, k_count = plan.assignment.shape
    first = next(iter(channels.values()))
    n = first.b.shape[0] if isinstance(first, ChannelRealization) else first.shape[0]

    budgets = {}
    for m in range(m_count):
        budget = power_budget(plan, m, params, cycles_per_bit)
        if budget < -FEASIBILITY_TOL * params.tx_power:
            raise InfeasibleError(
                f"RSU {m}: extraction and DT power exceed P_t by {-budget:.4e} W", reason="power",
                detail={"rsu": m, "budget_w": budget},
            )
        budgets[m] = max(budget, 0.0)

    prog = ConicProgram(m_count, k_count, n, params.solver)
    for m in range(m_count):
        served = plan.served(m)
        if not served:
            continue
        for k in served:
            prog.comm[(m, k)] = prog.hermitian_psd(f"W_{m}_{k}")
        prog.sense[m] = prog.hermitian_psd(f"R_{m}")

    def rsu_cov(m: int) -> Optional[cp.Expression]:
        if m not in prog.sense:
            return None
        return prog.sense[m] + sum(prog.comm[(m, k)] for k in plan.served(m))

    covs = {m: rsu_cov(m) for m in range(m_count)}
    eps = params.weight_epsilon
    objective_terms = []

    for k in range(k_count):
        m = plan.serving_rsu(k)
        a = aux[(m, k)]
        n_rx = a.shape[0]
        _, logdet_a = np.linalg.slogdet(a)

        # Rate epigraph
        gain = float(np.real(np.trace(a))) - logdet_a - n_rx
        for mp in range(m_count):
            if covs[mp] is None:
                continue
            h = _h(channels[(mp, k)])
            g_tot = h @ a @ h.conj().T - h @ h.conj().T
            gain = gain + _lin(g_tot, covs[mp]) / params.noise_comm
        h_serv = _h(channels[(m, k)])
        gain = gain + _lin(h_serv @ h_serv.conj().T, prog.comm[(m, k)]) / params.noise_comm
        eta_s = prog.variable(f"eta_s_{m}_{k}", ())
        prog.eta_s[(m, k)] = eta_s
        prog.add("rate", eta_s <= _rate_scale(params.iota, plan.extraction_ratio[m, k]) * gain)

        if eps >= 1:
            # Pure communication weighting: the CRB block carries no objective weight
            objective_terms.append(-eta_s)
            continue

        # CRB LMI in weighted units
        ch = channels[(m, k)]
        coef = fim_coefficients(None, betas[m, k], params.t_obs, params.noise_sense, None, channel=ch)
        r_ref = (budgets[m] if budgets[m] > 0 else params.tx_power) / n * np.eye(n)
        scaled, d1 = _scaled_coefficients(coef, params, r_ref)
        x = covs[m]
        omega = prog.variable(f"Omega_{m}_{k}", (2, 2), symmetric=True)
        t = prog.variable(f"t_{m}_{k}", 2)
        eta = prog.variable(f"eta_{m}_{k}", ())
        z = prog.variable(f"Z_{m}_{k}", (4, 4), symmetric=True)

        lmi = 0
        for i in range(2):
            for j in range(i, 2):
                lmi = lmi + _lin(scaled.j11[i, j], x) * _unit(i, j, 4)
            for c in range(2):
                lmi = lmi + _lin(scaled.j12[i, c], x) * _unit(i, 2 + c, 4)
        lmi = lmi + _lin(scaled.j22, x) * (_unit(2, 2, 4) + _unit(3, 3, 4))
        zeros = np.zeros((2, 2))
        prog.add("crb_lmi", z == lmi - cp.bmat([[omega, zeros], [zeros, zeros]]), z >> 0)

        for i in range(2):
            y = prog.variable(f"Y{i}_{m}_{k}", (3, 3), symmetric=True)
            e_i = np.zeros((2, 1))
            e_i[i, 0] = 1.0
            prog.add("omega_lmi",
                     y == cp.bmat([[omega, e_i], [e_i.T, cp.reshape(t[i], (1, 1))]]),
                     y >> 0)
        prog.add("crb_sum", cp.sum(cp.multiply(d1 ** 2, t)) <= eta)

        prog.eta[(m, k)] = eta
        prog.omega[(m, k)] = omega
        prog.t[(m, k)] = t
        prog.omega_scale[(m, k)] = d1
        objective_terms.append(eps * (-eta_s) + (1 - eps) * eta)

    for m in prog.sense:
        # Tr(X) of the Hermitian block is half the trace of the realified one
        radiated = 0.5 * (cp.trace(prog.sense[m]) + sum(cp.trace(prog.comm[(m, k)]) for k in plan.served(m)))
        prog.add("power", radiated <= budgets[m])

    prog.objective = cp.Minimize(sum(objective_terms) if objective_terms else cp.Constant(0.0))
    logger.debug(f"Built conic program: {prog.constraint_counts()}")
    return prog


def solve_subproblem(program: ConicProgram) -> SubproblemSolution:
    """
    Solve the program and de-realify the covariances.

    Raises:
        InfeasibleError: Solver proves the subproblem infeasible
        SolverError: Solver crash or an unusable status
    """
    problem = program.problem
    solver = program.solver.upper()
    if solver not in SUPPORTED_SOLVERS:
        raise SolverError(f"unsupported solver {solver}", status="unsupported")
    start = time.perf_counter()
    try:
        if solver == "SCS":
            problem.solve(solver=cp.SCS, eps_abs=1e-7, eps_rel=1e-7, max_iters=20000)
        else:
            problem.solve(solver=cp.CLARABEL)
    except cp.error.SolverError as e:
        logger.error(f"Conic solver {solver} failed: {str(e)}", exc_info=True)
        raise SolverError(f"{solver} failed: {e}", status="solver_error") from e
    elapsed = time.perf_counter() - start

    status = problem.status
    if status in INFEASIBLE_STATUSES:
        raise InfeasibleError(f"subproblem is {status}", reason="subproblem", detail={"status": status})
    if status not in SOLVED_STATUSES:
        raise SolverError(f"subproblem ended with status {status}", status=status)
    if status == cp.OPTIMAL_INACCURATE:
        logger.warning("Conic solver returned optimal_inaccurate")

    m_count, k_count, n = program.rsu_count, program.vehicle_count, program.n_tx
    comm = np.zeros((m_count, k_count, n, n), dtype=complex)
    sense = np.zeros((m_count, n, n), dtype=complex)
    rate = np.zeros((m_count, k_count))
    crb = np.zeros((m_count, k_count))
    omega, t_vals = {}, {}
    for (m, k), var in program.comm.items():
        comm[m, k] = project_psd(derealify(var.value))
    for m, var in program.sense.items():
        sense[m] = project_psd(derealify(var.value))
    for (m, k), var in program.eta_s.items():
        rate[m, k] = float(var.value)
    for (m, k), var in program.eta.items():
        crb[m, k] = float(var.value)
        d1 = program.omega_scale[(m, k)]
        omega[(m, k)] = program.omega[(m, k)].value / np.outer(d1, d1)
        t_vals[(m, k)] = np.asarray(program.t[(m, k)].value, dtype=float)

    logger.debug(f"Subproblem solved in {elapsed:.3f}s, objective {problem.value:.6g}")
    return SubproblemSolution(comm_cov=comm, sense_cov=sense, rate_epigraph=rate, crb_epigraph=crb,
                              omega=omega, t=t_vals, objective=float(problem.value), status=status,
                              solve_time=elapsed)


def bisect_extraction_ratio(plan: BeamPlan, rsu: int, rho_lb: float, params: SubproblemParams,
                            cycles_per_bit: Sequence[float], tol: float = 1e-6) -> float:
    """
    Smallest common extraction ratio of an RSU's served set that fits P_t.

    Args:
        plan (BeamPlan): Plan with W, R and f fixed
        rsu (int): RSU index
        rho_lb (float): Lower bound from the semantic profile
        params (SubproblemParams): Shared scalars (P_t, F, kappa)
        cycles_per_bit (Sequence[float]): C of every vehicle
        tol (float): Bisection tolerance

    Returns:
        float: rho in [rho_lb, 1]

    Raises:
        InfeasibleError: When even rho = 1 exceeds the budget
    """
    served = plan.served(rsu)
    if not served:
        return 1.0
    fixed = plan.extraction_ratio.copy()
    fixed[rsu, served] = 1.0
    base = power_breakdown(
        BeamPlan(plan.comm_cov, plan.sense_cov, plan.assignment, fixed, plan.cpu_freq,
                 plan.rate_epigraph, plan.crb_epigraph),
        rsu, params.compute_coeff, params.kappa, cycles_per_bit,
    )
    slack = params.tx_power - base.total
    if slack < -FEASIBILITY_TOL * params.tx_power:
        raise InfeasibleError(f"RSU {rsu}: power exceeds P_t even at rho = 1", reason="power",
                              detail={"rsu": rsu, "slack_w": slack})
    slack = max(slack, 0.0)
    if params.compute_coeff <= 0:
        return rho_lb

    def excess(rho: float) -> float:
        return -params.compute_coeff * len(served) * math.log(rho) - slack

    if excess(rho_lb) <= 0:
        return rho_lb
    lo, hi = rho_lb, 1.0
    while hi - lo > tol:
        mid = (lo + hi) / 2
        if excess(mid) <= 0:
            hi = mid
        else:
            lo = mid
    return hi


def gaussian_randomization(w_cov: np.ndarray, score: Optional[Callable[[np.ndarray], float]] = None,
                           n_samples: int = 100, rng: Optional[np.random.Generator] = None,
                           feasible: Optional[Callable[[np.ndarray], bool]] = None) -> np.ndarray:
    """
    Rank-one beamformer from a PSD covariance by Gaussian randomization.

    Candidates w = U Lambda^1/2 zeta are rescaled to ||w||^2 = Tr(W); the best
    feasible one by score wins, otherwise the principal eigenvector.

    Args:
        w_cov (np.ndarray): Hermitian PSD covariance
        score: Larger is better; defaults to w^H W w
        n_samples (int): Number of candidates
        rng (np.random.Generator): Random stream
        feasible: Optional candidate filter

    Returns:
        np.ndarray: Beamforming vector of length n
    """
    rng = rng if rng is not None else np.random.default_rng()
    herm = (w_cov + w_cov.conj().T) / 2
    power = float(np.real(np.trace(herm)))
    n = herm.shape[0]
    if power <= 0:
        return np.zeros(n, dtype=complex)
    eig, vec = np.linalg.eigh(herm)
    eig = np.maximum(eig, 0.0)
    principal = vec[:, -1] * math.sqrt(power)
    score = score if score is not None else (lambda w: float(np.real(w.conj() @ herm @ w)))

    zeta = (rng.normal(size=(n, n_samples)) + 1j * rng.normal(size=(n, n_samples))) / math.sqrt(2)
    cands = (vec * np.sqrt(eig)) @ zeta
    norms = np.linalg.norm(cands, axis=0)
    best, best_score = None, -math.inf
    for i in range(n_samples):
        if norms[i] <= 0:
            continue
        w = cands[:, i] * math.sqrt(power) / norms[i]
        if feasible is not None and not feasible(w):
            continue
        s = score(w)
        if s > best_score:
            best, best_score = w, s
    return best if best is not None else principal
