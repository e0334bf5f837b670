"""Rejection/holding curves, asymptotic-variance tables, minimisers and bound checks on a lambda grid."""
from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from app.schemas import GridConfig, ReferenceRow
from app.services.adapt_service import AffineCost, minimiser_upper_bound
from app.services.discrete_model import DiscreteModel, TestFunctionSet, standard_test_functions
from app.services.spectral_service import asvar_grid, lag_one_covariance
from app.services.transition_service import TransitionStack

logger = logging.getLogger(__name__)

TOL = 1e-12
CURVE_TOL = 1e-9
COVARIANCE_N_MAX = 30
SO_TOL = 0.02


@dataclass(frozen=True)
class LambdaGrid:
    lo: float = 2.0
    hi: float = 150.0
    step: float = 0.01

    def __post_init__(self) -> None:
        if not self.step > 0:
            raise ValueError(f"grid step must be positive, got {self.step}")
        if self.lo < 1 + self.step - 1e-12:
            raise ValueError(f"grid lo={self.lo} must be >= 1 + step")
        if self.hi < self.lo:
            raise ValueError(f"grid hi={self.hi} below lo={self.lo}")

    @classmethod
    def from_config(cls, cfg: GridConfig) -> LambdaGrid:
        return cls(cfg.lo, cfg.hi, cfg.step)

    def values(self) -> np.ndarray:
        count = int(round((self.hi - self.lo) / self.step)) + 1
        return np.round(self.lo + self.step * np.arange(count), 10)

    @property
    def n_max(self) -> int:
        return math.floor(self.hi)


def b_lambda(lam):
    """1/floor - (lambda - floor)/((floor + 1) floor): eps(lambda) when pi = q."""
    lam = np.asarray(lam, dtype=float)
    n = np.floor(lam)
    return 1.0 / n - (lam - n) / ((n + 1.0) * n)


def _split(lambdas: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = np.floor(lambdas).astype(int)
    return n, n + 1 - lambdas


@dataclass(frozen=True)
class RejectionCurve:
    lam: np.ndarray
    eps: np.ndarray
    eps_s: np.ndarray
    eps_prime: np.ndarray


def rejection_curve(stack: TransitionStack, lambdas) -> RejectionCurve:
    """eps by linear interpolation, eps_s from its own beta-quadratic form, eps' cadlag step."""
    lambdas = np.atleast_1d(np.asarray(lambdas, dtype=float))
    n, beta = _split(lambdas)
    if np.any(n < 1) or np.any(n + 1 > stack.n_top):
        raise ValueError(f"grid needs levels 1..{int(n.max()) + 1}, stack has 1..{stack.n_top}")
    e_lo, e_hi = stack.eps[n - 1], stack.eps[n]
    eps = beta * e_lo + (1.0 - beta) * e_hi
    eps_s = beta**2 * stack.eps_sq[n - 1] + 2.0 * beta * (1.0 - beta) * stack.eps_cross[n - 1] + (1.0 - beta) ** 2 * stack.eps_sq[n]
    return RejectionCurve(lambdas, eps, eps_s, e_hi - e_lo)


def psi_curve(stack: TransitionStack, lambdas) -> np.ndarray:
    """Atom-aware holding parameter from the pi-average of the diagonal of P_lambda."""
    pi = stack.model.pi
    if pi.shape[0] < 2:
        raise ValueError("#(Sp)>1 required for psi")
    lambdas = np.atleast_1d(np.asarray(lambdas, dtype=float))
    n, beta = _split(lambdas)
    hold = np.einsum("nii,i->n", stack.matrices, pi)
    avg = beta * hold[n - 1] + (1.0 - beta) * hold[n]
    base = float(pi @ pi)
    return (avg - base) / (1.0 - base)


@dataclass(frozen=True)
class AnalysisTable:
    """Per-lambda columns; V entries are for standardised test functions (var_pi = 1)."""

    lam: np.ndarray
    eps: np.ndarray
    eps_s: np.ndarray
    eps_prime: np.ndarray
    psi: np.ndarray
    G: np.ndarray
    H: np.ndarray
    b: np.ndarray
    eps_upper: np.ndarray
    G_lower: np.ndarray
    G_upper: np.ndarray
    V: dict[str, np.ndarray] = field(default_factory=dict)
    w_hat: float = 1.0

    def __len__(self) -> int:
        return int(self.lam.shape[0])

    def columns(self) -> dict[str, np.ndarray]:
        cols = {
            "lambda": self.lam,
            "eps": self.eps,
            "eps_s": self.eps_s,
            "eps_prime": self.eps_prime,
            "psi": self.psi,
            "G": self.G,
            "H": self.H,
            "b": self.b,
            "eps_upper": self.eps_upper,
            "G_lower": self.G_lower,
            "G_upper": self.G_upper,
        }
        cols.update({f"V_{name}": v for name, v in self.V.items()})
        return cols

    def losses(self, cost: AffineCost) -> dict[str, np.ndarray]:
        c = cost(self.lam)
        out = {"G": c * self.G, "H": c * self.H}
        out.update({name: c * v for name, v in self.V.items()})
        return out


def analysis_table(stack: TransitionStack, fns: TestFunctionSet, grid: LambdaGrid | np.ndarray) -> AnalysisTable:
    lambdas = grid.values() if isinstance(grid, LambdaGrid) else np.asarray(grid, dtype=float)
    model = stack.model
    w_hat = model.w_hat
    curve = rejection_curve(stack, lambdas)
    psi = psi_curve(stack, lambdas)
    n = np.floor(lambdas)
    V = asvar_grid(stack, lambdas, fns.standardised)
    return AnalysisTable(
        lam=lambdas,
        eps=curve.eps,
        eps_s=curve.eps_s,
        eps_prime=curve.eps_prime,
        psi=psi,
        G=(1.0 + curve.eps) / (1.0 - curve.eps),
        H=(1.0 + psi) / (1.0 - psi),
        b=b_lambda(lambdas),
        eps_upper=2.0 * w_hat / (2.0 * w_hat + lambdas - 1.0),
        G_lower=(n**2 + 3.0 * n - lambdas + 1.0) / (n**2 - n + lambdas - 1.0),
        G_upper=(4.0 * w_hat + lambdas - 1.0) / (lambdas - 1.0),
        V=V,
        w_hat=w_hat,
    )


@dataclass(frozen=True)
class GradientCurves:
    h1: np.ndarray
    h2: np.ndarray
    h3: np.ndarray


def gradient_curves(table: AnalysisTable, cost: AffineCost) -> GradientCurves:
    """c'(1 - X) + 2 c eps' with X = lambda^-2, eps^2, eps_s."""
    lam = table.lam
    c, dc = cost(lam), cost.derivative(lam)
    drift = 2.0 * c * table.eps_prime
    return GradientCurves(
        h1=dc * (1.0 - lam**-2) + drift,
        h2=dc * (1.0 - table.eps**2) + drift,
        h3=dc * (1.0 - table.eps_s) + drift,
    )


def grid_argmin(lam: np.ndarray, values: np.ndarray) -> float:
    """Smallest lambda attaining the minimum, rounded to 2 decimals."""
    return round(float(lam[int(np.argmin(values))]), 2)


@dataclass(frozen=True)
class MinimiserRow:
    a: float
    lambda_G: float
    lambda_H: float
    minimisers: dict[str, float]
    so_G: dict[str, float]
    so_H: dict[str, float]

    def as_csv(self, names: Sequence[str]) -> dict:
        row = {"a": self.a, "lambda_G": self.lambda_G, "lambda_H": self.lambda_H}
        for name in names:
            row[f"lambda_{name}"] = self.minimisers.get(name, math.nan)
            row[f"SO_G_{name}"] = self.so_G.get(name, math.nan)
            row[f"SO_H_{name}"] = self.so_H.get(name, math.nan)
        return row


def minimiser_row(table: AnalysisTable, a: float) -> MinimiserRow:
    cost = AffineCost(a, 1.0)
    losses = table.losses(cost)
    lam = table.lam
    i_g = int(np.argmin(losses["G"]))
    i_h = int(np.argmin(losses["H"]))
    mins, so_g, so_h = {}, {}, {}
    for name in table.V:
        loss = losses[name]
        i_f = int(np.argmin(loss))
        mins[name] = grid_argmin(lam, loss)
        so_g[name] = float(loss[i_g] / loss[i_f])
        so_h[name] = float(loss[i_h] / loss[i_f])
    return MinimiserRow(a, grid_argmin(lam, losses["G"]), grid_argmin(lam, losses["H"]), mins, so_g, so_h)


@dataclass(frozen=True)
class AnalysisReport:
    model: DiscreteModel
    table: AnalysisTable
    rows: list[MinimiserRow]
    violations: list[Violation]
    notes: list[str] = field(default_factory=list)

    def function_names(self) -> list[str]:
        return list(self.table.V)


def analysis_report(
    stack: TransitionStack,
    cost_list: Sequence[float],
    grid: LambdaGrid,
    fns: TestFunctionSet | None = None,
    check_bounds: bool = True,
) -> AnalysisReport:
    fns = fns or standard_test_functions(stack.model)
    table = analysis_table(stack, fns, grid)
    rows = [minimiser_row(table, a) for a in cost_list]
    violations = bound_checks(table, stack, fns, cost_list) if check_bounds else []
    notes = []
    if stack.model.n == 2:
        worst = max((float(np.max(np.abs(table.H - v))) for v in table.V.values()), default=0.0)
        if worst <= 1e-8:
            notes.append("H=V identity verified")
        else:
            notes.append(f"H=V identity FAILED (max deviation {worst:.2e})")
    for r in rows:
        logger.info("%s a=%g: lambda_G=%.2f lambda_H=%.2f", stack.model.name, r.a, r.lambda_G, r.lambda_H)
    return AnalysisReport(stack.model, table, rows, violations, notes)


# --- проверка границ ------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    check: str
    where: str
    value: float
    bound: float

    def __str__(self) -> str:
        return f"{self.check} at {self.where}: value {self.value:.12g} vs bound {self.bound:.12g}"


def _first_violation(check: str, mask: np.ndarray, lam: np.ndarray, value: np.ndarray, bound: np.ndarray) -> list[Violation]:
    if not np.any(mask):
        return []
    i = int(np.flatnonzero(mask)[0])
    v = Violation(check, f"lambda={lam[i]:.2f} ({int(mask.sum())} grid points)", float(value[i]), float(bound[i]))
    return [v]


def _sequence_checks(name: str, seq: np.ndarray, strict: bool, start: int = 1) -> list[Violation]:
    """Strictly decreasing and sequentially convex in N."""
    out = []
    d1 = np.diff(seq)
    d2 = seq[:-2] - 2.0 * seq[1:-1] + seq[2:]
    bad1 = d1 >= 0 if strict else d1 > TOL
    if np.any(bad1):
        i = int(np.flatnonzero(bad1)[0])
        out.append(Violation(f"{name} decreasing", f"N={i + start}", float(d1[i]), 0.0))
    bad2 = d2 < -TOL
    if np.any(bad2):
        i = int(np.flatnonzero(bad2)[0])
        out.append(Violation(f"{name} convex", f"N={i + start}", float(d2[i]), 0.0))
    return out


def bound_checks(
    table: AnalysisTable,
    stack: TransitionStack,
    fns: TestFunctionSet,
    cost_list: Sequence[float] = (0.0,),
) -> list[Violation]:
    model = stack.model
    pi, w_hat = model.pi, model.w_hat
    lam = table.lam
    n = np.floor(lam)
    out: list[Violation] = []
    exact = stack.method != "mc"

    resid = stack.balance_residual()
    if resid > (TOL if exact else 1e-10):
        out.append(Violation("detailed balance", "all N", resid, TOL))

    # минорация на всей сетке
    ratios = stack.matrices / pi[None, None, :]
    ni, beta = _split(lam)
    mins = np.array(
        [float(np.min(b * ratios[k - 1] + (1.0 - b) * ratios[k])) for k, b in zip(ni, beta)]
    )
    minor = (lam - 1.0) / (2.0 * w_hat + lam - 1.0)
    out += _first_violation("minorisation", mins < minor - TOL, lam, mins, minor)

    out += _first_violation("eps >= 1/lambda", 1.0 / lam > table.b + TOL, lam, table.b, 1.0 / lam)
    out += _first_violation("eps >= b", table.b > table.eps + TOL, lam, table.eps, table.b)
    out += _first_violation("eps upper", table.eps > table.eps_upper + TOL, lam, table.eps, table.eps_upper)
    out += _first_violation("G lower", table.G_lower > table.G + CURVE_TOL, lam, table.G, table.G_lower)
    out += _first_violation("G upper", table.G > table.G_upper + CURVE_TOL, lam, table.G, table.G_upper)
    out += _first_violation("Jensen eps^2 <= eps_s", table.eps**2 > table.eps_s + TOL, lam, table.eps**2, table.eps_s)

    c_w = float(model.weights @ pi)
    abs_d = np.abs(table.eps_prime)
    d_lo = c_w / (2.0 * w_hat + n - 1.0) ** 2
    d_hi = w_hat / (n * (n + 1.0))
    out += _first_violation("|eps'| lower", abs_d < d_lo - TOL, lam, abs_d, d_lo)
    out += _first_violation("|eps'| upper", abs_d > d_hi + TOL, lam, abs_d, d_hi)

    out += _first_violation("psi > 0", table.psi <= 0, lam, table.psi, np.zeros_like(lam))
    out += _first_violation("psi upper", table.psi > table.eps_upper + TOL, lam, table.psi, table.eps_upper)
    out += _first_violation("psi decreasing", np.append(np.diff(table.psi) > TOL, False), lam, table.psi, np.append(table.psi[1:], table.psi[-1]))
    out += _first_violation("H > 1", table.H <= 1.0, lam, table.H, np.ones_like(lam))
    out += _first_violation("H upper", table.H > table.G_upper + CURVE_TOL, lam, table.H, table.G_upper)

    for name, v in table.V.items():
        out += _first_violation(f"V_{name} > var", v <= 1.0 - CURVE_TOL, lam, v, np.ones_like(lam))
        out += _first_violation(f"V_{name} upper", v > table.G_upper + CURVE_TOL, lam, v, table.G_upper)
        d1 = np.diff(v)
        d2 = v[:-2] - 2.0 * v[1:-1] + v[2:]
        out += _first_violation(f"V_{name} decreasing", np.append(d1 > TOL, False), lam, np.append(d1, 0.0), np.zeros_like(lam))
        out += _first_violation(f"V_{name} convex", np.append(d2 < -CURVE_TOL, [False, False]), lam, np.append(d2, [0.0, 0.0]), np.zeros_like(lam))

    # ковариации и отказы по целым N
    top = min(COVARIANCE_N_MAX, stack.n_top)
    if exact:
        for name, f in fns.standardised.items():
            cov = np.array([lag_one_covariance(pi, stack.matrix(k), f) for k in range(1, top + 1)])
            out += _sequence_checks(f"<f|P_N f> ({name})", cov, strict=True)
        out += _sequence_checks("eps(N)", stack.eps[:top], strict=True)
        for i in range(model.n):
            out += _sequence_checks(f"eps(N, s{i + 1})", stack.eps_state[:top, i], strict=False)

    # удержание по всем целым N >= 2, предел ковариации на верхнем уровне
    for big_n in range(2, stack.n_top + 1):
        hold = np.diag(stack.matrix(big_n))
        hold_bound = pi + (1.0 - pi) * 2.0 * w_hat / (2.0 * w_hat + big_n - 1.0)
        bad = (hold <= pi - TOL) | (hold > hold_bound + TOL)
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            out.append(Violation("holding probability", f"N={big_n} s{i + 1}", float(hold[i]), float(hold_bound[i])))
            break
    big_n = stack.n_top - 1 if stack.n_top > 1 else 1
    p_top = stack.matrix(big_n)
    env = 2.0 * w_hat / (2.0 * w_hat + big_n - 1.0)
    for name, f in fns.standardised.items():
        cov = lag_one_covariance(pi, p_top, f)
        if not (-TOL <= cov <= env + TOL):
            out.append(Violation(f"<f|P_N f> limit ({name})", f"N={big_n}", cov, env))

    for a in cost_list:
        h = gradient_curves(table, AffineCost(a, 1.0))
        tag = f"a={a:g}"
        out += _first_violation(f"h3 <= h2 ({tag})", h.h3 > h.h2 + TOL, lam, h.h3, h.h2)
        out += _first_violation(f"h2 <= h1 ({tag})", h.h2 > h.h1 + TOL, lam, h.h2, h.h1)
        if h.h3[-1] <= 0:
            out.append(Violation(f"h3 > 0 at top ({tag})", f"lambda={lam[-1]:.2f}", float(h.h3[-1]), 0.0))
        near = rejection_curve(stack, [1.0 + (lam[1] - lam[0] if len(lam) > 1 else 0.01)])
        c = AffineCost(a, 1.0)
        l0 = float(near.lam[0])
        h1_near = c.derivative(l0) * (1.0 - l0**-2) + 2.0 * c(l0) * float(near.eps_prime[0])
        if h1_near >= 0:
            out.append(Violation(f"h1 < 0 near 1 ({tag})", f"lambda={l0:.2f}", h1_near, 0.0))
        cap = minimiser_upper_bound(w_hat, a, 1.0)
        for name, v in table.V.items():
            lam_f = grid_argmin(lam, c(lam) * v)
            if lam_f > cap + 1e-9:
                out.append(Violation(f"minimiser bound V_{name} ({tag})", f"lambda={lam_f:.2f}", lam_f, cap))

    for v in out:
        logger.warning("%s: bound violation: %s", model.name, v)
    return out


# --- сверка с опубликованной таблицей -------------------------------------


def compare_with_reference(report: AnalysisReport, reference: Sequence[ReferenceRow], so_tol: float = SO_TOL) -> list[str]:
    """Mismatches against a published minimiser table; reported, never raised."""
    mismatches = []
    by_a = {r.a: r for r in report.rows}
    for ref in reference:
        row = by_a.get(ref.a)
        if row is None:
            mismatches.append(f"a={ref.a:g}: no computed row")
            continue
        if abs(row.lambda_G - ref.lambda_G) > 1e-9:
            mismatches.append(f"a={ref.a:g}: lambda_G {row.lambda_G:g} vs published {ref.lambda_G:g}")
        for name, lam_ref in ref.minimisers.items():
            got = row.minimisers.get(name)
            if got is None or abs(got - lam_ref) > 1e-9:
                mismatches.append(f"a={ref.a:g}: lambda_{name} {got} vs published {lam_ref:g}")
        for name, so_ref in ref.so_G.items():
            got = row.so_G.get(name)
            if got is None or abs(got - so_ref) > so_tol:
                mismatches.append(f"a={ref.a:g}: SO_G_{name} {got if got is None else round(got, 3)} vs published {so_ref:g}")
    for m in mismatches:
        logger.warning("%s: reference mismatch: %s", report.model.name, m)
    return mismatches
