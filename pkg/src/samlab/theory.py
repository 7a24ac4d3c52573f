"""Closed-form robust-feature-weight analysis of the Gaussian feature model.

Data: ``y`` uniform on {-1, +1}; ``x1 = y`` with probability ``p`` (else ``-y``);
``x2..x_{n+1} ~ N(eta * y, 1)``. The classifier is ``sign(w . x)`` with all
non-robust weights pinned to 1, so everything reduces to the scalar ``w1``:

    u(w1) = p * Phi((w1 + eta n) / sqrt(n)) + (1 - p) * Phi((-w1 + eta n) / sqrt(n))

is the exact clean 0-1 accuracy. Its unique maximiser is
``w1* = ln(p / (1 - p)) / (2 eta)`` and the robust feature weight is
``W_R = w1 / n``.

For large ``w1`` both Phi terms saturate and ``u`` is flat to double
precision. The solvers therefore work with the excess ``u - p`` written in
tail form, which keeps full relative precision there.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

SQRT2 = math.sqrt(2.0)


class BracketError(RuntimeError):
    """The sign pattern needed to bracket the SAM optimum was not found."""


@dataclass(frozen=True)
class FeatureModelSpec:
    p: float
    eta: float
    n: int

    def __post_init__(self):
        if not 0.5 < self.p < 1.0:
            raise ValueError(f"p must lie in (0.5, 1), got {self.p}")
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")
        object.__setattr__(self, "n", int(self.n))

    @property
    def dim(self) -> int:
        return self.n + 1

    @property
    def log_odds(self) -> float:
        return math.log(self.p) - math.log1p(-self.p)


def phi(z: float) -> float:
    """Standard normal CDF via the complementary error function."""
    return 0.5 * math.erfc(-z / SQRT2)


def _check_eps_at(spec: FeatureModelSpec, eps_at: float) -> None:
    if eps_at < 0:
        raise ValueError(f"adversarial budget must be nonnegative, got {eps_at}")
    if eps_at >= spec.eta:
        raise ValueError(f"adversarial budget {eps_at} must be below eta={spec.eta}")


def _accuracy(w1: float, p: float, mean_shift: float, n: int) -> float:
    s = math.sqrt(n)
    return p * phi((w1 + mean_shift * n) / s) + (1 - p) * phi((-w1 + mean_shift * n) / s)


def clean_accuracy(w1: float, spec: FeatureModelSpec) -> float:
    """Expected 0-1 accuracy of ``sign(w . x)`` with ``w = (w1, 1, ..., 1)``."""
    return _accuracy(w1, spec.p, spec.eta, spec.n)


def adv_accuracy(w1: float, spec: FeatureModelSpec, eps_at: float) -> float:
    """Worst-case l-inf accuracy for ``w1 >= 0``: the attacker shifts every
    non-robust coordinate by ``-eps_at * y``, i.e. ``eta -> eta - eps_at``."""
    _check_eps_at(spec, eps_at)
    return _accuracy(w1, spec.p, spec.eta - eps_at, spec.n)


def accuracy_excess(w1: float, spec: FeatureModelSpec, eps_at: float = 0.0) -> float:
    """``accuracy - p`` computed from normal tails (no cancellation for large w1)."""
    s = math.sqrt(spec.n)
    m = (spec.eta - eps_at) * spec.n
    p = spec.p
    return (1 - p) * phi((-w1 + m) / s) - p * phi(-(w1 + m) / s)


def sam_gap(w: float, spec: FeatureModelSpec, eps: float) -> float:
    """``u(w - eps) - u(w + eps)``, written as differences of tails."""
    s = math.sqrt(spec.n)
    m = spec.eta * spec.n
    p = spec.p
    lo, hi = w - eps, w + eps
    robust = phi(-(hi + m) / s) - phi(-(lo + m) / s)
    flipped = phi((-lo + m) / s) - phi((-hi + m) / s)
    return p * robust + (1 - p) * flipped


def wr_standard(spec: FeatureModelSpec) -> tuple[float, float]:
    """Optimal ``w1`` under standard training and its robust feature weight."""
    w1 = spec.log_odds / (2 * spec.eta)
    return w1, w1 / spec.n


def wr_at(spec: FeatureModelSpec, eps_at: float) -> tuple[float, float]:
    """Optimal ``w1`` under l-inf adversarial training with budget ``eps_at < eta``."""
    _check_eps_at(spec, eps_at)
    w1 = spec.log_odds / (2 * (spec.eta - eps_at))
    return w1, w1 / spec.n


@dataclass
class SolverDiagnostics:
    bracket: tuple[float, float]
    iterations: int
    residual: float
    h: float
    notes: list[str] = field(default_factory=list)


@dataclass
class SamSolution:
    w1: float
    wr: float
    diagnostics: SolverDiagnostics

    def __iter__(self):
        # unpacks like the other wr_* helpers: w1, wr = wr_sam_numeric(...)
        yield self.w1
        yield self.wr


def wr_sam_numeric(spec: FeatureModelSpec, eps_sam: float, width_tol: float = 1e-12,
                   max_iter: int = 500) -> SamSolution:
    """Maximiser of ``min(u(w - eps), u(w + eps))`` by bisection on the gap.

    The optimum balances both ends, ``u(w - eps) = u(w + eps)``, and lies in
    ``(w1*, w1* + eps)``: the gap is negative at ``w1*`` and positive at
    ``w1* + eps`` because ``u`` peaks at ``w1*``. If the upper end is not yet
    positive it is pushed out geometrically and a note is recorded.
    """
    if eps_sam < 0:
        raise ValueError(f"eps_sam must be nonnegative, got {eps_sam}")
    w_star, wr_star = wr_standard(spec)
    if eps_sam == 0:
        return SamSolution(w_star, wr_star, SolverDiagnostics((w_star, w_star), 0, 0.0, 0.0))

    lo, hi = w_star, w_star + eps_sam
    g_lo, g_hi = sam_gap(lo, spec, eps_sam), sam_gap(hi, spec, eps_sam)
    notes = []
    if not g_lo < 0:
        raise BracketError(f"gap at w1*={lo!r} is {g_lo!r}, expected negative ({spec}, eps={eps_sam})")
    step = eps_sam
    while not g_hi > 0:
        step *= 2
        hi = w_star + step
        g_hi = sam_gap(hi, spec, eps_sam)
        notes.append(f"extended upper bracket to {hi!r}")
        if step > 1e6 * max(1.0, abs(w_star)):
            raise BracketError(f"no sign change above w1*={w_star!r} ({spec}, eps={eps_sam})")
    bracket = (lo, hi)

    it = 0
    while hi - lo > width_tol and it < max_iter:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        g_mid = sam_gap(mid, spec, eps_sam)
        it += 1
        if g_mid == 0:
            lo = hi = mid
            break
        if g_mid < 0:
            lo = mid
        else:
            hi = mid
    w = 0.5 * (lo + hi)
    residual = clean_accuracy(w - eps_sam, spec) - clean_accuracy(w + eps_sam, spec)
    diag = SolverDiagnostics(bracket, it, residual, w_star - w + eps_sam, notes)
    return SamSolution(w, w / spec.n, diag)


def wr_sam_approx(spec: FeatureModelSpec, eps_sam: float) -> float:
    """Small-perturbation expansion ``W_R* (1 + 2/3 eps^2)``."""
    if eps_sam < 0:
        raise ValueError(f"eps_sam must be nonnegative, got {eps_sam}")
    return wr_standard(spec)[1] * (1.0 + 2.0 / 3.0 * eps_sam ** 2)


def wr_sam_second_order(spec: FeatureModelSpec, eps_sam: float) -> float:
    """Leading-order shift from the local shape of ``u`` at its peak.

    Balancing ``u(w - eps) = u(w + eps)`` to third order gives
    ``w1 - w1* = -eps^2 u'''/(6 u'')``, and at the peak ``u'''/u'' = -2 w1*/n``,
    hence ``W_R* (1 + eps^2 / (3 n))``.
    """
    if eps_sam < 0:
        raise ValueError(f"eps_sam must be nonnegative, got {eps_sam}")
    return wr_standard(spec)[1] * (1.0 + eps_sam ** 2 / (3.0 * spec.n))


@dataclass
class EpsRelation:
    eps_sam: float
    eps_at: float
    eps_at_exact: float
    wr_sam: float


def eps_at_equivalent(spec: FeatureModelSpec, eps_sam: float) -> EpsRelation:
    """Adversarial budget giving the same ``W_R`` as SAM with ``eps_sam``.

    ``eps_at`` is the small-eps relation ``2 eta / (2 + 3 / eps_sam^2)``;
    ``eps_at_exact`` inverts ``wr_at`` at the numerically solved SAM weight.
    """
    if not eps_sam > 0:
        raise ValueError(f"eps_sam must be positive, got {eps_sam}")
    approx = 2 * spec.eta / (2 + 3 / eps_sam ** 2)
    wr_star = wr_standard(spec)[1]
    wr_sam = wr_sam_numeric(spec, eps_sam).wr
    exact = spec.eta * (1 - wr_star / wr_sam)
    return EpsRelation(eps_sam, approx, exact, wr_sam)


def estimate_wr(weights) -> float:
    """``w1 / (w2 + ... + w_{n+1})`` for a learned weight vector."""
    weights = [float(v) for v in weights]
    if len(weights) < 2:
        raise ValueError("need at least one robust and one non-robust weight")
    denom = math.fsum(weights[1:])
    if abs(denom) < 1e-12:
        raise ZeroDivisionError(f"non-robust weights sum to {denom!r}; W_R is undefined")
    return weights[0] / denom


@dataclass
class TheoryReport:
    p: float
    eta: float
    n: int
    eps_at: float
    eps_sam: float
    w1_star: float
    wr_star: float
    w1_at: float
    wr_at: float
    w1_sam: float
    wr_sam_numeric: float
    wr_sam_approx: float
    eps_at_equiv: float
    eps_at_equiv_exact: float
    solver_bracket_lo: float
    solver_bracket_hi: float
    solver_iterations: int
    solver_residual: float
    solver_h: float

    def as_row(self) -> dict:
        return asdict(self)

    def to_text(self) -> str:
        return "\n".join(f"{k}: {v!r}" for k, v in asdict(self).items())


def theory_report(spec: FeatureModelSpec, eps_at: float, eps_sam: float) -> TheoryReport:
    w1_star, wr_star = wr_standard(spec)
    w1_at, wr_at_ = wr_at(spec, eps_at)
    sol = wr_sam_numeric(spec, eps_sam)
    if eps_sam > 0:
        rel = eps_at_equivalent(spec, eps_sam)
        eq, eq_exact = rel.eps_at, rel.eps_at_exact
    else:
        eq = eq_exact = 0.0
    d = sol.diagnostics
    return TheoryReport(
        spec.p, spec.eta, spec.n, eps_at, eps_sam,
        w1_star, wr_star, w1_at, wr_at_, sol.w1, sol.wr, wr_sam_approx(spec, eps_sam),
        eq, eq_exact, d.bracket[0], d.bracket[1], d.iterations, d.residual, d.h,
    )
