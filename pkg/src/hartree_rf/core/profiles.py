"""Momentum distributions, interaction potentials and the pair kernel h = F(f^2)."""
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, Optional, Sequence

import numpy as np
from pydantic import BaseModel
from scipy.integrate import simpson
from scipy.interpolate import CubicSpline
from scipy.special import expit, j0

from ..errors import NonIntegrable, QuadratureFailure

logger = logging.getLogger(__name__)

TAIL_LEVEL = 1e-12
BOSE_MU_MAX = -1e-6


def sphere_area(dim: int) -> float:
    """Surface measure of the unit sphere in R^dim."""
    return 2.0 * math.pi ** (dim / 2.0) / math.gamma(dim / 2.0)


def radial_fourier(
    values: np.ndarray, rho: np.ndarray, k: np.ndarray, dim: int, chunk: int = 2_000_000
) -> np.ndarray:
    """Fourier transform of a radial function sampled on a uniform grid, at radii k.

    dim 3: (4 pi / k) int rho sin(k rho) F(rho) drho; dim 2: 2 pi int rho J0(k rho) F(rho) drho.
    """
    k = np.atleast_1d(np.asarray(k, dtype=float))
    out = np.empty(k.shape, dtype=float)
    flat_k = k.ravel()
    flat_out = out.ravel()
    rows = max(1, chunk // max(rho.size, 1))
    for start in range(0, flat_k.size, rows):
        kk = flat_k[start : start + rows, None]
        if dim == 3:
            # sinc handles k = 0 without a special case
            kernel = 4.0 * math.pi * rho**2 * np.sinc(kk * rho / math.pi)
        elif dim == 2:
            kernel = 2.0 * math.pi * rho * j0(kk * rho)
        else:
            kernel = 2.0 * np.cos(kk * rho)
        flat_out[start : start + rows] = simpson(kernel * values, x=rho, axis=-1)
    return out


def _richardson_fourier(
    values: np.ndarray, rho: np.ndarray, k: np.ndarray, dim: int
) -> tuple[np.ndarray, np.ndarray]:
    """Transform plus an error estimate from the half-resolution grid (rho.size = 4m + 1)."""
    fine = radial_fourier(values, rho, k, dim)
    coarse = radial_fourier(values[::2], rho[::2], k, dim)
    return fine, np.abs(fine - coarse) / 15.0


def _uniform_nodes(r_max: float, step: float, minimum: int = 2049) -> np.ndarray:
    m = max(int(math.ceil(r_max / (4.0 * step))), (minimum - 1) // 4)
    return np.linspace(0.0, r_max, 4 * m + 1)


@dataclass(frozen=True, eq=False)
class MomentumDistribution:
    """Radial momentum profile f, defined through f^2."""

    kind: str
    dim: int
    T: float = 1.0
    mu: float = 0.0
    alpha: float = 6.0
    scale: float = 1.0
    table_r: Optional[np.ndarray] = None
    table_f2: Optional[np.ndarray] = None
    r_cap: float = 200.0

    def __post_init__(self) -> None:
        if self.kind not in ("fermi", "bose", "bessel", "gaussian", "tabulated"):
            raise ValueError(f"Unknown profile kind: {self.kind}")
        if self.dim not in (1, 2, 3):
            raise ValueError(f"Unsupported dimension: {self.dim}")
        if self.T <= 0:
            raise ValueError("Temperature T must be positive")
        if self.kind == "bose" and self.mu > BOSE_MU_MAX:
            raise ValueError(f"Bose profile needs mu <= {BOSE_MU_MAX}, got {self.mu}")
        if self.kind == "tabulated":
            if self.table_r is None or self.table_f2 is None:
                raise ValueError("Tabulated profile needs table_r and table_f2")
            r = np.asarray(self.table_r, dtype=float)
            v = np.asarray(self.table_f2, dtype=float)
            if r.shape != v.shape or r.size < 2 or r[0] != 0.0 or np.any(np.diff(r) <= 0):
                raise ValueError("table_r must start at 0 and increase strictly")
            object.__setattr__(self, "table_r", r)
            object.__setattr__(self, "table_f2", v)
        if self.dim == 1:
            logger.warning("⚠️ dim = 1 is a smoke-test setting outside the theory's scope")

    def _shape_f2(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if self.kind == "fermi":
            return expit(-(r**2 - self.mu) / self.T)
        if self.kind == "bose":
            return 1.0 / np.expm1((r**2 - self.mu) / self.T)
        if self.kind == "bessel":
            return (1.0 + r**2) ** (-self.alpha / 2.0)
        if self.kind == "gaussian":
            return np.exp(-(r**2) / self.T)
        return np.interp(r, self.table_r, self.table_f2, right=0.0)

    def _shape_df2(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if self.kind == "fermi":
            x = (r**2 - self.mu) / self.T
            return -(2.0 * r / self.T) * expit(-x) * expit(x)
        if self.kind == "bose":
            f2 = self._shape_f2(r)
            return -(2.0 * r / self.T) * f2 * (1.0 + f2)
        if self.kind == "bessel":
            return -self.alpha * r * (1.0 + r**2) ** (-self.alpha / 2.0 - 1.0)
        if self.kind == "gaussian":
            return -(2.0 * r / self.T) * np.exp(-(r**2) / self.T)
        slope = np.gradient(self.table_f2, self.table_r)
        return np.interp(r, self.table_r, slope, right=0.0)

    def f2(self, r: np.ndarray) -> np.ndarray:
        return self.scale * self._shape_f2(r)

    def f(self, r: np.ndarray) -> np.ndarray:
        return np.sqrt(np.maximum(self.f2(r), 0.0))

    def df(self, r: np.ndarray) -> np.ndarray:
        """Radial derivative of f."""
        f = self.f(r)
        df2 = self.scale * self._shape_df2(r)
        safe = np.where(f > 0, f, 1.0)
        return np.where(f > 0, df2 / (2.0 * safe), 0.0)

    @cached_property
    def r_max(self) -> float:
        """Radial cutoff with f^2(R) R^dim below TAIL_LEVEL, capped at r_cap."""
        if self.kind == "tabulated":
            return float(min(self.table_r[-1], self.r_cap))
        r = 1.0
        while r < self.r_cap and float(self._shape_f2(r)) * r**self.dim >= TAIL_LEVEL:
            r *= 1.25
        return float(min(r, self.r_cap))

    @cached_property
    def tail_exponent(self) -> float:
        """Local power-law decay exponent of f^2 at r_max (inf when the tail is cut off)."""
        r = self.r_max
        if float(self._shape_f2(r)) * r**self.dim < TAIL_LEVEL:
            return math.inf
        a, b = float(self._shape_f2(r)), float(self._shape_f2(1.01 * r))
        if a <= 0.0 or b <= 0.0:
            return math.inf
        return -math.log(b / a) / math.log(1.01)

    def tail_estimate(self) -> float:
        """Estimated mass of f^2 beyond r_max."""
        p = self.tail_exponent
        if math.isinf(p):
            return 0.0
        r = self.r_max
        if p <= self.dim:
            return math.inf
        return sphere_area(self.dim) * float(self.f2(r)) * r**self.dim / (p - self.dim)

    def momentum_nodes(self, minimum: int = 4097) -> np.ndarray:
        nodes = np.linspace(0.0, self.r_max, minimum)
        if self.kind == "tabulated":
            nodes = np.union1d(nodes, self.table_r[self.table_r <= self.r_max])
        return nodes

    def mass(self) -> float:
        """Integral of f^2 over R^dim."""
        rho = _uniform_nodes(self.r_max, self.r_max / 8192)
        return sphere_area(self.dim) * float(simpson(rho ** (self.dim - 1) * self.f2(rho), x=rho))

    @classmethod
    def from_block(cls, block: object, dim: int) -> "MomentumDistribution":
        table_r = getattr(block, "table_r", None)
        table_f2 = getattr(block, "table_f2", None)
        return cls(
            kind=block.kind,  # type: ignore[attr-defined]
            dim=dim,
            T=block.T,  # type: ignore[attr-defined]
            mu=block.mu,  # type: ignore[attr-defined]
            alpha=block.alpha,  # type: ignore[attr-defined]
            table_r=None if table_r is None else np.asarray(table_r, dtype=float),
            table_f2=None if table_f2 is None else np.asarray(table_f2, dtype=float),
            r_cap=block.r_cap,  # type: ignore[attr-defined]
        )


@dataclass(frozen=True)
class PairPotential:
    """Even interaction w = atom_weight * delta + radial density."""

    dim: int
    atom_weight: float = 1.0
    density_kind: str = "none"
    amplitude: float = 0.0
    width: float = 1.0

    def __post_init__(self) -> None:
        if self.density_kind not in ("none", "gaussian", "exponential"):
            raise ValueError(f"Unknown density kind: {self.density_kind}")
        if self.density_kind != "none" and self.width <= 0:
            raise ValueError("Density width must be positive")

    def density(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if self.density_kind == "gaussian":
            return self.amplitude * np.exp(-((r / self.width) ** 2))
        if self.density_kind == "exponential":
            return self.amplitude * np.exp(-r / self.width)
        return np.zeros_like(r)

    @property
    def density_extent(self) -> float:
        if self.density_kind == "gaussian":
            return self.width * math.sqrt(40.0 * math.log(10.0))
        return self.width * 40.0 * math.log(10.0)

    def density_mass(self) -> float:
        """Integral of |density| over R^dim."""
        if self.density_kind == "none" or self.amplitude == 0.0:
            return 0.0
        rho = _uniform_nodes(self.density_extent, self.width / 256)
        radial = rho ** (self.dim - 1) * np.abs(self.density(rho))
        return sphere_area(self.dim) * float(simpson(radial, x=rho))

    def w_hat(self, xi: np.ndarray, tol: float = 1e-8) -> np.ndarray:
        """Fourier transform at |xi|; arrays are evaluated once per distinct radius."""
        xi_abs = np.abs(np.asarray(xi, dtype=float))
        if self.density_kind == "none" or self.amplitude == 0.0:
            return np.full(xi_abs.shape, float(self.atom_weight))
        radii, inverse = np.unique(xi_abs, return_inverse=True)
        step = min(self.width / 64.0, math.pi / (32.0 * max(float(radii.max()), 1.0)))
        rho = _uniform_nodes(self.density_extent, step)
        values, err = _richardson_fourier(self.density(rho), rho, radii, self.dim)
        scale = self.density_mass()
        if float(err.max()) > tol * max(scale, 1e-300):
            raise QuadratureFailure(
                f"Density transform error {float(err.max()):.3e} above {tol:.1e} x {scale:.3e}"
            )
        return (self.atom_weight + values)[inverse].reshape(xi_abs.shape)

    @classmethod
    def from_block(cls, block: object, dim: int) -> "PairPotential":
        params: Dict[str, float] = dict(getattr(block, "density_params", {}) or {})
        return cls(
            dim=dim,
            atom_weight=block.atom_weight,  # type: ignore[attr-defined]
            density_kind=block.density_kind,  # type: ignore[attr-defined]
            amplitude=params.get("amplitude", 0.0),
            width=params.get("width", 1.0),
        )


def eval_w_hat(w: PairPotential, xi: np.ndarray) -> np.ndarray:
    """w_hat at the wavevector(s) xi; the last axis is the vector axis."""
    radius = np.linalg.norm(np.atleast_1d(np.asarray(xi, dtype=float)), axis=-1)
    return w.w_hat(radius)


@dataclass(eq=False)
class PairKernel:
    """Tabulated radial h = F(f^2) with its cached functionals."""

    dim: int
    r: np.ndarray
    h: np.ndarray
    h0: float
    quad_error: float
    tail_estimate: float
    dh: np.ndarray = field(init=False)
    d2h: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.dh = np.gradient(self.h, self.r, edge_order=2)
        self.d2h = np.gradient(self.dh, self.r, edge_order=2)

    @property
    def r_hmax(self) -> float:
        return float(self.r[-1])

    @cached_property
    def I0(self) -> float:
        return float(simpson(np.abs(self.h), x=self.r))

    @cached_property
    def I1(self) -> float:
        return float(simpson(self.r * np.abs(self.h), x=self.r))

    @cached_property
    def I_reg(self) -> float:
        inner = slice(1, None)
        integrand = np.abs(self.dh[inner]) / self.r[inner] + np.abs(self.d2h[inner])
        return float(simpson(integrand, x=self.r[inner]))

    @cached_property
    def sup(self) -> float:
        return float(np.max(np.abs(self.h)))

    @cached_property
    def _spline(self) -> CubicSpline:
        return CubicSpline(self.r, self.h, bc_type=((1, 0.0), "not-a-knot"))

    def h_at(self, s: np.ndarray) -> np.ndarray:
        """Interpolated h(|s|), zero beyond the tabulation."""
        s = np.abs(np.asarray(s, dtype=float))
        inside = s <= self.r_hmax
        out = np.zeros_like(s)
        out[inside] = self._spline(s[inside])
        return out

    def tail_ratio(self, values: Optional[np.ndarray] = None) -> float:
        """|g(r_hmax)| r_hmax^2 relative to sup|g| (g = h by default)."""
        g = self.h if values is None else values
        peak = float(np.max(np.abs(g)))
        if peak == 0.0:
            return 0.0
        return float(abs(g[-1])) * self.r_hmax**2 / peak

    @cached_property
    def C1(self) -> float:
        return kernel_integrals(self, 1)

    @cached_property
    def C2(self) -> float:
        return kernel_integrals(self, 2)

    def scaled(self, factor: float) -> "PairKernel":
        return PairKernel(
            dim=self.dim,
            r=self.r,
            h=factor * self.h,
            h0=factor * self.h0,
            quad_error=abs(factor) * self.quad_error,
            tail_estimate=abs(factor) * self.tail_estimate,
        )

    def to_rows(self) -> list[tuple[float, float]]:
        return list(zip(self.r.tolist(), self.h.tolist()))


def radial_nodes(r_min: float, r_hmax: float, nodes: int) -> np.ndarray:
    """0, then log-spaced on [r_min, 1], then linear on [1, r_hmax]."""
    n_log = max(nodes // 4, 8)
    n_lin = max(nodes - n_log - 1, 8)
    log_part = np.geomspace(r_min, 1.0, n_log)
    lin_part = np.linspace(1.0, r_hmax, n_lin + 1)[1:]
    return np.concatenate(([0.0], log_part, lin_part))


def build_kernel_h(
    f: MomentumDistribution,
    nodes: int = 4096,
    r_min: float = 1e-3,
    r_hmax: float = 64.0,
    tol: float = 1e-6,
) -> PairKernel:
    """Tabulate h(r) by radial quadrature of f^2 with a Richardson error estimate."""
    p = f.tail_exponent
    if not math.isinf(p) and p <= f.dim:
        raise NonIntegrable(
            f"f^2 decays like r^-{p:.3f} at R={f.r_max:.1f}: not integrable in dimension {f.dim}"
        )

    r = radial_nodes(r_min, r_hmax, nodes)
    rho = _uniform_nodes(f.r_max, math.pi / (32.0 * r_hmax))
    values = f.f2(rho)
    h, err = _richardson_fourier(values, rho, r, f.dim)
    h0 = float(h[0])
    tail = f.tail_estimate()
    quad_error = float(err.max()) + tail

    if quad_error > tol * max(abs(h0), 1e-300):
        raise QuadratureFailure(
            f"h tabulation error {quad_error:.3e} exceeds {tol:.1e} relative to h(0)={h0:.6e}"
        )

    kernel = PairKernel(dim=f.dim, r=r, h=h, h0=h0, quad_error=quad_error, tail_estimate=tail)
    logger.info(
        f"✅ Pair kernel built ({f.kind}, dim={f.dim}): h(0)={h0:.6e}, "
        f"I0={kernel.I0:.4e}, I1={kernel.I1:.4e}, err={quad_error:.2e}"
    )
    return kernel


def kernel_integrals(h: PairKernel, p: int, n: int = 801) -> float:
    """C_p(h) = int dv ( int du |u|^(1/p - 1/2) |h|^p (sqrt(u^2+v^2)) )^(2/p), p in {1, 2}."""
    if p not in (1, 2):
        raise ValueError(f"p must be 1 or 2, got {p}")
    absolute = np.abs(h.h)
    peak = float(absolute.max())
    if peak == 0.0:
        return 0.0
    significant = np.nonzero(absolute > 1e-14 * peak)[0]
    extent = float(h.r[min(significant[-1] + 1, h.r.size - 1)])

    def integrate(points: int) -> float:
        v = np.linspace(0.0, extent, points)
        if p == 1:
            # u = y^2 removes the sqrt(u) endpoint singularity
            y = np.linspace(0.0, math.sqrt(extent), points)
            u = y**2
            weight = 2.0 * y * np.sqrt(u)
            axis = y
        else:
            u = np.linspace(0.0, extent, points)
            weight = np.ones_like(u)
            axis = u
        radius = np.sqrt(u[None, :] ** 2 + v[:, None] ** 2)
        inner = 2.0 * simpson(weight[None, :] * np.abs(h.h_at(radius)) ** p, x=axis, axis=1)
        return 2.0 * float(simpson(inner ** (2.0 / p), x=v))

    fine = integrate(n)
    coarse = integrate((n + 1) // 2)
    if abs(fine - coarse) > 1e-3 * max(abs(fine), 1e-300):
        raise QuadratureFailure(f"C_{p}(h) not resolved: {fine:.6e} vs {coarse:.6e}")
    return fine


class HypothesisEntry(BaseModel):
    passed: bool
    value: float
    margin: float
    required: bool = True
    detail: str = ""


class HypothesisReport(BaseModel):
    passed: bool
    entries: Dict[str, HypothesisEntry]
    eps_h: float
    w_hat_zero: float
    w_hat_negative_sup: float
    I1: float
    node_resolution: Dict[str, float]


def _finite(x: float, cap: float = 1e12) -> float:
    if math.isnan(x):
        return -cap
    return float(max(min(x, cap), -cap))


def check_hypotheses(
    f: MomentumDistribution,
    w: PairPotential,
    eps_h: float,
    kernel: Optional[PairKernel] = None,
    xi_nodes: Optional[Sequence[float]] = None,
) -> HypothesisReport:
    """Evaluate every (f, w) hypothesis on tabulation nodes; failures are entries."""
    if kernel is None:
        kernel = build_kernel_h(f)
    dim = f.dim
    entries: Dict[str, HypothesisEntry] = {}

    rho = f.momentum_nodes()
    f_vals = f.f(rho)
    f2_vals = f.f2(rho)
    df_vals = f.df(rho)
    f_peak = float(np.max(f_vals))

    min_f2 = float(np.min(f2_vals))
    entries["positivity"] = HypothesisEntry(
        passed=bool(min_f2 > 0.0 and np.all(np.isfinite(f2_vals))),
        value=min_f2,
        margin=_finite(min_f2),
        detail="min f^2 on momentum nodes",
    )

    check_nodes = f.table_r if f.kind == "tabulated" else rho
    jumps = np.abs(np.diff(f.f(check_nodes)))
    max_jump = float(jumps.max()) if jumps.size else 0.0
    entries["c1"] = HypothesisEntry(
        passed=bool(max_jump <= 0.1 * f_peak),
        value=max_jump,
        margin=_finite(0.1 * f_peak - max_jump),
        detail="largest jump of f between adjacent nodes vs 10% of max f",
    )

    slope = float(np.max(df_vals[1:]))
    entries["strictly_decreasing"] = HypothesisEntry(
        passed=bool(slope < 0.0),
        value=slope,
        margin=_finite(-slope),
        detail="max of d_r f over nodes with r > 0",
    )

    p = f.tail_exponent
    area = sphere_area(dim)
    moment_xi = area * float(simpson(rho ** (dim - 1) * np.sqrt(1 + rho**2) * f2_vals, x=rho))
    entries["moment_xi"] = HypothesisEntry(
        passed=bool(math.isinf(p) or p > dim + 1),
        value=moment_xi,
        margin=_finite(p - (dim + 1)),
        detail="int <xi> f^2 dxi; margin is the excess tail decay exponent",
    )
    grad_integrand = rho ** (dim - 2) * np.abs(f_vals * df_vals) if dim >= 2 else np.abs(
        f_vals * df_vals
    ) / np.maximum(rho, rho[1])
    moment_grad = area * float(simpson(grad_integrand, x=rho))
    entries["moment_grad"] = HypothesisEntry(
        passed=bool((math.isinf(p) or p > dim - 1) and math.isfinite(moment_grad)),
        value=moment_grad,
        margin=_finite(p - (dim - 1)),
        detail="int |xi|^-1 |f d_r f| dxi",
    )

    tail_h = kernel.tail_ratio()
    entries["h_integrable"] = HypothesisEntry(
        passed=bool(tail_h < 1e-6),
        value=kernel.I0 + kernel.I1,
        margin=_finite(-math.log10(max(tail_h, 1e-300)) - 6.0),
        detail="int (1+r)|h|; margin in decades below the tail threshold",
    )
    tail_reg = max(kernel.tail_ratio(kernel.dh), kernel.tail_ratio(kernel.d2h))
    entries["h_regular"] = HypothesisEntry(
        passed=bool(tail_reg < 1e-6 and math.isfinite(kernel.I_reg)),
        value=kernel.I_reg,
        margin=_finite(-math.log10(max(tail_reg, 1e-300)) - 6.0),
        required=dim == 3,
        detail="int |h'|/r + |h''| (required in dimension 3 only)",
    )

    if xi_nodes is None:
        xi_max = max(20.0, 40.0 / w.width) if w.density_kind != "none" else 20.0
        xi_nodes = np.linspace(0.0, xi_max, 2049)
    w_vals = w.w_hat(np.asarray(xi_nodes, dtype=float))
    negative_sup = float(np.max(np.maximum(-w_vals, 0.0)))
    w0 = float(w.w_hat(np.array([0.0]))[0])

    neg_value = negative_sup * kernel.I1
    entries["interaction_negative"] = HypothesisEntry(
        passed=bool(neg_value < 2.0),
        value=neg_value,
        margin=_finite(2.0 - neg_value),
        detail="||(w_hat)_-||_inf * int r|h| < 2",
    )
    zero_value = max(w0, 0.0) * eps_h
    entries["interaction_zero"] = HypothesisEntry(
        passed=bool(zero_value < 1.0),
        value=zero_value,
        margin=_finite(1.0 - zero_value),
        detail="w_hat(0)_+ * eps_h < 1",
    )

    passed = all(entry.passed for entry in entries.values() if entry.required)
    report = HypothesisReport(
        passed=passed,
        entries=entries,
        eps_h=float(eps_h),
        w_hat_zero=w0,
        w_hat_negative_sup=negative_sup,
        I1=kernel.I1,
        node_resolution={
            "momentum_nodes": float(rho.size),
            "momentum_step": float(rho[1] - rho[0]),
            "kernel_nodes": float(kernel.r.size),
            "r_max": f.r_max,
        },
    )
    if passed:
        logger.info("✅ All required hypotheses hold")
    else:
        failed = [name for name, e in entries.items() if e.required and not e.passed]
        logger.warning(f"⚠️ Hypotheses failed: {', '.join(failed)}")
    return report
