"""Seeded data-generating processes for the simulation study.

Four designs:

* ``HOM`` — one AR common factor with a post-period regime shift, uniform
  loadings, and a homogeneous effect of 2 on every treated cell.
* ``HET`` — same untreated process, plus a two-factor heterogeneous effect
  ``1 + lam_a'F_a`` whose loadings and factors are centered and shifted so the
  realized ATT is exactly 2 in every replication.
* ``INV`` — time-invariant heterogeneous effects built from Bernoulli draws,
  the design under which the fitted factors can become collinear with the
  treatment dummy.
* ``DYN`` — event-time effects ``psi_t = t - T0`` plus idiosyncratic noise,
  additive unit/time effects, and two observed covariates correlated with the
  factor structure.

Structural objects (factors, loadings, Bernoulli draws, fixed effects) are
keyed only by ``structural_seed`` and are bitwise identical across
replications; per-replication noise comes from counter-based Philox streams
keyed by ``(noise_seed, rep, role)``, so parallel execution order can never
change a draw.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .panel import PanelData, treatment_mask

__all__ = ["DgpSpec", "GeneratedPanel", "substream", "generate", "gen_hom", "gen_het", "gen_inv", "gen_dyn"]

DESIGNS = ("HOM", "HET", "INV", "DYN")

# role tags for independent random streams
_FACTORS = 11
_LOADINGS = 12
_HET = 13
_BERNOULLI = 14
_TIME_FE = 15
_UNIT_FE = 16
_NOISE = 21
_COV_NOISE = 22
_EFFECT_NOISE = 23


def substream(*key: int) -> np.random.Generator:
    """Independent counter-based random stream keyed by a tuple of integers."""
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence([int(k) for k in key]))
    )


@dataclass(frozen=True)
class DgpSpec:
    """Full parameterization of one data-generating process."""

    design: str
    n: int
    t: int
    n1: int | None = None
    t0: int | None = None
    k0: int | None = None
    k_alpha: int | None = None
    structural_seed: int = 0
    noise_seed: int = 0

    def __post_init__(self):
        if self.design not in DESIGNS:
            raise ValueError(f"design must be one of {DESIGNS}, got {self.design!r}")
        if self.n1 is None:
            object.__setattr__(self, "n1", self.n // 2)
        if self.t0 is None:
            object.__setattr__(self, "t0", self.t // 2)
        if self.k0 is None:
            object.__setattr__(self, "k0", 2 if self.design == "DYN" else 1)
        if self.k_alpha is None:
            object.__setattr__(self, "k_alpha", 2 if self.design in ("HET", "INV") else 0)
        if not 1 <= self.n1 < self.n:
            raise ValueError(f"need 1 <= n1 < n, got n1={self.n1}, n={self.n}")
        if not 1 <= self.t0 < self.t:
            raise ValueError(f"need 1 <= t0 < t, got t0={self.t0}, t={self.t}")
        if self.design == "INV" and self.k_alpha not in (1, 2, 3):
            raise ValueError("INV design needs k_alpha in {1, 2, 3}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "DgpSpec":
        return cls(**data)


@dataclass(frozen=True)
class GeneratedPanel:
    """A generated panel plus its ground truth."""

    panel: PanelData
    true_att: float
    true_per_period: np.ndarray | None
    oracle_y0: np.ndarray
    effects: np.ndarray  # N x T, zero off the treated block

    def __post_init__(self):
        mask = treatment_mask(self.panel)
        cells = self.effects[mask > 0]
        if abs(self.true_att - cells.mean()) > 1e-12 * max(1.0, abs(self.true_att)):
            raise ValueError("true_att does not match mean effect on treated cells")
        recon = self.oracle_y0 + self.effects * mask
        if not np.allclose(self.panel.outcomes, recon, rtol=0, atol=1e-10):
            raise ValueError("outcomes != y(0) + effect on treated cells")


def _ar_factor(t: int, t0: int, rng: np.random.Generator) -> np.ndarray:
    """AR(1) factor at level -2: persistence 0.25 pre / 0.75 post, unit variance.

    The innovation variance ``1 - rho_t^2`` keeps the variance at one through
    the regime switch; the persistence jump makes realized pre- and
    post-period sample means differ while the level stays bounded, so
    convex-weighting estimators keep a well-behaved donor geometry.
    """
    level = -2.0
    f = np.empty(t)
    f[0] = level + rng.standard_normal()
    for s in range(1, t):
        rho = 0.25 + 0.50 * (s >= t0)
        f[s] = level * (1.0 - rho) + rho * f[s - 1] + rng.standard_normal() * np.sqrt(1.0 - rho**2)
    return f


def _hom_structure(spec: DgpSpec):
    f0 = _ar_factor(spec.t, spec.t0, substream(spec.structural_seed, _FACTORS))
    rng = substream(spec.structural_seed, _LOADINGS)
    lam = np.empty(spec.n)
    lam[: spec.n1] = rng.uniform(-np.sqrt(3.0 / 4.0), np.sqrt(3.0), spec.n1)
    lam[spec.n1:] = rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), spec.n - spec.n1)
    return f0, lam


def _assemble(spec: DgpSpec, y0: np.ndarray, effects: np.ndarray,
              per_period, covariates=()) -> GeneratedPanel:
    treated = frozenset(range(spec.n1))
    mask = np.zeros((spec.n, spec.t))
    mask[: spec.n1, spec.t0:] = 1.0
    panel = PanelData(
        outcomes=y0 + effects * mask,
        treated_units=treated,
        t0=spec.t0,
        covariates=tuple(covariates),
    )
    block = effects[: spec.n1, spec.t0:]
    return GeneratedPanel(
        panel=panel,
        true_att=float(block.mean()),
        true_per_period=None if per_period is None else np.asarray(per_period, dtype=float),
        oracle_y0=y0,
        effects=effects * mask,
    )


def gen_hom(spec: DgpSpec, rep: int) -> GeneratedPanel:
    """Homogeneous design: effect 2 on every treated cell."""
    _check_design(spec, "HOM")
    f0, lam = _hom_structure(spec)
    e = substream(spec.noise_seed, rep, _NOISE).standard_normal((spec.n, spec.t))
    y0 = np.outer(lam, f0) + e
    effects = np.full((spec.n, spec.t), 2.0)
    return _assemble(spec, y0, effects, np.full(spec.t - spec.t0, 2.0))


def gen_het(spec: DgpSpec, rep: int) -> GeneratedPanel:
    """Heterogeneous design: effect ``1 + lam_a'F_a`` with realized ATT 2.

    Loadings are recentered over treated units to mean (-1, 1) and factors
    over post periods to mean (1, 2), making the interaction average exactly
    one; with the common effect of 1 the ATT is 2 in every replication.
    """
    _check_design(spec, "HET")
    if spec.k_alpha != 2:
        raise ValueError("HET design uses k_alpha=2")
    f0, lam = _hom_structure(spec)
    e = substream(spec.noise_seed, rep, _NOISE).standard_normal((spec.n, spec.t))
    y0 = np.outer(lam, f0) + e

    rng = substream(spec.structural_seed, _HET)
    t1 = spec.t - spec.t0
    delta = rng.standard_normal((spec.n1, 2))
    f_raw = rng.standard_normal((t1, 2))
    lam_a = delta - delta.mean(axis=0) + np.array([-1.0, 1.0])
    f_a = f_raw - f_raw.mean(axis=0) + np.array([1.0, 2.0])
    block = 1.0 + lam_a @ f_a.T  # (N1, T1)

    effects = np.zeros((spec.n, spec.t))
    effects[: spec.n1, spec.t0:] = block
    return _assemble(spec, y0, effects, block.mean(axis=0))


def gen_inv(spec: DgpSpec, rep: int) -> GeneratedPanel:
    """Time-invariant heterogeneity: ``alpha_i`` from Bernoulli components.

    ``alpha_i = sum_j mu_j b_i^(j)`` with ``mu = (1/2, 1, -1/2)`` truncated to
    ``k_alpha`` terms and iid Bernoulli(1/2) draws fixed across replications.
    Expected ATT is 1/4, 3/4, 1/2 for ``k_alpha`` = 1, 2, 3.
    """
    _check_design(spec, "INV")
    mu = np.array([0.5, 1.0, -0.5])[: spec.k_alpha]
    b = (substream(spec.structural_seed, _BERNOULLI).random((spec.n, spec.k_alpha)) < 0.5)
    alpha_i = b.astype(float) @ mu

    f0 = substream(spec.structural_seed, _FACTORS).standard_normal(spec.t)
    lam = substream(spec.structural_seed, _LOADINGS).standard_normal(spec.n)
    e = substream(spec.noise_seed, rep, _NOISE).standard_normal((spec.n, spec.t))
    y0 = np.outer(lam, f0) + e

    effects = np.repeat(alpha_i[:, None], spec.t, axis=1)
    per_period = np.full(spec.t - spec.t0, float(alpha_i[: spec.n1].mean()))
    return _assemble(spec, y0, effects, per_period)


def gen_dyn(spec: DgpSpec, rep: int) -> GeneratedPanel:
    """Event-time design with covariates: ``alpha_it = psi_t + a_it``.

    ``psi_t = t - T0`` and ``a_it`` is idiosyncratic noise with variance 5,
    recentered over the treated block so the realized ATT equals the target
    ``(T1 + 1)/2`` exactly.  Outcomes add an intercept, two common factors,
    additive unit and time effects, and two covariates built from the same
    factor structure with coefficients 1 and 3.
    """
    _check_design(spec, "DYN")
    n, t, n1, t0 = spec.n, spec.t, spec.n1, spec.t0
    t1 = t - t0
    f0 = substream(spec.structural_seed, _FACTORS).standard_normal((t, 2))
    zeta = substream(spec.structural_seed, _TIME_FE).standard_normal(t)
    lam = substream(spec.structural_seed, _LOADINGS).uniform(-np.sqrt(3.0), np.sqrt(3.0), (n, 2))
    mu_i = substream(spec.structural_seed, _UNIT_FE).uniform(-np.sqrt(3.0), np.sqrt(3.0), n)

    e = substream(spec.noise_seed, rep, _NOISE).standard_normal((n, t))
    eta = substream(spec.noise_seed, rep, _COV_NOISE).standard_normal((2, n, t))
    a = substream(spec.noise_seed, rep, _EFFECT_NOISE).normal(0.0, np.sqrt(5.0), (n1, t1))
    a -= a.mean()  # recentered so the realized ATT hits (T1+1)/2 exactly

    common = lam @ f0.T  # (n, t)
    lam_shift = lam.sum(axis=1)  # lam_i'(1,1)
    f_shift = f0.sum(axis=1)  # F_t'(1,1)
    x = [1.0 + common + lam_shift[:, None] + f_shift[None, :] + eta[j] for j in range(2)]

    y0 = 5.0 + common + zeta[None, :] + mu_i[:, None] + x[0] + 3.0 * x[1] + e
    psi = np.arange(1, t1 + 1, dtype=float)
    effects = np.zeros((n, t))
    effects[:n1, t0:] = psi[None, :] + a
    return _assemble(spec, y0, effects, psi, covariates=x)


_GENERATORS = {"HOM": gen_hom, "HET": gen_het, "INV": gen_inv, "DYN": gen_dyn}


def generate(spec: DgpSpec, rep: int) -> GeneratedPanel:
    """Generate replication ``rep`` of the given design."""
    return _GENERATORS[spec.design](spec, rep)


def _check_design(spec: DgpSpec, expected: str) -> None:
    if spec.design != expected:
        raise ValueError(f"spec.design is {spec.design!r}, expected {expected!r}")
