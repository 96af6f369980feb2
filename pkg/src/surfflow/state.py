"""Simulation state at one time level and conserved-quantity observables."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .constitutive import ConstitutiveSet, ModelParams
from .linalg import SaddleSolver
from .mesh import Grid, ScalarField, VectorField, div

__all__ = ["State", "Observables", "observables", "initialize_scenario",
           "ScenarioConfig", "SCENARIO_NAMES", "project_divergence_free"]

SCENARIO_NAMES = ("uniform", "droplet", "shear-droplet", "random-seed")


@dataclass
class State:
    """One time level: face velocity, cell pressure (mean zero), order
    parameter phi, chemical potentials mu and q, time t, step index k."""

    v: VectorField
    p: ScalarField
    phi: ScalarField
    mu: ScalarField
    q: ScalarField
    t: float = 0.0
    k: int = 0

    @property
    def grid(self) -> Grid:
        return self.phi.grid

    def copy(self) -> "State":
        return State(self.v.copy(), self.p.copy(), self.phi.copy(),
                     self.mu.copy(), self.q.copy(), self.t, self.k)

    def validate(self, div_tol: float = 1e-9) -> None:
        for name, f in (("v", self.v), ("p", self.p), ("phi", self.phi),
                        ("mu", self.mu), ("q", self.q)):
            if not f.is_finite():
                raise ValueError(f"state field {name} contains non-finite values")
        d = float(np.abs(div(self.v).data).max())
        if d > div_tol:
            raise ValueError(f"state velocity is not divergence free: {d:.3e}")
        if abs(self.p.mean()) > 1e-10 * (1.0 + float(np.abs(self.p.data).max())):
            raise ValueError("pressure mean is not pinned to zero")


@dataclass(frozen=True)
class Observables:
    phi_mass: float
    surf_total: float
    kinetic: float
    div_inf: float
    phi_range: tuple
    q_range: tuple


def observables(s: State, cset: ConstitutiveSet, params: ModelParams) -> Observables:
    """Midpoint-rule observables sharing the stepper's operators.

    surf_total integrates the surfactant density f(q) W(phi)/epsilon + g(q);
    the kinetic term averages squared face velocities to cells, which equals
    the face-weighted sum by interpolation duality.
    """
    g = s.grid
    dV = g.dV
    phi, q = s.phi.data, s.q.data
    surf = cset.f(q) * cset.W(phi) / params.epsilon + cset.g(q)
    u2 = g.ops.Afc @ (s.v.data * s.v.data)
    kinetic = 0.5 * dV * float((cset.rho(phi) * u2).sum())
    return Observables(
        phi_mass=s.phi.integral(),
        surf_total=float(surf.sum()) * dV,
        kinetic=kinetic,
        div_inf=float(np.abs(div(s.v).data).max()),
        phi_range=(float(phi.min()), float(phi.max())),
        q_range=(float(q.min()), float(q.max())),
    )


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "uniform"
    phi0: float = 0.0
    q0: float = 0.0
    radius: float = 0.25
    center_x: float = 0.5
    center_y: float = 0.5
    q_amp: float = 0.5
    q_sigma: float = 0.15
    shear: float = 0.0
    sigma: float = 0.01
    seed: int = 1234


def project_divergence_free(v: VectorField) -> VectorField:
    """L2 projection onto the discretely divergence-free space (same saddle
    machinery as the momentum solve, with a mass velocity block)."""
    g = v.grid
    mass = sp.identity(g.n_faces, format="csr") * g.dV
    solver = SaddleSolver(g, mass)
    vd, _, _ = solver.solve(v.data)
    return VectorField(g, vd)


def _consistent_mu(phi: ScalarField, q: ScalarField, cset: ConstitutiveSet,
                   params: ModelParams) -> ScalarField:
    g = phi.grid
    lap_phi = g.ops.D @ (g.ops.G @ phi.data)
    mu = -params.epsilon * lap_phi \
        + cset.h(q.data) * cset.Wp(phi.data) / params.epsilon
    return ScalarField(g, mu)


def initialize_scenario(scn: ScenarioConfig, grid: Grid, params: ModelParams,
                        cset: ConstitutiveSet) -> State:
    """Build the initial state for a named scenario.

    uniform       -- constant fields (an exact fixed point of the scheme)
    droplet       -- tanh circular interface of width ~epsilon, Gaussian
                     surfactant-potential blob, fluid at rest
    shear-droplet -- droplet plus a shear profile projected to the discrete
                     divergence-free space
    random-seed   -- small seeded perturbation around phi0

    mu is initialized from the chemical-potential relation so the state
    starts consistent; the initial velocity is always projected to
    max |div v| <= 1e-12.
    """
    if scn.name not in SCENARIO_NAMES:
        raise ValueError(f"unknown scenario {scn.name!r}; know {SCENARIO_NAMES}")
    X, Y = grid.cell_centers()

    if scn.name == "uniform":
        phi = ScalarField.full(grid, scn.phi0)
        q = ScalarField.full(grid, scn.q0)
        v = VectorField.zeros(grid)
    elif scn.name in ("droplet", "shear-droplet"):
        r = np.hypot(X - scn.center_x, Y - scn.center_y)
        prof = np.tanh((scn.radius - r) / (np.sqrt(2.0) * params.epsilon))
        phi = ScalarField(grid, prof.ravel())
        blob = scn.q0 + scn.q_amp * np.exp(-0.5 * (r / scn.q_sigma) ** 2)
        q = ScalarField(grid, blob.ravel())
        v = VectorField.zeros(grid)
        if scn.name == "shear-droplet":
            XF, YF = grid.xface_coords()
            if grid.periodic:
                ux = scn.shear * np.sin(2.0 * np.pi * YF / grid.ly)
            else:
                ux = scn.shear * (2.0 * YF / grid.ly - 1.0)
            v = VectorField(grid, np.concatenate([ux.ravel(),
                                                  np.zeros(grid.n_yfaces)]))
    else:  # random-seed
        rng = np.random.default_rng(scn.seed)
        phi = ScalarField(grid, scn.phi0 + scn.sigma * rng.standard_normal(grid.n_cells))
        q = ScalarField.full(grid, scn.q0)
        v = VectorField.zeros(grid)

    if float(np.abs(v.data).max()) > 0.0:
        v = project_divergence_free(v)
        if grid.periodic:
            # periodic momentum solves act on mean-free velocities
            ux, uy = v.ux, v.uy
            v = VectorField(grid, np.concatenate([ux - ux.mean(), uy - uy.mean()]))
    mu = _consistent_mu(phi, q, cset, params)
    s = State(v=v, p=ScalarField.zeros(grid), phi=phi, mu=mu, q=q, t=0.0, k=0)
    s.validate(div_tol=1e-12)
    return s
