"""2-D powered descent: dynamics, partial feedback, saturation, problem builders.

State ``x = (y, z, v_y, v_z, mu)``; thrust control ``u = (u_y, u_z)`` as a
fraction of the maximal thrust.  The partial feedback law acts on the
measurable part ``xbar = (y, z, v_y, v_z)`` only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .core import DynamicsModel, GaussianBelief, QuadraticCost
from .ocp import ChanceConstraintSpec, Horizon, RobustOCP, TerminalTarget

N_STATE = 5
N_FEEDBACK = 10
STATE_SCALE = np.array([1e3, 1e3, 1e2, 1e2, 4e4])
TIME_SCALE = 30.0
MASS_FLOOR = 1.0


class DryMassError(ValueError):
    """Mass reached a non-physical value."""


@dataclass(frozen=True)
class RocketParams:
    T: float = 1e6
    q: float = 300.0
    g0: float = 9.81
    u_min: float = 0.2
    u_max: float = 0.8
    sigma: tuple = (100.0, 10.0)
    dispersion_mode: str = "constant"
    mu_ref: float = 40000.0

    def __post_init__(self):
        if not (self.T > 0 and self.q > 0 and self.g0 > 0):
            raise ValueError("T, q and g0 must be positive")
        if not 0 <= self.u_min <= self.u_max:
            raise ValueError("need 0 <= u_min <= u_max")
        if self.dispersion_mode not in ("constant", "mass_scaled"):
            raise ValueError("dispersion_mode must be 'constant' or 'mass_scaled'")


@dataclass(frozen=True)
class FeedbackParams:
    rho: float
    theta: float
    K_n: tuple = (0.0, 0.0, 0.0, 0.0)
    K_d: tuple = (0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        vec = self.to_vector()
        if not np.all(np.isfinite(vec)):
            raise ValueError("feedback parameters must be finite")

    def to_vector(self):
        return np.concatenate([[self.rho, self.theta], np.asarray(self.K_n, float),
                               np.asarray(self.K_d, float)])

    @classmethod
    def from_vector(cls, nu):
        nu = np.asarray(nu, dtype=float)
        return cls(float(nu[0]), float(nu[1]), tuple(nu[2:6]), tuple(nu[6:10]))


def _mass(params, x):
    mu = x[..., 4]
    if np.any(mu <= 0):
        raise DryMassError("mass must stay positive")
    return mu


def _polar_linearization(params, x, s, ang, ds_dx=None, dang_dx=None):
    """Drift and state Jacobian for thrust magnitude ``s`` along ``ang``.

    ``ds_dx``/``dang_dx`` (shape (..., 4)) are the sensitivities of the
    thrust channels to the measurable states, when the thrust is a feedback.
    """
    x = np.asarray(x, dtype=float)
    mu = _mass(params, x)
    shape = np.broadcast_shapes(x.shape[:-1], np.shape(s), np.shape(ang))
    c, sn = np.cos(ang), np.sin(ang)
    tm = params.T / mu
    f = np.empty(shape + (N_STATE,))
    f[..., 0] = x[..., 2]
    f[..., 1] = x[..., 3]
    f[..., 2] = tm * s * c
    f[..., 3] = tm * s * sn - params.g0
    f[..., 4] = -params.q * np.abs(s)
    A = np.zeros(shape + (N_STATE, N_STATE))
    A[..., 0, 2] = 1.0
    A[..., 1, 3] = 1.0
    A[..., 2, 4] = -tm * s * c / mu
    A[..., 3, 4] = -tm * s * sn / mu
    if ds_dx is not None:
        tmc = (tm * c)[..., None]
        tms = (tm * sn)[..., None]
        A[..., 2, :4] = tmc * ds_dx - (tms * s[..., None]) * dang_dx
        A[..., 3, :4] = tms * ds_dx + (tmc * s[..., None]) * dang_dx
        A[..., 4, :4] = -params.q * np.sign(s)[..., None] * ds_dx
    return f, A


def descent_drift(params, x, u):
    """Unperturbed dynamics ``(v, T u / mu - (0, g0), -q |u|)``."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    mu = _mass(params, x)
    out = np.empty(np.broadcast_shapes(x.shape, u.shape[:-1] + (N_STATE,)))
    out[..., 0] = x[..., 2]
    out[..., 1] = x[..., 3]
    out[..., 2] = params.T * u[..., 0] / mu
    out[..., 3] = params.T * u[..., 1] / mu - params.g0
    out[..., 4] = -params.q * np.hypot(u[..., 0], u[..., 1])
    return out


def descent_jacobian(params, x, u):
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    mu = _mass(params, x)
    shape = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
    A = np.zeros(shape + (N_STATE, N_STATE))
    A[..., 0, 2] = 1.0
    A[..., 1, 3] = 1.0
    A[..., 2, 4] = -params.T * u[..., 0] / mu ** 2
    A[..., 3, 4] = -params.T * u[..., 1] / mu ** 2
    return A


def dispersion(params):
    """Dispersion on the velocity rows, two independent channels.

    The intensities ``sigma`` are forces (N); ``constant`` divides them by the
    reference mass, ``mass_scaled`` by the current mass.
    """
    sy, sz = params.sigma

    def g(x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        shape = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
        G = np.zeros(shape + (N_STATE, 2))
        if params.dispersion_mode == "constant":
            scale = np.full(shape, 1.0 / params.mu_ref)
        else:
            scale = np.broadcast_to(1.0 / _mass(params, x), shape)
        G[..., 2, 0] = sy * scale
        G[..., 3, 1] = sz * scale
        return G

    return g


def noise_covariance(params):
    sy, sz = params.sigma
    base = np.zeros((N_STATE, N_STATE))
    base[2, 2], base[3, 3] = sy ** 2, sz ** 2
    if params.dispersion_mode == "constant":
        fixed = base / params.mu_ref ** 2
        fixed.flags.writeable = False
        return lambda x, u: fixed
    return lambda x, u: base / (_mass(params, np.asarray(x, float)) ** 2)[..., None, None]


def _model(params, name, k, drift, jac, lin):
    return DynamicsModel(n=N_STATE, k=k, drift=drift, jacobian=jac, linearization=lin,
                         dispersion=dispersion(params),
                         noise_covariance=noise_covariance(params), noise_dim=2, name=name)


def plain_model(params):
    return _model(params, "descent-open-loop", 2,
                  lambda x, u: descent_drift(params, x, u),
                  lambda x, u: descent_jacobian(params, x, u),
                  lambda x, u: (descent_drift(params, x, u), descent_jacobian(params, x, u)))


def polar_model(params):
    """Open-loop dynamics with the thrust given as (norm, angle)."""
    def lin(x, w):
        w = np.asarray(w, dtype=float)
        return _polar_linearization(params, x, w[..., 0], w[..., 1])

    return _model(params, "descent-polar", 2, lambda x, w: lin(x, w)[0],
                  lambda x, w: lin(x, w)[1], lin)


def feedback_law(nu, xbar):
    """``(rho + K_n xbar) (cos(theta + K_d xbar), sin(theta + K_d xbar))``."""
    nu = np.asarray(nu, dtype=float)
    xbar = np.asarray(xbar, dtype=float)
    s = nu[..., 0] + np.sum(nu[..., 2:6] * xbar, axis=-1)
    ang = nu[..., 1] + np.sum(nu[..., 6:10] * xbar, axis=-1)
    return np.stack([s * np.cos(ang), s * np.sin(ang)], axis=-1)


def feedback_norm_channel(nu, xbar):
    """Signed norm channel ``rho + K_n xbar`` before any saturation."""
    nu = np.asarray(nu, dtype=float)
    return nu[..., 0] + np.sum(nu[..., 2:6] * np.asarray(xbar, dtype=float), axis=-1)


def smooth_sat(s, a, b, eps):
    """``(b+a)/2 + (sqrt((s-a)^2+eps^2) - sqrt((s-b)^2+eps^2))/2``; exact clamp at eps=0."""
    if not a < b:
        raise ValueError("saturation needs a < b")
    if eps < 0:
        raise ValueError("eps must be non-negative")
    s = np.asarray(s, dtype=float)
    if eps == 0:
        val = 0.5 * (b + a) + 0.5 * (np.abs(s - a) - np.abs(s - b))
    else:
        val = 0.5 * (b + a) + 0.5 * (np.sqrt((s - a) ** 2 + eps ** 2)
                                     - np.sqrt((s - b) ** 2 + eps ** 2))
    return val if val.ndim else float(val)


def smooth_sat_derivative(s, a, b, eps):
    s = np.asarray(s, dtype=float)
    if eps == 0:
        return 0.5 * (np.sign(s - a) - np.sign(s - b))
    return 0.5 * ((s - a) / np.sqrt((s - a) ** 2 + eps ** 2)
                  - (s - b) / np.sqrt((s - b) ** 2 + eps ** 2))


def feedback_model(params, eps_sat=None):
    """Partial-feedback dynamics with decision ``nu`` (10 entries).

    ``eps_sat=None`` leaves the norm channel unsaturated; any ``eps_sat >= 0``
    passes it through :func:`smooth_sat` on ``[u_min, u_max]`` (``0`` is the
    exact clamp).
    """
    a, b = params.u_min, params.u_max

    def lin(x, nu):
        x = np.asarray(x, dtype=float)
        nu = np.asarray(nu, dtype=float)
        xbar = x[..., :4]
        Kn, Kd = nu[..., 2:6], nu[..., 6:10]
        s = nu[..., 0] + np.sum(Kn * xbar, axis=-1)
        ang = nu[..., 1] + np.sum(Kd * xbar, axis=-1)
        shape = np.broadcast_shapes(x.shape[:-1], nu.shape[:-1])
        Kn = np.broadcast_to(Kn, shape + (4,))
        Kd = np.broadcast_to(Kd, shape + (4,))
        if eps_sat is None:
            return _polar_linearization(params, x, s, ang, Kn, Kd)
        ds = smooth_sat_derivative(s, a, b, eps_sat)
        s = np.asarray(smooth_sat(s, a, b, eps_sat))
        return _polar_linearization(params, x, s, ang, ds[..., None] * Kn, Kd)

    name = "descent-feedback" if eps_sat is None else f"descent-feedback-sat({eps_sat:g})"
    return _model(params, name, N_FEEDBACK, lambda x, nu: lin(x, nu)[0],
                  lambda x, nu: lin(x, nu)[1], lin)


def saturated_feedback_drift(params, nu, x, eps_sat):
    return feedback_model(params, eps_sat).f(np.asarray(x, float), np.asarray(nu, float))


# --------------------------------------------------------------------- problems
@dataclass(frozen=True)
class ScenarioConfig:
    """Reference landing scenario; defaults reproduce the published settings."""
    T: float = 1e6
    q: float = 300.0
    g0: float = 9.81
    u_min: float = 0.2
    u_max: float = 0.8
    r0: tuple = (1000.0, 4000.0)
    v0: tuple = (-75.0, -200.0)
    mu0: float = 40000.0
    sigma: tuple = (100.0, 10.0)
    dispersion_mode: str = "constant"
    P0_diag: tuple = (100.0, 100.0, 1.0, 1.0, 1600.0)
    Q_diag: tuple = (10.0, 50.0, 1.0, 10.0, 0.0)
    Qf_diag: tuple = (14.0, 20.0, 0.2, 4.0, 0.0)
    weight_scale: float = 1e3
    cost_units: str = "scaled"
    gain_weights: tuple = (2.0, 1.0)
    gain_bound: float = 5.0
    eps_sat: float = 0.02
    p: float = 0.99
    t_min: float = 5.0
    t_max: float = 80.0
    t_guess: float = 30.0

    def __post_init__(self):
        if len(self.r0) != 2 or len(self.v0) != 2 or len(self.sigma) != 2:
            raise ValueError("r0, v0 and sigma need two entries")
        for name in ("P0_diag", "Q_diag", "Qf_diag"):
            vals = getattr(self, name)
            if len(vals) != N_STATE or min(vals) < 0:
                raise ValueError(f"{name} needs {N_STATE} non-negative entries")
        if self.mu0 <= 0:
            raise ValueError("mu0 must be positive")
        if not 0 < self.t_min < self.t_guess < self.t_max:
            raise ValueError("need 0 < t_min < t_guess < t_max")
        if not 0.5 < self.p < 1:
            raise ValueError("p must lie in (0.5, 1)")
        if self.eps_sat < 0:
            raise ValueError("eps_sat must be non-negative")
        if self.cost_units not in ("physical", "scaled"):
            raise ValueError("cost_units must be 'physical' or 'scaled'")
        if not self.gain_bound > 0:
            raise ValueError("gain_bound must be positive")
        self.rocket()  # validates thrust and noise settings

    def rocket(self):
        return RocketParams(T=self.T, q=self.q, g0=self.g0, u_min=self.u_min,
                            u_max=self.u_max, sigma=tuple(self.sigma),
                            dispersion_mode=self.dispersion_mode, mu_ref=self.mu0)

    def initial_belief(self):
        mean = np.array([*self.r0, *self.v0, self.mu0])
        return GaussianBelief(mean, np.diag(self.P0_diag))

    def to_dict(self):
        return {f.name: (list(getattr(self, f.name)) if isinstance(getattr(self, f.name), tuple)
                         else getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown scenario keys: {sorted(unknown)}")
        kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()}
        return cls(**kw)


def _landing_target():
    E = np.zeros((4, N_STATE))
    E[np.arange(4), np.arange(4)] = 1.0
    return TerminalTarget(E, np.zeros(4), scale=STATE_SCALE[:4])


def _fuel_cost(cfg, R=None):
    """``-mu(t_f) + tr(Qf P(t_f)) + int tr(Q P) + R w^2 dt``.

    With ``cost_units="scaled"`` every term is evaluated in the solver's
    nondimensional units: states divided by ``STATE_SCALE``, time by
    ``TIME_SCALE`` and gains expressed per scaled state.
    """
    Q = np.diag(cfg.Q_diag) * cfg.weight_scale
    Qf = np.diag(cfg.Qf_diag) * cfg.weight_scale
    bpsi = np.zeros(N_STATE)
    bpsi[4] = -1.0
    if cfg.cost_units == "scaled":
        inv = np.diag(1.0 / STATE_SCALE)
        Q = inv @ Q @ inv / TIME_SCALE
        Qf = inv @ Qf @ inv
        bpsi[4] = -1.0 / STATE_SCALE[4]
        if R is not None:
            R = R / feedback_scale() ** 2 / TIME_SCALE
    return QuadraticCost(n=N_STATE, bpsi=bpsi, R=R, Q_bar=Q, Qf_bar=Qf)


def straight_line_angle(cfg, t_f=None):
    """Thrust angle of the constant acceleration that lands at ``t_f``."""
    t_f = cfg.t_guess if t_f is None else t_f
    r0, v0 = np.array(cfg.r0), np.array(cfg.v0)
    acc = -2.0 * (r0 + v0 * t_f) / t_f ** 2
    acc[1] += cfg.g0
    return math.atan2(acc[1], acc[0])


def build_problem4(cfg):
    """Open-loop robust landing with thrust in polar form ``(u_rho, u_theta)``."""
    params = cfg.rocket()
    theta0 = straight_line_angle(cfg)
    rho0 = 0.5 * (cfg.u_min + cfg.u_max)

    def guess(N):
        return np.tile([rho0, theta0], (N, 1)), cfg.t_guess

    return RobustOCP(
        model=polar_model(params), cost=_fuel_cost(cfg), init=cfg.initial_belief(),
        target=_landing_target(), horizon=Horizon(bounds=(cfg.t_min, cfg.t_max)),
        control_lower=[cfg.u_min, -np.inf], control_upper=[cfg.u_max, np.inf],
        norm_bounds=(cfg.u_min, cfg.u_max), time_scale=TIME_SCALE,
        initial_guess=guess, control_labels=("u_rho", "u_theta"), name="problem4")


def feedback_scale():
    """Decision scaling for ``nu``: gains act on positions per km, velocities per 100 m/s."""
    return np.concatenate([[1.0, 1.0], 1.0 / STATE_SCALE[:4], 1.0 / STATE_SCALE[:4]])


FEEDBACK_LABELS = ("rho", "theta", "Kn_y", "Kn_z", "Kn_vy", "Kn_vz",
                   "Kd_y", "Kd_z", "Kd_vy", "Kd_vz")


def _feedback_ocp(cfg, model, chance, name):
    theta0 = straight_line_angle(cfg)
    rho0 = 0.5 * (cfg.u_min + cfg.u_max)
    wn, wd = cfg.gain_weights
    R = np.array([0.0, 0.0] + [wn] * 4 + [wd] * 4)
    # gains bounded in scaled units (per km, per 100 m/s)
    box = np.concatenate([[np.inf, np.inf], np.full(8, cfg.gain_bound)]) * feedback_scale()

    def guess(N):
        W = np.zeros((N, N_FEEDBACK))
        W[:, 0], W[:, 1] = rho0, theta0
        return W, cfg.t_guess

    return RobustOCP(
        model=model, cost=_fuel_cost(cfg, R=R), init=cfg.initial_belief(),
        target=_landing_target(), horizon=Horizon(bounds=(cfg.t_min, cfg.t_max)),
        control_lower=-box, control_upper=box, chance=chance,
        norm_bounds=(cfg.u_min, cfg.u_max), control_scale=feedback_scale(),
        time_scale=TIME_SCALE, initial_guess=guess, control_labels=FEEDBACK_LABELS,
        name=name)


def build_problem5(cfg):
    """Partial feedback with the norm channel smoothly saturated in the model."""
    model = feedback_model(cfg.rocket(), eps_sat=cfg.eps_sat)
    return _feedback_ocp(cfg, model, (), "problem5")


def build_problem6(cfg):
    """Partial feedback with the norm bounds imposed as Gaussian chance constraints."""
    model = feedback_model(cfg.rocket(), eps_sat=None)
    chance = (ChanceConstraintSpec(bound=cfg.u_max, side="upper", p=cfg.p),
              ChanceConstraintSpec(bound=cfg.u_min, side="lower", p=cfg.p))
    return _feedback_ocp(cfg, model, chance, "problem6")


BUILDERS = {"problem4": build_problem4, "problem5": build_problem5,
            "problem6": build_problem6}


def simulation_model(params, scenario):
    """Model used to simulate a planned control under noise.

    Feedback scenarios are simulated with the exact clamp on the norm channel.
    """
    if scenario == "problem4":
        return polar_model(params)
    return feedback_model(params, eps_sat=0.0)


def control_norm(scenario, W, xbar=None):
    if scenario == "problem4":
        return np.abs(W[..., 0])
    return np.abs(feedback_norm_channel(W, xbar))
