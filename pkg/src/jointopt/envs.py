"""Classic-control environments: CartPole-v1, MountainCar-v0, Acrobot-v1.

Dynamics follow the canonical Gym definitions. Every function works on a
batch of states (first axis = episode), so many seeded episodes can be
stepped together; the single-episode ``reset``/``step`` API wraps a batch
of one.
"""

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EnvironmentSpec:
    name: str
    obs_dim: int
    n_actions: int
    root_lo: tuple
    root_hi: tuple
    max_steps: int
    reward_per_step: float
    action_names: tuple = ()

    @property
    def bounds(self):
        return np.array(self.root_lo), np.array(self.root_hi)


# velocity entries are unbounded in the Gym observation space and are clamped;
# cart position and pole angle use the termination limits, the range a live
# episode can occupy
CARTPOLE = EnvironmentSpec(
    "CartPole-v1", 4, 2,
    (-2.4, -3.0, -0.20943951023931953, -3.5),
    (2.4, 3.0, 0.20943951023931953, 3.5),
    500, 1.0, ("left", "right"),
)
MOUNTAINCAR = EnvironmentSpec(
    "MountainCar-v0", 2, 3,
    (-1.2, -0.07), (0.6, 0.07),
    200, -1.0, ("left", "none", "right"),
)
ACROBOT = EnvironmentSpec(
    "Acrobot-v1", 6, 3,
    (-1.0, -1.0, -1.0, -1.0, -4 * math.pi, -9 * math.pi),
    (1.0, 1.0, 1.0, 1.0, 4 * math.pi, 9 * math.pi),
    500, -1.0, ("torque-1", "torque0", "torque+1"),
)

ENVIRONMENTS = {s.name: s for s in (CARTPOLE, MOUNTAINCAR, ACROBOT)}
ALIASES = {"cartpole": "CartPole-v1", "mountaincar": "MountainCar-v0", "acrobot": "Acrobot-v1"}


def get_spec(name):
    key = ALIASES.get(name.lower(), name)
    if key not in ENVIRONMENTS:
        raise KeyError(f"unknown environment {name!r}")
    return ENVIRONMENTS[key]


# -- CartPole -----------------------------------------------------------------

_CP_GRAVITY = 9.8
_CP_MASSCART = 1.0
_CP_MASSPOLE = 0.1
_CP_TOTAL = _CP_MASSCART + _CP_MASSPOLE
_CP_LENGTH = 0.5
_CP_PML = _CP_MASSPOLE * _CP_LENGTH
_CP_FORCE = 10.0
_CP_TAU = 0.02
_CP_THETA_LIMIT = 12 * 2 * math.pi / 360
_CP_X_LIMIT = 2.4


def _cartpole_reset(rng, n):
    return rng.uniform(-0.05, 0.05, size=(n, 4))


def _cartpole_step(s, a):
    x, x_dot, theta, theta_dot = s.T
    force = np.where(a == 1, _CP_FORCE, -_CP_FORCE)
    cos_t = np.cos(theta)
    sin_t = np.sin(theta)
    temp = (force + _CP_PML * theta_dot**2 * sin_t) / _CP_TOTAL
    theta_acc = (_CP_GRAVITY * sin_t - cos_t * temp) / (
        _CP_LENGTH * (4.0 / 3.0 - _CP_MASSPOLE * cos_t**2 / _CP_TOTAL))
    x_acc = temp - _CP_PML * theta_acc * cos_t / _CP_TOTAL
    x = x + _CP_TAU * x_dot
    x_dot = x_dot + _CP_TAU * x_acc
    theta = theta + _CP_TAU * theta_dot
    theta_dot = theta_dot + _CP_TAU * theta_acc
    ns = np.stack([x, x_dot, theta, theta_dot], axis=1)
    terminated = (np.abs(x) > _CP_X_LIMIT) | (np.abs(theta) > _CP_THETA_LIMIT)
    return ns, np.ones(len(s)), terminated


# -- MountainCar ----------------------------------------------------------------

_MC_MIN_POS = -1.2
_MC_MAX_POS = 0.6
_MC_MAX_SPEED = 0.07
_MC_GOAL = 0.5
_MC_FORCE = 0.001
_MC_GRAVITY = 0.0025


def _mountaincar_reset(rng, n):
    s = np.zeros((n, 2))
    s[:, 0] = rng.uniform(-0.6, -0.4, size=n)
    return s


def _mountaincar_step(s, a):
    pos, vel = s[:, 0], s[:, 1]
    vel = vel + (a - 1) * _MC_FORCE + np.cos(3 * pos) * (-_MC_GRAVITY)
    vel = np.clip(vel, -_MC_MAX_SPEED, _MC_MAX_SPEED)
    pos = np.clip(pos + vel, _MC_MIN_POS, _MC_MAX_POS)
    vel = np.where((pos == _MC_MIN_POS) & (vel < 0), 0.0, vel)
    terminated = (pos >= _MC_GOAL) & (vel >= 0)
    return np.stack([pos, vel], axis=1), -np.ones(len(s)), terminated


# -- Acrobot (book dynamics, one RK4 step per control step) ---------------------

_AC_DT = 0.2
_AC_L1 = 1.0
_AC_M1 = 1.0
_AC_M2 = 1.0
_AC_LC1 = 0.5
_AC_LC2 = 0.5
_AC_I1 = 1.0
_AC_I2 = 1.0
_AC_G = 9.8
_AC_MAX_VEL_1 = 4 * math.pi
_AC_MAX_VEL_2 = 9 * math.pi
_AC_TORQUES = np.array([-1.0, 0.0, 1.0])


def acrobot_derivs(s, torque):
    """Time derivative of (theta1, theta2, dtheta1, dtheta2) under ``torque``."""
    theta1, theta2, dtheta1, dtheta2 = s.T
    m1, m2, l1, lc1, lc2, i1, i2, g = (_AC_M1, _AC_M2, _AC_L1, _AC_LC1, _AC_LC2,
                                        _AC_I1, _AC_I2, _AC_G)
    d1 = m1 * lc1**2 + m2 * (l1**2 + lc2**2 + 2 * l1 * lc2 * np.cos(theta2)) + i1 + i2
    d2 = m2 * (lc2**2 + l1 * lc2 * np.cos(theta2)) + i2
    phi2 = m2 * lc2 * g * np.cos(theta1 + theta2 - math.pi / 2.0)
    phi1 = (-m2 * l1 * lc2 * dtheta2**2 * np.sin(theta2)
            - 2 * m2 * l1 * lc2 * dtheta2 * dtheta1 * np.sin(theta2)
            + (m1 * lc1 + m2 * l1) * g * np.cos(theta1 - math.pi / 2)
            + phi2)
    ddtheta2 = ((torque + d2 / d1 * phi1 - m2 * l1 * lc2 * dtheta1**2 * np.sin(theta2) - phi2)
                / (m2 * lc2**2 + i2 - d2**2 / d1))
    ddtheta1 = -(d2 * ddtheta2 + phi1) / d1
    return np.stack([dtheta1, dtheta2, ddtheta1, ddtheta2], axis=1)


def acrobot_rk4(s, torque, dt=_AC_DT):
    k1 = acrobot_derivs(s, torque)
    k2 = acrobot_derivs(s + 0.5 * dt * k1, torque)
    k3 = acrobot_derivs(s + 0.5 * dt * k2, torque)
    k4 = acrobot_derivs(s + dt * k3, torque)
    return s + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _wrap(x):
    return np.mod(x + math.pi, 2 * math.pi) - math.pi


def _acrobot_reset(rng, n):
    return rng.uniform(-0.1, 0.1, size=(n, 4))


def _acrobot_step(s, a):
    ns = acrobot_rk4(s, _AC_TORQUES[a])
    ns[:, 0] = _wrap(ns[:, 0])
    ns[:, 1] = _wrap(ns[:, 1])
    ns[:, 2] = np.clip(ns[:, 2], -_AC_MAX_VEL_1, _AC_MAX_VEL_1)
    ns[:, 3] = np.clip(ns[:, 3], -_AC_MAX_VEL_2, _AC_MAX_VEL_2)
    terminated = -np.cos(ns[:, 0]) - np.cos(ns[:, 1] + ns[:, 0]) > 1.0
    reward = np.where(terminated, 0.0, -1.0)
    return ns, reward, terminated


def _acrobot_obs(s):
    return np.stack([np.cos(s[:, 0]), np.sin(s[:, 0]), np.cos(s[:, 1]), np.sin(s[:, 1]),
                     s[:, 2], s[:, 3]], axis=1)


_DYNAMICS = {
    "CartPole-v1": (_cartpole_reset, _cartpole_step, lambda s: s.copy()),
    "MountainCar-v0": (_mountaincar_reset, _mountaincar_step, lambda s: s.copy()),
    "Acrobot-v1": (_acrobot_reset, _acrobot_step, _acrobot_obs),
}


def _dynamics(spec):
    try:
        return _DYNAMICS[spec.name]
    except KeyError:
        raise KeyError(f"unknown environment {spec.name!r}") from None


def initial_states(spec, seeds):
    reset_fn = _dynamics(spec)[0]
    return np.concatenate([reset_fn(np.random.default_rng(int(sd)), 1) for sd in seeds])


# -- single-episode API -----------------------------------------------------------

class EpisodeFinished(RuntimeError):
    pass


@dataclass
class EpisodeState:
    spec: EnvironmentSpec
    physical: np.ndarray
    steps: int = 0
    done: bool = False


def reset(spec, seed):
    reset_fn, _, obs_fn = _dynamics(spec)
    s = reset_fn(np.random.default_rng(int(seed)), 1)
    return EpisodeState(spec, s), obs_fn(s)[0]


def step(state, action):
    if state.done:
        raise EpisodeFinished("step called on a finished episode")
    spec = state.spec
    if not 0 <= action < spec.n_actions:
        raise ValueError(f"action {action} out of range for {spec.name}")
    _, step_fn, obs_fn = _dynamics(spec)
    ns, reward, terminated = step_fn(state.physical, np.array([action]))
    state.physical = ns
    state.steps += 1
    state.done = bool(terminated[0]) or state.steps >= spec.max_steps
    return obs_fn(ns)[0], float(reward[0]), state.done


# -- batched rollouts --------------------------------------------------------------

def run_episodes(spec, act, seeds):
    """Roll out one episode per seed with the batched policy ``act(obs) -> actions``.

    Returns the array of episodic returns, in seed order.
    """
    _, step_fn, obs_fn = _dynamics(spec)
    s = initial_states(spec, seeds)
    n = len(s)
    returns = np.zeros(n)
    alive = np.arange(n)
    for _ in range(spec.max_steps):
        actions = np.asarray(act(obs_fn(s)), dtype=int)
        ns, reward, terminated = step_fn(s, actions)
        returns[alive] += reward
        keep = ~terminated
        s = ns[keep]
        alive = alive[keep]
        if len(alive) == 0:
            break
    return returns
