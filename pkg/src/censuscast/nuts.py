"""No-U-Turn sampler with dual-averaging step size and diagonal mass adaptation.

Implements multiplicative trajectory doubling with the generalized
(momentum-sum) U-turn criterion and *multinomial* selection of the next
state among trajectory points, weighting each point by its Hamiltonian
error.  Warmup follows the staged schedule: an initial step-size-only
buffer, doubling mass-estimation windows, and a terminal step-size
freeze.  Trajectories whose energy error exceeds 1000 are marked
divergent and their subtree is rejected.

Chains are independent; chain i draws from a Generator seeded by
(seed, chain index), so results are bit-reproducible and permuting
chain indices permutes the chains.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

ENERGY_DIVERGENCE_THRESHOLD = 1000.0

# dual-averaging constants
_DA_GAMMA = 0.05
_DA_T0 = 10.0
_DA_KAPPA = 0.75


@dataclass(frozen=True)
class SamplerConfig:
    n_chains: int = 2
    n_warmup: int = 1000
    n_draws: int = 5000
    target_accept: float = 0.8
    max_tree_depth: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.n_chains < 1 or self.n_warmup < 1 or self.n_draws < 1:
            raise ValueError("chain, warmup, and draw counts must be >= 1")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.max_tree_depth < 1:
            raise ValueError("max_tree_depth must be >= 1")


@dataclass
class ChainResult:
    draws: np.ndarray  # (n_draws, dim)
    accept_prob: np.ndarray  # mean acceptance statistic per draw
    divergences: int
    step_size: float
    inv_mass_diag: np.ndarray
    divergence_warning: bool = False


class _DualAveraging:
    """Nesterov dual averaging of log step size toward a target acceptance."""

    def __init__(self, eps0: float, target: float):
        self.mu = math.log(10.0 * eps0)
        self.target = target
        self.log_eps = math.log(eps0)
        self.log_eps_bar = 0.0
        self.h_bar = 0.0
        self.count = 0

    def update(self, accept: float) -> float:
        self.count += 1
        m = self.count
        eta = 1.0 / (m + _DA_T0)
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept)
        self.log_eps = self.mu - math.sqrt(m) / _DA_GAMMA * self.h_bar
        w = m ** (-_DA_KAPPA)
        self.log_eps_bar = w * self.log_eps + (1.0 - w) * self.log_eps_bar
        return math.exp(self.log_eps)

    def adapted(self) -> float:
        return math.exp(self.log_eps_bar)


@dataclass
class _Tree:
    """Endpoints, momentum sum, and the multinomially selected point."""

    theta_minus: np.ndarray
    r_minus: np.ndarray
    grad_minus: np.ndarray
    theta_plus: np.ndarray
    r_plus: np.ndarray
    grad_plus: np.ndarray
    r_sum: np.ndarray
    theta: np.ndarray
    logp: float
    grad: np.ndarray
    log_weight: float
    stop: bool = False
    divergent: bool = False
    alpha_sum: float = 0.0
    n_leapfrog: int = 0


def _kinetic(r: np.ndarray, inv_mass: np.ndarray) -> float:
    return 0.5 * float(r @ (inv_mass * r))


def _leapfrog(fn, theta, r, grad, eps, inv_mass):
    r_half = r + 0.5 * eps * grad
    theta_new = theta + eps * inv_mass * r_half
    logp_new, grad_new = fn(theta_new)
    r_new = r_half + 0.5 * eps * grad_new
    return theta_new, r_new, logp_new, grad_new


def _leaf(fn, theta, r, grad, direction, eps, inv_mass, h0) -> _Tree:
    theta_n, r_n, logp_n, grad_n = _leapfrog(
        fn, theta, r, grad, direction * eps, inv_mass
    )
    if math.isfinite(logp_n):
        h_new = logp_n - _kinetic(r_n, inv_mass)
    else:
        h_new = -math.inf
    delta_h = h_new - h0 if math.isfinite(h_new) else -math.inf
    divergent = -delta_h > ENERGY_DIVERGENCE_THRESHOLD
    alpha = 1.0 if delta_h >= 0.0 else math.exp(delta_h) if math.isfinite(delta_h) else 0.0
    return _Tree(
        theta_minus=theta_n,
        r_minus=r_n,
        grad_minus=grad_n,
        theta_plus=theta_n,
        r_plus=r_n,
        grad_plus=grad_n,
        r_sum=r_n.copy(),
        theta=theta_n,
        logp=logp_n,
        grad=grad_n,
        log_weight=delta_h,
        stop=divergent,
        divergent=divergent,
        alpha_sum=alpha,
        n_leapfrog=1,
    )


def _span_ok(r_sum, r_begin, r_end, inv_mass) -> bool:
    """Generalized no-U-turn test over a trajectory span."""
    return (
        float(r_sum @ (inv_mass * r_begin)) > 0.0
        and float(r_sum @ (inv_mass * r_end)) > 0.0
    )


def _selection_prob(log_weight_new: float, log_weight_ref: float) -> float:
    delta = log_weight_new - log_weight_ref
    return 1.0 if delta >= 0.0 else math.exp(delta)


def _merge(tree: _Tree, other: _Tree, direction: int, inv_mass, rng, root: bool):
    """Absorb ``other`` (a subtree extended in ``direction``) into ``tree``."""
    tree.alpha_sum += other.alpha_sum
    tree.n_leapfrog += other.n_leapfrog
    tree.divergent |= other.divergent
    if other.stop:
        tree.stop = True
        return

    if root:
        # biased progressive selection toward the fresh subtree
        p = _selection_prob(other.log_weight, tree.log_weight)
    else:
        tree.log_weight = float(np.logaddexp(tree.log_weight, other.log_weight))
        p = _selection_prob(other.log_weight, tree.log_weight)
    if p > 0.0 and rng.random() < p:
        tree.theta = other.theta
        tree.logp = other.logp
        tree.grad = other.grad
    if root:
        tree.log_weight = float(np.logaddexp(tree.log_weight, other.log_weight))

    # arrange the two subtrees in time order (minus -> plus) for the checks
    old_r_minus, old_r_plus, old_r_sum = tree.r_minus, tree.r_plus, tree.r_sum
    if direction == -1:
        tree.theta_minus = other.theta_minus
        tree.r_minus = other.r_minus
        tree.grad_minus = other.grad_minus
        left_sum, right_sum = other.r_sum, old_r_sum
        left_begin, left_end = other.r_minus, other.r_plus
        right_begin, right_end = old_r_minus, old_r_plus
    else:
        tree.theta_plus = other.theta_plus
        tree.r_plus = other.r_plus
        tree.grad_plus = other.grad_plus
        left_sum, right_sum = old_r_sum, other.r_sum
        left_begin, left_end = old_r_minus, old_r_plus
        right_begin, right_end = other.r_minus, other.r_plus
    tree.r_sum = old_r_sum + other.r_sum

    # merged span plus the two across-subtree spans
    ok = _span_ok(tree.r_sum, left_begin, right_end, inv_mass)
    ok = ok and _span_ok(left_sum + right_begin, left_begin, right_begin, inv_mass)
    ok = ok and _span_ok(right_sum + left_end, left_end, right_end, inv_mass)
    tree.stop = not ok


def _build_tree(fn, tree: _Tree, direction, depth, eps, inv_mass, h0, rng) -> _Tree:
    """Build a subtree of 2**depth leapfrog steps off the chosen end."""
    if depth == 0:
        if direction == -1:
            theta, r, grad = tree.theta_minus, tree.r_minus, tree.grad_minus
        else:
            theta, r, grad = tree.theta_plus, tree.r_plus, tree.grad_plus
        return _leaf(fn, theta, r, grad, direction, eps, inv_mass, h0)

    first = _build_tree(fn, tree, direction, depth - 1, eps, inv_mass, h0, rng)
    if first.stop:
        return first
    second = _build_tree(fn, first, direction, depth - 1, eps, inv_mass, h0, rng)
    _merge(first, second, direction, inv_mass, rng, root=False)
    return first


def _sample_momentum(rng, inv_mass):
    return rng.normal(size=inv_mass.size) / np.sqrt(inv_mass)


def _nuts_step(fn, theta, logp, grad, eps, inv_mass, max_depth, rng):
    r0 = _sample_momentum(rng, inv_mass)
    h0 = logp - _kinetic(r0, inv_mass)
    tree = _Tree(
        theta_minus=theta,
        r_minus=r0,
        grad_minus=grad,
        theta_plus=theta,
        r_plus=r0,
        grad_plus=grad,
        r_sum=r0.copy(),
        theta=theta,
        logp=logp,
        grad=grad,
        log_weight=0.0,
    )
    depth = 0
    while depth < max_depth and not tree.stop:
        direction = 1 if rng.random() < 0.5 else -1
        subtree = _build_tree(fn, tree, direction, depth, eps, inv_mass, h0, rng)
        _merge(tree, subtree, direction, inv_mass, rng, root=True)
        depth += 1
    accept = tree.alpha_sum / max(tree.n_leapfrog, 1)
    return tree.theta, tree.logp, tree.grad, accept, tree.divergent


def find_reasonable_epsilon(fn, theta, logp, grad, inv_mass, rng) -> float:
    """Double/halve eps until one leapfrog step crosses 50% acceptance."""
    eps = 1.0
    r = _sample_momentum(rng, inv_mass)
    h0 = logp - _kinetic(r, inv_mass)
    _, r_new, logp_new, _ = _leapfrog(fn, theta, r, grad, eps, inv_mass)
    h_new = logp_new - _kinetic(r_new, inv_mass) if math.isfinite(logp_new) else -math.inf
    delta = h_new - h0 if math.isfinite(h_new) else -math.inf
    direction = 1.0 if delta > math.log(0.5) else -1.0
    for _ in range(100):
        if direction * delta <= direction * math.log(0.5):
            break
        eps *= 2.0**direction
        _, r_new, logp_new, _ = _leapfrog(fn, theta, r, grad, eps, inv_mass)
        h_new = (
            logp_new - _kinetic(r_new, inv_mass)
            if math.isfinite(logp_new)
            else -math.inf
        )
        delta = h_new - h0 if math.isfinite(h_new) else -math.inf
    return eps


def _mass_window_ends(n_warmup, init_buffer=75, term_buffer=50, base_window=25):
    """Iteration indices at which the mass-matrix windows close."""
    if n_warmup < init_buffer + term_buffer + 2 * base_window:
        return []
    ends = []
    pos = init_buffer
    w = base_window
    last = n_warmup - term_buffer
    while True:
        end = pos + w
        if end + 2 * w > last:
            ends.append(last)
            break
        ends.append(end)
        pos = end
        w *= 2
    return ends


def _run_chain(fn, dim, cfg: SamplerConfig, initial, chain_index) -> ChainResult:
    rng = np.random.default_rng((cfg.seed, chain_index))
    theta = np.array(initial, dtype=float)
    logp, grad = fn(theta)
    if not math.isfinite(logp):
        raise ValueError("log density is not finite at the initial point")
    grad = np.array(grad, dtype=float)

    inv_mass = np.ones(dim)
    eps = find_reasonable_epsilon(fn, theta, logp, grad, inv_mass, rng)
    da = _DualAveraging(eps, cfg.target_accept)
    window_ends = _mass_window_ends(cfg.n_warmup)
    window_draws: list[np.ndarray] = []

    for m in range(1, cfg.n_warmup + 1):
        theta, logp, grad, accept, _ = _nuts_step(
            fn, theta, logp, grad, eps, inv_mass, cfg.max_tree_depth, rng
        )
        eps = da.update(accept)
        if window_ends:
            window_draws.append(theta)
            if m == window_ends[0]:
                window_ends.pop(0)
                draws = np.asarray(window_draws)
                n = draws.shape[0]
                var = draws.var(axis=0, ddof=1) if n > 1 else np.ones(dim)
                inv_mass = var * (n / (n + 5.0)) + 1e-3 * (5.0 / (n + 5.0))
                window_draws = []
                eps = find_reasonable_epsilon(fn, theta, logp, grad, inv_mass, rng)
                da = _DualAveraging(eps, cfg.target_accept)
    eps = da.adapted()

    draws = np.empty((cfg.n_draws, dim))
    accept_prob = np.empty(cfg.n_draws)
    divergences = 0
    for i in range(cfg.n_draws):
        theta, logp, grad, accept, divergent = _nuts_step(
            fn, theta, logp, grad, eps, inv_mass, cfg.max_tree_depth, rng
        )
        draws[i] = theta
        accept_prob[i] = accept
        divergences += divergent

    warn = divergences > 0.1 * cfg.n_draws
    if warn:
        warnings.warn(
            f"chain {chain_index}: {divergences}/{cfg.n_draws} divergent "
            "transitions; results are unreliable",
            RuntimeWarning,
        )
    return ChainResult(
        draws=draws,
        accept_prob=accept_prob,
        divergences=divergences,
        step_size=eps,
        inv_mass_diag=inv_mass,
        divergence_warning=warn,
    )


def nuts_sample(fn, dim: int, cfg: SamplerConfig, initial=None) -> list[ChainResult]:
    """Run cfg.n_chains independent NUTS chains on a log density.

    fn(theta) must return (log density, gradient).  All chains start at
    ``initial`` (zeros by default) and draw momentum from their own
    seeded stream, so a given (cfg, initial) is fully reproducible.
    """
    if initial is None:
        initial = np.zeros(dim)
    return [
        _run_chain(fn, dim, cfg, initial, k) for k in range(cfg.n_chains)
    ]
