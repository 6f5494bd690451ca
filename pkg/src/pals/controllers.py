"""Sparsity controllers: PALS plus the GMP, GraNet and RigL baselines.

Every controller exposes ``update(t, layers, val_loss_fn)`` which performs one
connectivity update at training iteration ``t`` and returns a trace record
(a plain dict, ready for JSONL).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .sparsity import (
    grow_count, init_mask, prune_and_grow, prune_fraction, prune_to_count, round_half_up, snapshot,
)

SHRINK, EXPAND, STABLE = "shrink", "expand", "stable"


class ConfigError(ValueError):
    pass


def cosine_zeta(t, t_max, zeta0):
    """Cosine-decayed pruning rate: zeta0 at t=0, 0 at t=t_max."""
    if t_max <= 0:
        raise ConfigError("t_max must be positive for the cosine schedule")
    t = min(max(t, 0), t_max)
    return 0.5 * zeta0 * (1.0 + math.cos(math.pi * t / t_max))


def gmp_target(t, t0, tf, s_i, s_f):
    """Cubic gradual-pruning schedule, held at the endpoints outside [t0, tf]."""
    if tf <= t0:
        raise ConfigError(f"gradual pruning needs tf > t0, got t0={t0} tf={tf}")
    frac = min(max((t - t0) / (tf - t0), 0.0), 1.0)
    return s_f + (s_i - s_f) * (1.0 - frac) ** 3


@dataclass(frozen=True)
class PalsConfig:
    gamma: float = 1.2
    lam: float = 1.1
    zeta0: float = 0.5
    delta_t: int = 20
    s_min: float = 0.2
    s_max: float = 0.9
    d_init: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.s_min < self.s_max <= 1.0:
            raise ConfigError(f"need 0 <= s_min < s_max <= 1, got {self.s_min}, {self.s_max}")
        if self.gamma <= 1.0 or self.lam <= 1.0:
            raise ConfigError("gamma and lambda must both exceed 1")
        if not 0.0 < self.zeta0 <= 1.0:
            raise ConfigError(f"zeta0 must be in (0, 1], got {self.zeta0}")
        if self.delta_t < 1:
            raise ConfigError("delta_t must be >= 1")
        if not 0.0 < self.d_init <= 1.0:
            raise ConfigError(f"d_init must be in (0, 1], got {self.d_init}")


@dataclass
class ControllerState:
    current_s: float = 0.0
    l_best: float = math.inf
    s_best: float = 0.0
    t: int = 0
    t_max: int = 0


@dataclass(frozen=True)
class Decision:
    kind: str
    zeta_prune: float
    zeta_grow: float


def pals_decide(l_valid, state, cfg, zeta):
    """Chooses Shrink / Expand / Stable, then updates the best-loss bookkeeping.

    The best loss and its sparsity are updated after the branch is chosen, so
    the first call (best loss still infinite) always shrinks.
    """
    s = state.current_s
    bound = cfg.lam * state.l_best
    if s < cfg.s_min or (l_valid <= bound and s < cfg.s_max):
        decision = Decision(SHRINK, cfg.gamma * zeta, zeta)
    elif l_valid > bound and s > state.s_best:
        decision = Decision(EXPAND, zeta, cfg.gamma * zeta)
    else:
        decision = Decision(STABLE, zeta, zeta)
    if l_valid < state.l_best:
        state.l_best = l_valid
        state.s_best = s
    return decision


def pals_apply(decision, layers, state=None, adam=None):
    """Prunes then grows every layer at the decision's rates; returns the new snapshot."""
    for layer in layers:
        prune_and_grow(layer, decision.zeta_prune, decision.zeta_grow, adam)
    snap = snapshot(layers)
    if state is not None:
        state.current_s = snap.global_sparsity
    return snap


def gmp_step(layers, s_t):
    """Magnitude-prunes each layer to a uniform density of ``1 - s_t``; no regrowth."""
    for layer in layers:
        target = max(1, round_half_up((1.0 - s_t) * layer.size))
        if target < layer.mask.active_count:
            prune_to_count(layer, target)
    return snapshot(layers)


def neuroregenerate(layers, zeta, adam=None):
    """Count-neutral exchange: drop ``zeta`` of active weights, regrow as many."""
    for layer in layers:
        n = prune_fraction(layer, zeta)
        grow_count(layer, n, adam)


def granet_step(layers, s_t, zeta, adam=None):
    gmp_step(layers, s_t)
    neuroregenerate(layers, zeta, adam)
    return snapshot(layers)


def rigl_step(layers, zeta, adam=None):
    neuroregenerate(layers, zeta, adam)
    return snapshot(layers)


def _record(t, kind, zp, zg, s_before, s_after, l_valid=None, l_best=None):
    return {
        "iteration": t,
        "decision": kind,
        "zeta_prune": zp,
        "zeta_grow": zg,
        "s_before": s_before,
        "s_after": s_after,
        "l_valid": l_valid,
        "l_best": None if l_best is None or math.isinf(l_best) else l_best,
    }


class Controller:
    """Base: the dense controller, which only records sparsity."""

    kind = "dense"
    needs_val_loss = False

    def __init__(self, delta_t=20, t_max=1, adam=None):
        if delta_t < 1:
            raise ConfigError("delta_t must be >= 1")
        self.delta_t = delta_t
        self.t_max = max(1, t_max)
        self.adam = adam

    def init_masks(self, layers, rng):
        """Called once before training; dense-start controllers keep full masks."""

    def due(self, t):
        return t % self.delta_t == 0

    def update(self, t, layers, val_loss_fn=None):
        s = snapshot(layers).global_sparsity
        return _record(t, "none", 0.0, 0.0, s, s)


class PalsController(Controller):
    kind = "pals"
    needs_val_loss = True

    def __init__(self, cfg=PalsConfig(), t_max=1, adam=None):
        super().__init__(cfg.delta_t, t_max, adam)
        self.cfg = cfg
        self.state = ControllerState(t_max=self.t_max)

    def init_masks(self, layers, rng):
        if self.cfg.d_init < 1.0:
            for layer in layers:
                layer.mask = init_mask(layer.weights.shape, self.cfg.d_init, rng)
                layer.weights[~layer.mask.bits] = 0.0
        self.state.current_s = snapshot(layers).global_sparsity

    def update(self, t, layers, val_loss_fn=None):
        self.state.t = t
        zeta = cosine_zeta(t, self.t_max, self.cfg.zeta0)
        l_valid = float(val_loss_fn())
        s_before = self.state.current_s
        decision = pals_decide(l_valid, self.state, self.cfg, zeta)
        pals_apply(decision, layers, self.state, self.adam)
        return _record(t, decision.kind, decision.zeta_prune, decision.zeta_grow,
                       s_before, self.state.current_s, l_valid, self.state.l_best)


class GmpController(Controller):
    kind = "gmp"

    def __init__(self, target_sparsity=0.5, delta_t=20, t_max=1, initial_sparsity=0.0,
                 end_fraction=0.5, adam=None):
        super().__init__(delta_t, t_max, adam)
        self.s_i = initial_sparsity
        self.s_f = target_sparsity
        self.tf = max(1, int(end_fraction * self.t_max))

    def target(self, t):
        return gmp_target(t, 0, self.tf, self.s_i, self.s_f)

    def update(self, t, layers, val_loss_fn=None):
        s_before = snapshot(layers).global_sparsity
        s_after = gmp_step(layers, self.target(t)).global_sparsity
        return _record(t, "prune", s_after - s_before, 0.0, s_before, s_after)


class GraNetController(GmpController):
    kind = "granet"

    def __init__(self, target_sparsity=0.5, delta_t=20, t_max=1, zeta0=0.5, **kw):
        super().__init__(target_sparsity, delta_t, t_max, **kw)
        self.zeta0 = zeta0

    def update(self, t, layers, val_loss_fn=None):
        s_before = snapshot(layers).global_sparsity
        zeta = cosine_zeta(t, self.t_max, self.zeta0)
        s_after = granet_step(layers, self.target(t), zeta, self.adam).global_sparsity
        return _record(t, "prune+regrow", zeta, zeta, s_before, s_after)


class RigLController(Controller):
    kind = "rigl"

    def __init__(self, sparsity=0.5, delta_t=20, t_max=1, zeta0=0.5, adam=None):
        super().__init__(delta_t, t_max, adam)
        self.sparsity = sparsity
        self.zeta0 = zeta0

    def init_masks(self, layers, rng):
        for layer in layers:
            layer.mask = init_mask(layer.weights.shape, 1.0 - self.sparsity, rng)
            layer.weights[~layer.mask.bits] = 0.0

    def update(self, t, layers, val_loss_fn=None):
        s_before = snapshot(layers).global_sparsity
        zeta = cosine_zeta(t, self.t_max, self.zeta0)
        s_after = rigl_step(layers, zeta, self.adam).global_sparsity
        return _record(t, "exchange", zeta, zeta, s_before, s_after)


def make_controller(kind, t_max, adam=None, pals=None, delta_t=20, target_sparsity=0.5,
                    zeta0=0.5):
    kind = kind.lower()
    if kind == "dense":
        return Controller(delta_t, t_max, adam)
    if kind == "pals":
        return PalsController(pals or PalsConfig(delta_t=delta_t, zeta0=zeta0), t_max, adam)
    if kind == "gmp":
        return GmpController(target_sparsity, delta_t, t_max, adam=adam)
    if kind == "granet":
        return GraNetController(target_sparsity, delta_t, t_max, zeta0=zeta0, adam=adam)
    if kind == "rigl":
        return RigLController(target_sparsity, delta_t, t_max, zeta0, adam)
    raise ConfigError(f"unknown controller {kind!r}")
