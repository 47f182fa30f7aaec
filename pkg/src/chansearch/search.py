"""Channel-size search: greedy and simulated-annealing trial loops.

Each trial scores every searchable dependency group (mean endpoint quality,
momentum-accumulated), turns the momentum delta into a multiplicative size
step clipped to [0.5, 2], resizes the weights by knowledge distillation,
and trains briefly.  Simulated annealing adds a stochastic kick: with
temperature Temp = alpha * (T - t) / T and acceptance value
zeta = exp(-1 / (alpha * delta_m * Temp)), a uniform draw below zeta adds
zeta to the delta before scaling.  zeta is pinned to 0 whenever
delta_m <= 0 or Temp <= 0 (the formula is undefined there), and no random
draw is consumed in that case.

Per-group best (metric, size) trackers compose the final plan; the best
sizes of different groups may come from different trials.
"""

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .distill import ResizePlan, transfer
from .graph import Endpoint, Side
from .metric import GroupMetricState, cumulative_metric, group_momentum, layer_metric
from .tensorio import WeightTensor


class SearchAbort(Exception):
    """The trial loop hit a fatal condition (trainer failure, bad metric)."""


ALGORITHMS = ("greedy", "sa", "random", "compound")


@dataclass
class SearchConfig:
    algorithm: str = "greedy"
    trials: int = 35
    epochs: int = 2
    gamma: float = 0.9
    alpha: float = 5.0
    clip: tuple = (0.5, 2.0)
    init_size: int = 16
    tau: float = 0.01
    seed: int = 0
    train_granularity: str = "per_trial"
    min_channel: int = 1
    width_mult: float = 1.0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must be in [0, 1)")
        lo, hi = self.clip
        if not lo < 1.0 < hi:
            raise ValueError(f"clip bounds must straddle 1, got {self.clip}")
        if self.init_size < 1 or self.min_channel < 1:
            raise ValueError("init_size and min_channel must be >= 1")
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must be in (0, 1)")
        if self.train_granularity not in ("per_trial", "per_group"):
            raise ValueError("train_granularity must be per_trial or per_group")

    def to_dict(self):
        d = asdict(self)
        d["clip"] = list(self.clip)
        return d


@dataclass
class SearchResult:
    algorithm: str
    config: dict
    init_sizes: dict
    final_sizes: dict
    best_plan: dict
    best_meta: dict
    trials: list = field(default_factory=list)

    def to_dict(self):
        return {
            "algorithm": self.algorithm,
            "config": self.config,
            "init_sizes": self.init_sizes,
            "final_sizes": self.final_sizes,
            "best_plan": self.best_plan,
            "best_meta": self.best_meta,
            "note": "best_plan composes per-group bests; sizes may mix trials",
            "trials": self.trials,
        }


# --- scaling primitives ---------------------------------------------------------


def scale_factor(delta_m, clip=(0.5, 2.0)):
    """Multiplicative size step: 1 + delta_m clipped into the bounds."""
    if not math.isfinite(delta_m):
        raise ValueError(f"non-finite metric delta {delta_m!r}")
    lo, hi = clip
    return min(hi, max(lo, 1.0 + delta_m))

def apply_scale(size, scale, min_channel=1):
    """Integer channel size after scaling: round half up, clamp at the floor."""
    if size < 1:
        raise ValueError(f"size must be >= 1, got {size}")
    return max(min_channel, int(math.floor(size * scale + 0.5)))


def temperature(t, trials, alpha):
    """Annealing temperature alpha * (T - t) / T; zero at the final trial."""
    if not 1 <= t <= trials:
        raise ValueError(f"trial {t} outside 1..{trials}")
    return alpha * (trials - t) / trials


def accept(delta_m, temp, alpha, rng):
    """Stochastic-kick decision: (accepted, zeta).

    Only defined (and only consuming a random draw) for delta_m > 0 and
    temp > 0; everywhere else zeta is pinned to 0 and the kick never fires.
    """
    if delta_m <= 0.0 or temp <= 0.0 or alpha <= 0.0:
        return False, 0.0
    zeta = math.exp(-1.0 / (alpha * delta_m * temp))
    draw = float(rng.random())
    return draw < zeta, zeta


# --- plan and weight bookkeeping --------------------------------------------------


def resolve_derived(deps, sizes):
    """Recompute every derived group's size as the sum of its sources."""
    for group in deps.derived:
        sizes[group.group_id] = sum(sizes[src] for src in group.sources)
    return sizes


def _group_size_from_weights(group, weights):
    observed = {}
    for ep in group.endpoints:
        if ep.layer_id not in weights:
            raise ValueError(f"weights missing layer {ep.layer_id!r}")
        observed[ep.key] = weights[ep.layer_id].shape[ep.side.axis]
    distinct = set(observed.values())
    if len(distinct) != 1:
        raise ValueError(
            f"group {group.group_id}: inconsistent channel sizes {observed}"
        )
    return distinct.pop()


def initial_sizes(graph, deps, init_size=16, weights=None):
    """Per-group starting sizes.

    With weights given, sizes are read off the tensors (and must be
    consistent within each group).  Otherwise searchable groups start at
    `init_size`, fixed groups keep their declared weight-shape sizes, and
    derived groups sum their sources.
    """
    sizes = {}
    if weights is not None:
        for group in deps.all_groups():
            if group.endpoints:
                sizes[group.group_id] = _group_size_from_weights(group, weights)
        for group in deps.derived:
            expected = sum(sizes[s] for s in group.sources)
            if sizes[group.group_id] != expected:
                raise ValueError(
                    f"derived group {group.group_id} has size {sizes[group.group_id]} "
                    f"but its sources sum to {expected}"
                )
        return sizes

    declared = {}
    for layer in graph.weighted_layers():
        for side in (Side.IN, Side.OUT):
            gid = deps.group_of(Endpoint(layer.id, side))
            declared.setdefault(gid, layer.weight_shape[side.axis])
    for group in deps.groups:
        sizes[group.group_id] = declared[group.group_id] if group.fixed else init_size
    resolve_derived(deps, sizes)
    return sizes


def plan_shapes(graph, deps, sizes):
    """Concrete 4D weight shapes implied by per-group sizes."""
    shapes = {}
    for layer in graph.weighted_layers():
        gin = deps.group_of(Endpoint(layer.id, Side.IN))
        gout = deps.group_of(Endpoint(layer.id, Side.OUT))
        kh, kw = layer.weight_shape[0], layer.weight_shape[1]
        shapes[layer.id] = (kh, kw, sizes[gin], sizes[gout])
    return shapes


def init_random_weights(graph, deps, sizes, seed):
    """He-scaled Gaussian weights at the given per-group sizes."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & 0x7FFFFFFF, 13]))
    weights = {}
    for layer_id, shape in plan_shapes(graph, deps, sizes).items():
        kh, kw, cin, _ = shape
        std = math.sqrt(2.0 / (kh * kw * cin))
        weights[layer_id] = WeightTensor(layer_id, std * rng.standard_normal(shape))
    return weights


def transfer_all(graph, deps, weights, old_sizes, new_sizes):
    """Distill every affected tensor from old per-group sizes to new ones."""
    out = {}
    for layer in graph.weighted_layers():
        gin = deps.group_of(Endpoint(layer.id, Side.IN))
        gout = deps.group_of(Endpoint(layer.id, Side.OUT))
        tensor = weights[layer.id]
        plan_in = plan_out = None
        if old_sizes[gin] != new_sizes[gin]:
            plan_in = ResizePlan(layer.id, Side.IN, old_sizes[gin], new_sizes[gin])
        if old_sizes[gout] != new_sizes[gout]:
            plan_out = ResizePlan(layer.id, Side.OUT, old_sizes[gout], new_sizes[gout])
        out[layer.id] = transfer(tensor, plan_in=plan_in, plan_out=plan_out)
    return out


def chained_transfer(graph, deps, weights, from_sizes, to_sizes, min_channel=1):
    """Transfer across an arbitrary size gap by chaining <= 2x expansion steps."""
    current = dict(from_sizes)
    while True:
        step = {}
        for group in deps.groups:
            target = to_sizes[group.group_id]
            cur = current[group.group_id]
            step[group.group_id] = min(2 * cur, target) if target > cur else target
        resolve_derived(deps, step)
        if step == current:
            break
        weights = transfer_all(graph, deps, weights, current, step)
        current = step
    return weights


# --- baselines --------------------------------------------------------------------


def random_baseline(deps, base_sizes, config, rng=None):
    """Each searchable group scaled by an independent Uniform[0.5, 2] draw."""
    rng = rng or np.random.default_rng(
        np.random.SeedSequence([int(config.seed) & 0x7FFFFFFF, 29])
    )
    sizes = dict(base_sizes)
    for group in deps.searchable():
        factor = float(rng.uniform(0.5, 2.0))
        sizes[group.group_id] = apply_scale(
            base_sizes[group.group_id], factor, config.min_channel
        )
    return resolve_derived(deps, sizes)


def compound_baseline(deps, base_sizes, width_mult, min_channel=1):
    """Every searchable group scaled by one shared width multiplier."""
    if width_mult <= 0:
        raise ValueError(f"width multiplier must be positive, got {width_mult}")
    sizes = dict(base_sizes)
    for group in deps.searchable():
        sizes[group.group_id] = apply_scale(
            base_sizes[group.group_id], width_mult, min_channel
        )
    return resolve_derived(deps, sizes)


# --- the trial loop ----------------------------------------------------------------


def _endpoint_record(summary):
    return {
        "qc": summary.qc,
        "n_eff": summary.n_eff,
        "kappa": summary.kappa,
        "rank_ratio": summary.rank_ratio,
        "channel_size": summary.channel_size,
    }


def run_search(graph, weights, deps, config, trainer, sa_rng=None):
    """Run the trial loop and return the per-group best composition.

    `weights` may be None, in which case searchable groups start at
    config.init_size with seeded random weights.  The SA random stream is
    consumed in searchable-group order only for groups with a positive
    momentum delta at positive temperature, so runs are reproducible from
    (config, seed, trainer).
    """
    searchable = deps.searchable()
    if not searchable:
        raise SearchAbort("no searchable dependency groups")
    sizes = initial_sizes(graph, deps, config.init_size, weights)
    if weights is None:
        weights = init_random_weights(graph, deps, sizes, config.seed)
    init_snapshot = dict(sizes)
    states = {g.group_id: GroupMetricState(g.group_id) for g in searchable}
    rng = sa_rng if sa_rng is not None else np.random.default_rng(
        np.random.SeedSequence([int(config.seed) & 0x7FFFFFFF, 23])
    )
    use_sa = config.algorithm == "sa"
    per_group = config.train_granularity == "per_group"

    records = []
    loss = acc = None
    for t in range(1, config.trials + 1):
        temp = temperature(t, config.trials, config.alpha) if use_sa else 0.0
        summaries = {}

        def score(ep):
            if ep.key not in summaries:
                summaries[ep.key] = layer_metric(
                    weights[ep.layer_id], ep.side, config.tau
                )
            qc = summaries[ep.key].qc
            if not math.isfinite(qc):
                raise SearchAbort(f"trial {t}: non-finite metric at {ep.key}")
            return qc

        group_rows = {}
        new_sizes = dict(sizes)
        for group in searchable:
            gid = group.group_id
            scores = [score(ep) for ep in group.endpoints]
            state = states[gid]
            measured = sizes[gid]
            group_momentum(state, scores, config.gamma, size=measured, trial=t)
            delta = state.delta
            accepted, zeta = (False, 0.0)
            if use_sa:
                accepted, zeta = accept(delta, temp, config.alpha, rng)
                if accepted:
                    delta = delta + zeta
            step = scale_factor(delta, config.clip)
            new_sizes[gid] = apply_scale(measured, step, config.min_channel)
            group_rows[gid] = {
                "m_prev": state.m_prev,
                "m_curr": state.m_curr,
                "delta": state.delta,
                "delta_effective": delta,
                "zeta": zeta,
                "accepted": accepted,
                "scale": step,
                "size_measured": measured,
                "size_after": new_sizes[gid],
                "best_m": state.best_m,
                "best_size": state.best_size,
                "best_trial": state.best_trial,
            }
            if per_group:
                step_sizes = dict(sizes)
                step_sizes[gid] = new_sizes[gid]
                resolve_derived(deps, step_sizes)
                weights = transfer_all(graph, deps, weights, sizes, step_sizes)
                sizes = step_sizes
                weights, loss, acc = _train(trainer, weights, sizes, config, t)
                new_sizes = dict(sizes)

        # score remaining (fixed / derived) endpoints for the cumulative trace
        for group in deps.all_groups():
            for ep in group.endpoints:
                score(ep)
        cumulative = cumulative_metric(
            deps, {key: s.qc for key, s in summaries.items()}
        )

        if not per_group:
            resolve_derived(deps, new_sizes)
            weights = transfer_all(graph, deps, weights, sizes, new_sizes)
            sizes = new_sizes
            weights, loss, acc = _train(trainer, weights, sizes, config, t)

        records.append(
            {
                "trial": t,
                "temp": temp if use_sa else None,
                "train_loss": loss,
                "train_acc": acc,
                "cumulative": cumulative,
                "groups": group_rows,
                "endpoints": {k: _endpoint_record(s) for k, s in summaries.items()},
                "sizes": dict(sizes),
            }
        )

    best_plan = dict(sizes)
    best_meta = {}
    for group in searchable:
        state = states[group.group_id]
        best_plan[group.group_id] = state.best_size
        best_meta[group.group_id] = {
            "m": state.best_m,
            "size": state.best_size,
            "trial": state.best_trial,
        }
    resolve_derived(deps, best_plan)

    return SearchResult(
        algorithm=config.algorithm,
        config=config.to_dict(),
        init_sizes=init_snapshot,
        final_sizes=dict(sizes),
        best_plan=best_plan,
        best_meta=best_meta,
        trials=records,
    ), weights


def _train(trainer, weights, sizes, config, trial):
    try:
        return trainer.train(
            weights, dict(sizes), config.epochs, trial, config.seed
        )
    except SearchAbort:
        raise
    except Exception as exc:
        raise SearchAbort(f"trial {trial}: trainer failed: {exc}") from exc
