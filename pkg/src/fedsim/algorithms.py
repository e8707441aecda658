"""Federated optimization servers with faithful unavailability semantics.

Five algorithms share one device-update primitive (K local SGD steps whose
sampled gradients are summed):

- ``mifa``: keeps every device's latest update in an array and averages the
  whole array each round, reusing stale entries for inactive devices.
- ``mifa_delta``: the memory-lean variant; devices transmit the difference
  against their own stored previous update and the server keeps only a
  running average. Differences travel as two-term error-free expansions, so
  the running average equals the array average bit for bit.
- ``biased_fedavg``: averages fresh updates from the active devices only.
- ``is_fedavg``: reweights fresh updates by inverse participation
  probability, normalizing by the active count (literal form) or by the
  device count (unbiased form).
- ``sampling_fedavg``: samples a device subset and blocks the global update
  until every selected device has responded.

All server aggregation goes through correctly rounded summation
(``exact.exact_mean``) so algebraically equal updates are bitwise equal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .availability import ActiveSet, StalenessTracker
from .exact import ExactVectorSum, exact_mean, two_diff
from .problems import ProblemInstance, sphere_noise
from .records import RoundMetrics, RunResult
from .rng import (
    SUBSET_SAMPLING,
    device_noise_streams,
    generator_state,
    restore_generator,
    substream,
)
from .schedules import AveragedIterate, LrSchedule, StronglyConvexDecay


class DivergenceError(RuntimeError):
    """A local iterate or the server model became non-finite."""


@dataclass(frozen=True)
class LocalUpdate:
    device: int
    value: np.ndarray  # sum of the K sampled gradients
    produced_at: int


def local_update(
    instance: ProblemInstance,
    i: int,
    w: np.ndarray,
    eta: float,
    n_steps: int,
    rng: np.random.Generator,
    produced_at: int = 0,
) -> LocalUpdate:
    """Run K local SGD steps from ``w`` and return the gradient sum.

    The returned value times eta equals the local displacement w - w_K
    exactly in real arithmetic; it is accumulated as a running sum of the
    sampled gradients so small steps lose no precision to cancellation.
    """
    if eta <= 0:
        raise ValueError("eta must be > 0")
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if instance.kind == "quadratic":
        noise = sphere_noise(rng, n_steps, instance.dim, instance.constants.noise_std)
        total, w_final = _kernels.quad_local_sgd(
            instance.stacked["hessians"][i], instance.stacked["centers"][i], w, eta, n_steps, noise
        )
    elif instance.kind == "trig":
        noise = sphere_noise(rng, n_steps, instance.dim, instance.constants.noise_std)
        total, w_final = _kernels.trig_local_sgd(
            instance.stacked["centers"][i],
            instance.stacked["curvature"],
            instance.stacked["amplitude"],
            w,
            eta,
            n_steps,
            noise,
        )
    else:
        dev = instance.devices[i]
        picks = rng.integers(len(dev.labels), size=n_steps)
        w_final = w.copy()
        total = np.zeros_like(w)
        for k in range(n_steps):
            g = dev.sample_grad(w_final, int(picks[k]))
            total += g
            w_final -= eta * g
    if not (np.all(np.isfinite(total)) and np.all(np.isfinite(w_final))):
        raise DivergenceError(f"device {i} produced a non-finite local iterate")
    return LocalUpdate(device=i, value=total, produced_at=produced_at)


def _require_round(state_t: int, active: ActiveSet, n_devices: int):
    if active.round != state_t + 1:
        raise ValueError(f"expected round {state_t + 1}, got {active.round}")
    if active.round == 1 and active.members != frozenset(range(n_devices)):
        raise ValueError("round 1 requires all devices to be active")


def _apply(w: np.ndarray, eta: float, direction: np.ndarray) -> np.ndarray:
    # single shared expression so equal (eta, direction) pairs give equal models
    return w - eta * direction


@dataclass
class MifaServerState:
    w: np.ndarray
    update_array: np.ndarray  # (n_devices, dim), zero-initialized
    t: int = 0

    @classmethod
    def init(cls, n_devices: int, w0: np.ndarray) -> "MifaServerState":
        return cls(w=w0.copy(), update_array=np.zeros((n_devices, len(w0))), t=0)

    @property
    def t_prime(self) -> int:
        return self.t  # every round modifies the model

    def state_dict(self) -> dict:
        return {"w": self.w.tolist(), "update_array": self.update_array.tolist(), "t": self.t}

    @classmethod
    def from_state_dict(cls, state: dict) -> "MifaServerState":
        return cls(
            w=np.asarray(state["w"], dtype=np.float64),
            update_array=np.asarray(state["update_array"], dtype=np.float64),
            t=int(state["t"]),
        )


def mifa_round(
    state: MifaServerState,
    active: ActiveSet,
    eta_t: float,
    instance: ProblemInstance,
    n_steps: int,
    rngs: list,
) -> MifaServerState:
    """Overwrite active devices' stored updates, then step by the full-array
    average. Inactive entries are reused untouched; an empty active set still
    applies the update since the array is complete after round 1."""
    n = instance.n_devices
    _require_round(state.t, active, n)
    for i in sorted(active.members):
        lu = local_update(instance, i, state.w, eta_t, n_steps, rngs[i], produced_at=active.round)
        state.update_array[i] = lu.value
    state.w = _apply(state.w, eta_t, exact_mean(state.update_array, n))
    state.t = active.round
    return state


@dataclass
class DeltaServerState:
    """Server keeps one running-average vector; each device keeps its own
    previous update. ``exact_sum`` carries the exact real sum of the stored
    updates, so the running average never drifts from the array average."""

    w: np.ndarray
    device_memory: np.ndarray  # device-side stored previous updates
    exact_sum: ExactVectorSum
    t: int = 0

    @classmethod
    def init(cls, n_devices: int, w0: np.ndarray) -> "DeltaServerState":
        return cls(
            w=w0.copy(),
            device_memory=np.zeros((n_devices, len(w0))),
            exact_sum=ExactVectorSum(len(w0)),
            t=0,
        )

    @property
    def t_prime(self) -> int:
        return self.t

    @property
    def running_average(self) -> np.ndarray:
        return self.exact_sum.rounded() / len(self.device_memory)

    def state_dict(self) -> dict:
        return {
            "w": self.w.tolist(),
            "device_memory": self.device_memory.tolist(),
            "exact_sum": self.exact_sum.state_dict(),
            "t": self.t,
        }

    @classmethod
    def from_state_dict(cls, state: dict) -> "DeltaServerState":
        return cls(
            w=np.asarray(state["w"], dtype=np.float64),
            device_memory=np.asarray(state["device_memory"], dtype=np.float64),
            exact_sum=ExactVectorSum.from_state_dict(state["exact_sum"]),
            t=int(state["t"]),
        )


def mifa_delta_round(
    state: DeltaServerState,
    active: ActiveSet,
    eta_t: float,
    instance: ProblemInstance,
    n_steps: int,
    rngs: list,
) -> DeltaServerState:
    n = instance.n_devices
    _require_round(state.t, active, n)
    for i in sorted(active.members):
        lu = local_update(instance, i, state.w, eta_t, n_steps, rngs[i], produced_at=active.round)
        hi, lo = two_diff(lu.value, state.device_memory[i])
        state.exact_sum.add(hi)
        state.exact_sum.add(lo)
        state.device_memory[i] = lu.value
    state.w = _apply(state.w, eta_t, state.running_average)
    state.t = active.round
    return state


@dataclass
class FreshServerState:
    """Memoryless server used by the biased and importance-weighted variants."""

    w: np.ndarray
    t: int = 0
    t_prime: int = 0

    @classmethod
    def init(cls, n_devices: int, w0: np.ndarray) -> "FreshServerState":
        return cls(w=w0.copy(), t=0, t_prime=0)

    def state_dict(self) -> dict:
        return {"w": self.w.tolist(), "t": self.t, "t_prime": self.t_prime}

    @classmethod
    def from_state_dict(cls, state: dict) -> "FreshServerState":
        return cls(
            w=np.asarray(state["w"], dtype=np.float64),
            t=int(state["t"]),
            t_prime=int(state["t_prime"]),
        )


def biased_fedavg_round(
    state: FreshServerState,
    active: ActiveSet,
    eta_t: float,
    instance: ProblemInstance,
    n_steps: int,
    rngs: list,
) -> FreshServerState:
    """Average fresh updates from the active devices only. An empty active
    set leaves the model unchanged (no-op round)."""
    _require_round(state.t, active, instance.n_devices)
    members = sorted(active.members)
    if members:
        values = np.stack(
            [
                local_update(instance, i, state.w, eta_t, n_steps, rngs[i], produced_at=active.round).value
                for i in members
            ]
        )
        state.w = _apply(state.w, eta_t, exact_mean(values, len(members)))
        state.t_prime += 1
    state.t = active.round
    return state


def is_fedavg_round(
    state: FreshServerState,
    active: ActiveSet,
    eta_t: float,
    probs: np.ndarray,
    normalization: str,
    instance: ProblemInstance,
    n_steps: int,
    rngs: list,
) -> FreshServerState:
    """Importance-weighted averaging of fresh updates.

    ``active_count`` divides by |A(t)| (the literal algorithm box);
    ``total_count`` divides by the device count, which makes the expected
    update unbiased under independent participation.
    """
    if normalization not in ("active_count", "total_count"):
        raise ValueError("normalization must be 'active_count' or 'total_count'")
    probs = np.asarray(probs, dtype=np.float64)
    if np.any(probs <= 0.0):
        raise ValueError("participation probabilities must be positive")
    _require_round(state.t, active, instance.n_devices)
    members = sorted(active.members)
    if members:
        values = np.stack(
            [
                local_update(instance, i, state.w, eta_t, n_steps, rngs[i], produced_at=active.round).value
                / probs[i]
                for i in members
            ]
        )
        denom = len(members) if normalization == "active_count" else instance.n_devices
        state.w = _apply(state.w, eta_t, exact_mean(values, denom))
        state.t_prime += 1
    state.t = active.round
    return state


@dataclass
class SamplingServerState:
    """Blocking subset-sampling server.

    The model is frozen while any selected device has not yet responded; a
    pending device computes its update at its first active wall-round within
    the window. The global step uses the schedule indexed by the
    global-update counter, while devices step with the wall-round rate.
    """

    w: np.ndarray
    subset_size: int
    pending: set = field(default_factory=set)
    collected: list = field(default_factory=list)  # LocalUpdate, completion order
    t: int = 0
    t_prime: int = 0
    window_start: int = 0
    waits: list = field(default_factory=list)  # wall-rounds consumed per update

    @classmethod
    def init(cls, n_devices: int, w0: np.ndarray, subset_size: int) -> "SamplingServerState":
        if not 1 <= subset_size <= n_devices:
            raise ValueError("subset size must lie in [1, n_devices]")
        return cls(w=w0.copy(), subset_size=subset_size)

    def state_dict(self) -> dict:
        return {
            "w": self.w.tolist(),
            "subset_size": self.subset_size,
            "pending": sorted(self.pending),
            "collected": [
                {"device": lu.device, "value": lu.value.tolist(), "produced_at": lu.produced_at}
                for lu in self.collected
            ],
            "t": self.t,
            "t_prime": self.t_prime,
            "window_start": self.window_start,
            "waits": list(self.waits),
        }

    @classmethod
    def from_state_dict(cls, state: dict) -> "SamplingServerState":
        out = cls(
            w=np.asarray(state["w"], dtype=np.float64),
            subset_size=int(state["subset_size"]),
            pending=set(int(i) for i in state["pending"]),
            collected=[
                LocalUpdate(
                    device=int(d["device"]),
                    value=np.asarray(d["value"], dtype=np.float64),
                    produced_at=int(d["produced_at"]),
                )
                for d in state["collected"]
            ],
            t=int(state["t"]),
            t_prime=int(state["t_prime"]),
            window_start=int(state["window_start"]),
            waits=[int(x) for x in state["waits"]],
        )
        return out


def sampling_fedavg_round(
    state: SamplingServerState,
    active: ActiveSet,
    schedule: LrSchedule,
    instance: ProblemInstance,
    n_steps: int,
    rngs: list,
    subset_rng: np.random.Generator,
) -> tuple[SamplingServerState, int]:
    """Advance one wall-round; returns (state, devices that computed)."""
    n = instance.n_devices
    _require_round(state.t, active, n)
    t = active.round
    if not state.pending and not state.collected:
        chosen = subset_rng.choice(n, size=state.subset_size, replace=False)
        state.pending = set(int(i) for i in chosen)
        state.window_start = t
    computed = 0
    for i in sorted(state.pending & set(active.members)):
        lu = local_update(instance, i, state.w, schedule.eta(t), n_steps, rngs[i], produced_at=t)
        state.collected.append(lu)
        state.pending.discard(i)
        computed += 1
    if not state.pending and state.collected:
        values = np.stack([lu.value for lu in state.collected])
        eta_global = schedule.eta(state.t_prime + 1)
        state.w = _apply(state.w, eta_global, exact_mean(values, state.subset_size))
        state.t_prime += 1
        state.waits.append(t - state.window_start + 1)
        state.collected = []
    state.t = t
    return state, computed


# --------------------------------------------------------------------------
# Algorithm specs and the round-loop runner
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MifaSpec:
    name: str = "mifa"


@dataclass(frozen=True)
class MifaDeltaSpec:
    name: str = "mifa_delta"


@dataclass(frozen=True)
class BiasedFedAvgSpec:
    name: str = "biased_fedavg"


@dataclass(frozen=True)
class ImportanceFedAvgSpec:
    probs: tuple
    normalization: str = "active_count"
    name: str = "is_fedavg"


@dataclass(frozen=True)
class SamplingFedAvgSpec:
    subset_size: int
    name: str = "sampling_fedavg"


class Runner:
    """Deterministic wall-round loop for one (algorithm, seed) pair.

    Participation, gradient noise, and subset sampling each draw from
    dedicated substreams of the seed, so every algorithm sees the identical
    active-set sequence and per-device noise for a fixed seed.
    """

    def __init__(
        self,
        algo_spec,
        instance: ProblemInstance,
        model,
        schedule: LrSchedule,
        horizon: int,
        n_steps: int,
        seed: int,
        w0: np.ndarray | None = None,
        audit: bool = False,
    ):
        if horizon < 2:
            raise ValueError("horizon must be >= 2")
        if model.n_devices != instance.n_devices:
            raise ValueError("participation model and instance disagree on device count")
        self.algo_spec = algo_spec
        self.instance = instance
        self.model = model
        self.schedule = schedule
        self.horizon = horizon
        self.n_steps = n_steps
        self.seed = seed
        if audit and algo_spec.name == "sampling_fedavg":
            raise ValueError("audit replay is defined for the array-based algorithms only")
        self.audit = audit
        self.audit_log: dict = {}

        dim = instance.dim
        self.w0 = np.zeros(dim) if w0 is None else np.asarray(w0, dtype=np.float64).copy()
        self.sampler = model.sampler(seed)
        self.noise_rngs = device_noise_streams(seed, instance.n_devices)
        self.subset_rng = substream(seed, SUBSET_SAMPLING, 0)
        self.tracker = StalenessTracker(instance.n_devices)
        self.oracle_calls = 0
        self.min_grad_sq = np.inf
        self.rounds_done = 0
        self.rows: list = []

        self.averaged = None
        if isinstance(schedule, StronglyConvexDecay):
            self.averaged = AveragedIterate(schedule.shift, dim)

        name = algo_spec.name
        if name == "mifa":
            self.state = MifaServerState.init(instance.n_devices, self.w0)
        elif name == "mifa_delta":
            self.state = DeltaServerState.init(instance.n_devices, self.w0)
        elif name in ("biased_fedavg", "is_fedavg"):
            self.state = FreshServerState.init(instance.n_devices, self.w0)
        elif name == "sampling_fedavg":
            self.state = SamplingServerState.init(instance.n_devices, self.w0, algo_spec.subset_size)
        else:
            raise ValueError(f"unknown algorithm {name!r}")

    def _round_once(self, t: int) -> None:
        active = self.sampler.active_set(t)
        self.tracker.update(active)
        if self.averaged is not None:
            self.averaged.observe(t, self.state.w)
        w_before = self.state.w

        f_gap = None
        if self.instance.strongly_convex and self.instance.f_star is not None:
            f_gap = self.instance.suboptimality(w_before)
        g = self.instance.global_grad(w_before)
        grad_sq = float(g @ g)
        if not self.instance.strongly_convex:
            f_gap = grad_sq
        self.min_grad_sq = min(self.min_grad_sq, grad_sq)
        avg_gap = None
        if self.averaged is not None and self.instance.f_star is not None:
            avg_gap = self.instance.suboptimality(self.averaged.current())

        if self.audit:
            self._snapshot_rng_states(active, t)

        computed = self._dispatch(t, active)
        self.oracle_calls += self.n_steps * computed
        if not np.all(np.isfinite(self.state.w)):
            raise DivergenceError(f"server model non-finite after round {t}")

        self.rows.append(
            RoundMetrics(
                t=t,
                t_prime=self.state.t_prime,
                f_gap=f_gap,
                avg_gap=avg_gap,
                grad_norm_sq=grad_sq,
                min_grad_norm_sq=self.min_grad_sq,
                tau_bar=self.tracker.running_avg,
                tau_max=self.tracker.running_peak,
                oracle_calls=self.oracle_calls,
            )
        )
        self.rounds_done = t

    def _snapshot_rng_states(self, active: ActiveSet, t: int) -> None:
        for i in sorted(active.members):
            self.audit_log[i] = {
                "round": t,
                "w": self.state.w.copy(),
                "eta": self.schedule.eta(t),
                "rng_state": generator_state(self.noise_rngs[i]),
            }

    def _dispatch(self, t: int, active: ActiveSet) -> int:
        name = self.algo_spec.name
        eta_t = self.schedule.eta(t)
        if name == "mifa":
            mifa_round(self.state, active, eta_t, self.instance, self.n_steps, self.noise_rngs)
            return len(active.members)
        if name == "mifa_delta":
            mifa_delta_round(self.state, active, eta_t, self.instance, self.n_steps, self.noise_rngs)
            return len(active.members)
        if name == "biased_fedavg":
            biased_fedavg_round(self.state, active, eta_t, self.instance, self.n_steps, self.noise_rngs)
            return len(active.members)
        if name == "is_fedavg":
            is_fedavg_round(
                self.state,
                active,
                eta_t,
                np.asarray(self.algo_spec.probs, dtype=np.float64),
                self.algo_spec.normalization,
                self.instance,
                self.n_steps,
                self.noise_rngs,
            )
            return len(active.members)
        _, computed = sampling_fedavg_round(
            self.state, active, self.schedule, self.instance, self.n_steps, self.noise_rngs, self.subset_rng
        )
        return computed

    def run(self) -> RunResult:
        diverged = False
        try:
            self.run_rounds(self.horizon)
        except DivergenceError:
            diverged = True
        final_avg = self.rows[-1].avg_gap if self.rows else None
        stats = self.tracker.stats() if self.tracker.round >= 2 else None
        return RunResult(
            rounds=self.rows,
            diverged=diverged,
            final_avg_gap=final_avg,
            staleness=stats,
            final_w=self.state.w.copy(),
        )

    def run_rounds(self, upto: int) -> list:
        """Advance to round ``upto`` (inclusive); returns the new rows."""
        self.rows = []
        for t in range(self.rounds_done + 1, upto + 1):
            self._round_once(t)
        return self.rows

    # ---- lossless mid-run checkpointing -----------------------------------

    def checkpoint(self) -> dict:
        state = {
            "version": 1,
            "algorithm": self.algo_spec.name,
            "rounds_done": self.rounds_done,
            "oracle_calls": self.oracle_calls,
            "min_grad_sq": self.min_grad_sq,
            "server": self.state.state_dict(),
            "sampler": self.sampler.state_dict(),
            "tracker": self.tracker.state_dict(),
            "noise_rngs": [generator_state(g) for g in self.noise_rngs],
            "subset_rng": generator_state(self.subset_rng),
            "averaged": self.averaged.state_dict() if self.averaged is not None else None,
        }
        return state

    def restore(self, state: dict) -> None:
        if state["version"] != 1:
            raise ValueError(f"unsupported checkpoint version {state['version']}")
        if state["algorithm"] != self.algo_spec.name:
            raise ValueError("checkpoint belongs to a different algorithm")
        self.rounds_done = int(state["rounds_done"])
        self.oracle_calls = int(state["oracle_calls"])
        self.min_grad_sq = float(state["min_grad_sq"])
        self.state = type(self.state).from_state_dict(state["server"])
        self.sampler.restore(state["sampler"])
        self.tracker = StalenessTracker.from_state_dict(state["tracker"])
        self.noise_rngs = [restore_generator(s) for s in state["noise_rngs"]]
        self.subset_rng = restore_generator(state["subset_rng"])
        if state["averaged"] is not None:
            self.averaged = AveragedIterate.from_state_dict(state["averaged"])


def run(
    algo_spec,
    instance: ProblemInstance,
    model,
    schedule: LrSchedule,
    horizon: int,
    n_steps: int,
    seed: int,
    w0: np.ndarray | None = None,
) -> RunResult:
    """Run one algorithm for ``horizon`` wall-rounds; deterministic in all
    arguments plus the seed."""
    runner = Runner(algo_spec, instance, model, schedule, horizon, n_steps, seed, w0=w0)
    return runner.run()
