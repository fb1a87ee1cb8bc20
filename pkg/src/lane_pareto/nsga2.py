"""NSGA-II with constraint-domination on a discrete decision grid."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

GRID_STEP = 0.1


class EvaluationError(RuntimeError):
    def __init__(self, candidate, message: str = ""):
        super().__init__(f"evaluation failed for {candidate!r}: {message}")
        self.candidate = candidate


@dataclass(frozen=True)
class NsgaParams:
    population: int = 60
    generations: int = 80
    crossover_rate: float = 0.9
    mutation_rate: float | None = None  # per variable; None means 1/n_vars
    eta_c: float = 15.0
    eta_m: float = 20.0
    seed: int = 0

    def validate(self) -> None:
        if self.population < 4 or self.population % 2:
            raise ValueError("nsga.population must be even and >= 4")
        if self.generations < 1:
            raise ValueError("nsga.generations must be >= 1")
        if not 0 <= self.crossover_rate <= 1:
            raise ValueError("nsga.crossover_rate must lie in [0, 1]")
        if self.mutation_rate is not None and not 0 <= self.mutation_rate <= 1:
            raise ValueError("nsga.mutation_rate must lie in [0, 1]")
        if self.eta_c < 0 or self.eta_m < 0:
            raise ValueError("nsga distribution indices must be >= 0")


@dataclass(frozen=True)
class GridSpace:
    """Box-bounded decision space snapped to multiples of ``step`` (``None``: continuous)."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    step: float | None = GRID_STEP

    def __post_init__(self):
        if len(self.lower) != len(self.upper):
            raise ValueError("lower and upper bounds differ in length")
        for lo, hi in zip(self.lower, self.upper):
            if lo > hi:
                raise ValueError(f"bound {lo} > {hi}")

    @property
    def n_vars(self) -> int:
        return len(self.lower)

    def _inv(self) -> float | None:
        if self.step is None:
            return None
        inv = 1.0 / self.step
        return float(round(inv)) if abs(inv - round(inv)) < 1e-9 else None

    def index_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.ceil(np.asarray(self.lower) / self.step - 1e-9).astype(np.int64)
        hi = np.floor(np.asarray(self.upper) / self.step + 1e-9).astype(np.int64)
        return lo, hi

    def from_index(self, idx: np.ndarray) -> np.ndarray:
        inv = self._inv()
        idx = np.asarray(idx, dtype=np.int64)
        return idx / inv if inv is not None else idx * self.step

    def snap(self, x: np.ndarray) -> np.ndarray:
        x = np.clip(np.asarray(x, dtype=float), self.lower, self.upper)
        if self.step is None:
            return x
        lo, hi = self.index_bounds()
        idx = np.clip(np.rint(x / self.step).astype(np.int64), lo, hi)
        return self.from_index(idx)

    def key(self, x: np.ndarray) -> tuple:
        if self.step is None:
            return tuple(float(v) for v in x)
        return tuple(int(v) for v in np.rint(np.asarray(x) / self.step).astype(np.int64))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.step is None:
            return rng.uniform(self.lower, self.upper, size=(n, self.n_vars))
        lo, hi = self.index_bounds()
        return self.from_index(rng.integers(lo, hi + 1, size=(n, self.n_vars)))


@dataclass(eq=False)
class Individual:
    x: np.ndarray
    objectives: tuple[float, ...]
    violation: float
    rank: int = 0
    crowding: float = 0.0
    candidate: object = None

    @property
    def feasible(self) -> bool:
        return self.violation <= 0.0


@dataclass
class ParetoFront:
    members: list[Individual]
    selected: int | None = None
    best_violation: float = math.inf
    n_evaluations: int = 0

    def __len__(self) -> int:
        return len(self.members)

    def objectives(self) -> np.ndarray:
        return np.array([m.objectives for m in self.members], dtype=float).reshape(len(self.members), -1)


# ------------------------------------------------------------------ sorting


def _domination_matrix(objs: np.ndarray, viol: np.ndarray) -> np.ndarray:
    """``D[i, j]`` is True when i constraint-dominates j."""
    feas = viol <= 0.0
    le = np.all(objs[:, None, :] <= objs[None, :, :], axis=2)
    lt = np.any(objs[:, None, :] < objs[None, :, :], axis=2)
    pareto = le & lt
    fi, fj = feas[:, None], feas[None, :]
    return np.where(
        fi & fj,
        pareto,
        np.where(fi & ~fj, True, np.where(~fi & fj, False, viol[:, None] < viol[None, :])),
    )


def _as_arrays(population) -> tuple[np.ndarray, np.ndarray]:
    objs = np.array([p[0] for p in population], dtype=float)
    viol = np.array([p[1] for p in population], dtype=float)
    if objs.ndim == 1:
        objs = objs[:, None]
    if np.isnan(objs).any() or np.isnan(viol).any():
        raise ValueError("NaN objective or violation in population")
    return objs, viol


def fast_nondominated_sort(population: Sequence[tuple[Sequence[float], float]]) -> list[int]:
    """Front index of every ``(objectives, violation)`` pair under constraint-domination."""
    if len(population) == 0:
        raise ValueError("empty population")
    objs, viol = _as_arrays(population)
    dom = _domination_matrix(objs, viol)
    count = dom.sum(axis=0)
    ranks = np.full(len(population), -1, dtype=int)
    current = np.flatnonzero(count == 0)
    r = 0
    while current.size:
        ranks[current] = r
        count = count - dom[current].sum(axis=0)
        count[ranks >= 0] = -1
        current = np.flatnonzero(count == 0)
        r += 1
    return ranks.tolist()


def crowding_distance(front: Sequence[Sequence[float]]) -> list[float]:
    objs = np.asarray(front, dtype=float)
    n = len(objs)
    if n == 0:
        return []
    if objs.ndim == 1:
        objs = objs[:, None]
    dist = np.zeros(n)
    for m in range(objs.shape[1]):
        order = np.argsort(objs[:, m], kind="stable")
        lo, hi = objs[order[0], m], objs[order[-1], m]
        dist[order[0]] = dist[order[-1]] = math.inf
        span = hi - lo
        if span <= 0 or n < 3:
            continue
        gaps = (objs[order[2:], m] - objs[order[:-2], m]) / span
        dist[order[1:-1]] += gaps
    return dist.tolist()


# ---------------------------------------------------------------- operators


def tournament_select(pop: Sequence[Individual], rng: np.random.Generator) -> Individual:
    """Binary tournament on (rank, crowding); a fresh draw settles exact ties."""
    if not pop:
        raise ValueError("empty population")
    i, j = rng.integers(len(pop), size=2)
    a, b = pop[i], pop[j]
    if a.rank != b.rank:
        return a if a.rank < b.rank else b
    if a.crowding != b.crowding:
        return a if a.crowding > b.crowding else b
    return a if rng.random() < 0.5 else b


def _sbx(p1, p2, lo, hi, eta, rng):
    n = len(p1)
    c1, c2 = p1.copy(), p2.copy()
    cross = rng.random(n) < 0.5
    u = rng.random(n)
    flip = rng.random(n) < 0.5
    for k in range(n):
        if not cross[k] or abs(p1[k] - p2[k]) < 1e-14 or hi[k] <= lo[k]:
            continue
        y1, y2 = min(p1[k], p2[k]), max(p1[k], p2[k])
        span = y2 - y1
        out = []
        for bound_gap in (y1 - lo[k], hi[k] - y2):
            beta = 1.0 + 2.0 * bound_gap / span
            alpha = 2.0 - beta ** -(eta + 1.0)
            if u[k] <= 1.0 / alpha:
                betaq = (u[k] * alpha) ** (1.0 / (eta + 1.0))
            else:
                betaq = (1.0 / (2.0 - u[k] * alpha)) ** (1.0 / (eta + 1.0))
            out.append(betaq)
        ch1 = 0.5 * ((y1 + y2) - out[0] * span)
        ch2 = 0.5 * ((y1 + y2) + out[1] * span)
        if flip[k]:
            ch1, ch2 = ch2, ch1
        c1[k], c2[k] = ch1, ch2
    return c1, c2


def _poly_mutation(x, lo, hi, eta, rate, rng):
    n = len(x)
    y = x.copy()
    mutate = rng.random(n) < rate
    u = rng.random(n)
    for k in range(n):
        if not mutate[k] or hi[k] <= lo[k]:
            continue
        span = hi[k] - lo[k]
        d1 = (y[k] - lo[k]) / span
        d2 = (hi[k] - y[k]) / span
        p = 1.0 / (eta + 1.0)
        if u[k] < 0.5:
            xy = 1.0 - d1
            val = 2.0 * u[k] + (1.0 - 2.0 * u[k]) * xy ** (eta + 1.0)
            dq = val**p - 1.0
        else:
            xy = 1.0 - d2
            val = 2.0 * (1.0 - u[k]) + 2.0 * (u[k] - 0.5) * xy ** (eta + 1.0)
            dq = 1.0 - val**p
        y[k] = y[k] + dq * span
    return y


def vary(
    parents: tuple[np.ndarray, np.ndarray],
    space: GridSpace,
    params: NsgaParams,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """SBX crossover and polynomial mutation, then snap to the grid."""
    p1, p2 = (np.asarray(p, dtype=float) for p in parents)
    lo, hi = np.asarray(space.lower, float), np.asarray(space.upper, float)
    rate = params.mutation_rate if params.mutation_rate is not None else 1.0 / space.n_vars
    # draw the crossover decision unconditionally so the stream advances identically
    do_cross = rng.random() < params.crossover_rate
    c1, c2 = _sbx(p1, p2, lo, hi, params.eta_c, rng)
    if not do_cross:
        c1, c2 = p1.copy(), p2.copy()
    c1 = _poly_mutation(c1, lo, hi, params.eta_m, rate, rng)
    c2 = _poly_mutation(c2, lo, hi, params.eta_m, rate, rng)
    return space.snap(c1), space.snap(c2)


# ------------------------------------------------------------------- evolve


class _Guarded:
    """Picklable wrapper that tags evaluator failures with their candidate."""

    def __init__(self, evaluator):
        self.evaluator = evaluator

    def __call__(self, candidate):
        try:
            objectives, violation = self.evaluator(candidate)
        except EvaluationError:
            raise
        except Exception as exc:  # noqa: BLE001 - re-raised with context
            raise EvaluationError(candidate, f"{type(exc).__name__}: {exc}") from exc
        return tuple(float(o) for o in objectives), float(violation)


def _rank_and_crowd(pop: list[Individual]) -> list[list[int]]:
    ranks = fast_nondominated_sort([(p.objectives, p.violation) for p in pop])
    fronts: list[list[int]] = [[] for _ in range(max(ranks) + 1)]
    for i, r in enumerate(ranks):
        pop[i].rank = r
        fronts[r].append(i)
    for front in fronts:
        dist = crowding_distance([pop[i].objectives for i in front])
        for i, d in zip(front, dist):
            pop[i].crowding = d
    return fronts


def evolve(
    evaluator: Callable,
    space: GridSpace,
    params: NsgaParams,
    *,
    decode: Callable[[np.ndarray], object] | None = None,
    map_fn: Callable[[Callable, Iterable], Iterable] = map,
    on_generation: Callable[[int, list[Individual]], None] | None = None,
) -> ParetoFront:
    """Run NSGA-II and return the feasible non-dominated members of the final population.

    ``evaluator`` maps a decoded candidate to ``(objectives, violation)``.
    Results are cached per grid point and committed in candidate order, so a
    parallel ``map_fn`` does not change the outcome.
    """
    params.validate()
    decode = decode or (lambda x: x)
    guarded = _Guarded(evaluator)
    init_seq, sel_seq, var_seq = np.random.SeedSequence(params.seed).spawn(3)
    init_rng = np.random.default_rng(init_seq)
    sel_rng = np.random.default_rng(sel_seq)
    var_rng = np.random.default_rng(var_seq)
    cache: dict[tuple, tuple[tuple[float, ...], float]] = {}
    best_violation = math.inf

    def evaluate(xs: list[np.ndarray]) -> list[Individual]:
        nonlocal best_violation
        pending: dict[tuple, np.ndarray] = {}
        for x in xs:
            k = space.key(x)
            if k not in cache and k not in pending:
                pending[k] = x
        if pending:
            results = map_fn(guarded, [decode(x) for x in pending.values()])
            for k, res in zip(list(pending), results):
                cache[k] = res
                best_violation = min(best_violation, res[1])
        out = []
        for x in xs:
            objs, viol = cache[space.key(x)]
            out.append(Individual(x=x, objectives=objs, violation=viol))
        return out

    pop = evaluate(list(space.sample(params.population, init_rng)))
    _rank_and_crowd(pop)
    for gen in range(params.generations):
        children: list[np.ndarray] = []
        while len(children) < params.population:
            a = tournament_select(pop, sel_rng)
            b = tournament_select(pop, sel_rng)
            children.extend(vary((a.x, b.x), space, params, var_rng))
        merged = pop + evaluate(children[: params.population])
        fronts = _rank_and_crowd(merged)
        survivors: list[Individual] = []
        for front in fronts:
            if len(survivors) + len(front) <= params.population:
                survivors.extend(merged[i] for i in front)
                continue
            order = sorted(front, key=lambda i: -merged[i].crowding)
            survivors.extend(merged[i] for i in order[: params.population - len(survivors)])
            break
        pop = [Individual(p.x, p.objectives, p.violation) for p in survivors]
        _rank_and_crowd(pop)
        if on_generation is not None:
            on_generation(gen, pop)

    front = [p for p in pop if p.rank == 0 and p.feasible]
    seen: set[tuple] = set()
    members = []
    for p in front:
        k = space.key(p.x)
        if k in seen:
            continue
        seen.add(k)
        p.candidate = decode(p.x)
        members.append(p)
    crowd = crowding_distance([m.objectives for m in members])
    for m, d in zip(members, crowd):
        m.crowding = d
    members.sort(key=lambda m: m.objectives)
    return ParetoFront(members=members, best_violation=best_violation, n_evaluations=len(cache))


# ---------------------------------------------------------------- selection


def select_solution(front: ParetoFront) -> Individual:
    """Front member closest to the origin; ties go to lower J_TF, then lower J_LC."""
    if not front.members:
        raise ValueError("empty Pareto front")
    best = min(
        range(len(front.members)),
        key=lambda i: (
            math.hypot(*front.members[i].objectives[:2]),
            front.members[i].objectives[1],
            front.members[i].objectives[0],
        ),
    )
    front.selected = best
    return front.members[best]
