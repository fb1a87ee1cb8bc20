"""Command-line entry point: ``lane-pareto optimize`` and ``lane-pareto sweep``.

Exit codes: 0 success, 2 configuration error, 3 no feasible candidate,
4 tracking failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import shutil
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .analysis import (
    default_region,
    edie_json,
    edie_metrics,
    heatmap_grid,
    per_vehicle_region_table,
    region_table_csv,
)
from .engine import (
    Evaluator,
    FinalRun,
    LcCandidate,
    decision_space,
    existing_algorithm_baseline,
    prepare,
    run_final,
)
from .nsga2 import ParetoFront, evolve, select_solution
from .scenario import ConfigError, ScenarioConfig, WarmupError, build_scenario, config_to_dict
from .tracking import TrackingError

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_TRACKING = 0, 2, 3, 4
SWEEP_KEYS = ("lc_initial_speed", "lc_initial_gap", "penetration_ratio")
THREADS_ENV = "LANE_PARETO_THREADS"
HEATMAP_CELL = (10.0, 0.5)  # (dx m, dt s)
MANIFEST_VERSION = 1


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# ------------------------------------------------------------- config


def load_config(path: str | Path) -> ScenarioConfig:
    """Scenario YAML, or a run manifest whose embedded config is replayed."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("--scenario", str(exc)) from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("--scenario", f"document does not parse: {exc}") from exc
    if isinstance(doc, dict) and "manifest_version" in doc:
        doc = doc["config"]
    return build_scenario(doc or {})


def apply_flags(cfg: ScenarioConfig, seed=None, generations=None, population=None) -> ScenarioConfig:
    changes = {}
    if seed is not None:
        changes["seed"] = seed
    nsga = {}
    if generations is not None:
        nsga["generations"] = generations
    if population is not None:
        nsga["population"] = population
    if nsga:
        raw = config_to_dict(cfg)["nsga"]
        raw.update(nsga)
        changes["nsga"] = raw
    return cfg.with_overrides(**changes) if changes else cfg


def worker_count() -> int:
    n = os.cpu_count() or 1
    cap = os.environ.get(THREADS_ENV)
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ConfigError(THREADS_ENV, f"expected a positive integer, got {cap!r}") from None
    return n


# ----------------------------------------------------------- parallel map

_WORKER_EVAL: Evaluator | None = None


def _init_worker(evaluator: Evaluator) -> None:
    global _WORKER_EVAL
    _WORKER_EVAL = evaluator


def _call_worker(cand):
    return _WORKER_EVAL(cand)


class _PoolMap:
    """Order-preserving map over a process pool, so results match the serial run."""

    def __init__(self, pool: ProcessPoolExecutor, workers: int):
        self.pool = pool
        self.workers = workers

    def __call__(self, fn, items):
        items = list(items)
        chunk = max(1, len(items) // (4 * self.workers))
        return list(self.pool.map(_call_worker, items, chunksize=chunk))


def optimize_front(cfg: ScenarioConfig, warm=None, workers: int = 1) -> ParetoFront:
    warm = warm if warm is not None else prepare(cfg)
    evaluator = Evaluator(warm)
    space = decision_space(cfg)
    if workers <= 1:
        return evolve(evaluator, space, cfg.nsga, decode=LcCandidate.from_vector)
    with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(evaluator,)) as pool:
        return evolve(evaluator, space, cfg.nsga, decode=LcCandidate.from_vector, map_fn=_PoolMap(pool, workers))


# -------------------------------------------------------------- artifacts


def _num(x):
    x = float(x)
    return x if math.isfinite(x) else None


def front_document(front: ParetoFront, selected: int, baseline: int) -> dict:
    members = []
    for i, m in enumerate(front.members):
        members.append(
            {
                "index": i,
                "candidate": m.candidate.as_dict(),
                "J_LC": float(m.objectives[0]),
                "J_TF": float(m.objectives[1]),
                "rank": int(m.rank),
                "crowding": _num(m.crowding),
                "selected": i == selected,
                "baseline": i == baseline,
            }
        )
    return {
        "objectives": ["J_LC", "J_TF"],
        "n_evaluations": front.n_evaluations,
        "selected_index": selected,
        "baseline_index": baseline,
        "members": members,
    }


def _dump_json(doc, path: Path) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n")


def render_figures(front: ParetoFront, selected: int, baseline: int, ideal: FinalRun, grid, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "lane-pareto", "svg.fonttype": "none"}):
        fig, axes = plt.subplots(1, 3, figsize=(15, 4.2))
        objs = front.objectives()
        ax = axes[0]
        ax.scatter(objs[:, 0], objs[:, 1], s=14, color="0.4", label="front")
        ax.scatter(*objs[selected], s=60, marker="*", color="tab:red", label="selected")
        ax.scatter(*objs[baseline], s=40, marker="s", color="tab:blue", label="least J_LC")
        ax.set_xlabel("J_LC")
        ax.set_ylabel("J_TF")
        ax.legend(frameon=False)
        ax.set_title("Pareto front")

        ax = axes[1]
        mesh = ax.pcolormesh(grid.t_edges, grid.x_edges, np.ma.masked_invalid(grid.speed.T), cmap="RdYlGn", shading="flat")
        fig.colorbar(mesh, ax=ax, label="speed (m/s)")
        ax.set_xlabel("t (s)")
        ax.set_ylabel("x (m)")
        ax.set_title("Speed heatmap")

        ax = axes[2]
        tr = ideal.trace
        for i, kind in enumerate(tr.kinds):
            if kind.value == "INCIDENT":
                continue
            lc = kind.value == "AV_LC"
            ax.plot(tr.times, tr.x[i], lw=1.6 if lc else 0.7, color="tab:red" if lc else "0.35")
        ax.axvline(tr.t_start, ls=":", color="0.5")
        ax.axvline(tr.t_end, ls=":", color="0.5")
        ax.set_xlabel("t (s)")
        ax.set_ylabel("x (m)")
        ax.set_title("Trajectories")
        # fixed margins: tight_layout costs a text-extent pass per axis
        fig.subplots_adjust(left=0.05, right=0.98, bottom=0.13, top=0.92, wspace=0.28)
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _commit(stage: Path, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for f in sorted(stage.iterdir()):
        os.replace(f, out / f.name)


@dataclass
class RunSummary:
    out: Path
    front: ParetoFront
    selected: int
    baseline: int
    ideal: FinalRun


def run_optimize(cfg: ScenarioConfig, out: Path, workers: int = 1, figures: bool = True) -> RunSummary:
    """Optimize, replay the selected candidate and write every artifact into ``out``."""
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    try:
        warm = prepare(cfg)
    except WarmupError as exc:
        raise CliError(EXIT_CONFIG, f"config error: warm-up did not settle ({exc})") from exc
    front = optimize_front(cfg, warm, workers)
    if not front.members:
        raise CliError(
            EXIT_INFEASIBLE,
            f"no feasible candidate found; best constraint violation {front.best_violation:.6g}",
        )
    sel = select_solution(front)
    selected = front.members.index(sel)
    baseline = front.members.index(existing_algorithm_baseline(front))
    ideal = run_final(sel.candidate, warm, mode="ideal")
    try:
        tracked = run_final(sel.candidate, warm, mode="tracked")
    except TrackingError as exc:
        raise CliError(EXIT_TRACKING, f"tracking failure: {exc}") from exc
    base_run = run_final(front.members[baseline].candidate, warm, mode="ideal")

    e = cfg.edie_region
    region = default_region(ideal.trace, e.length, e.duration, e.x_start, e.t_start)
    grid = heatmap_grid(ideal.trace, HEATMAP_CELL, region)

    out.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        files = {}

        def emit(name: str) -> Path:
            files[name] = stage / name
            return files[name]

        _dump_json(front_document(front, selected, baseline), emit("front.json"))
        ideal.trace.to_csv(emit("trace_ideal.csv"))
        tracked.trace.to_csv(emit("trace_tracked.csv"))
        trk = tracked.rollout.tracking
        _dump_json(
            {
                "selected": ideal.costs.to_dict(),
                "per_vehicle_totals": {str(k): v for k, v in ideal.costs.per_vehicle_totals(cfg.cost).items()},
                "per_vehicle_peaks": {str(k): v for k, v in ideal.costs.per_vehicle_peaks(cfg.cost).items()},
                "tracked": {
                    "J_LC": tracked.costs.j_lc,
                    "J_TF": tracked.costs.j_tf,
                    "constraint_violation": tracked.costs.violation,
                    "position_rms": trk.rms,
                    "lateral_rms": trk.lateral_rms,
                    "max_relaxation": float(trk.relaxation.max(initial=0.0)),
                },
                "baseline": {
                    "J_LC": base_run.costs.j_lc,
                    "J_TF": base_run.costs.j_tf,
                    "per_vehicle_totals": {
                        str(k): v for k, v in base_run.costs.per_vehicle_totals(cfg.cost).items()
                    },
                },
            },
            emit("costs.json"),
        )
        rows = per_vehicle_region_table(ideal.trace, region)
        edie_json(edie_metrics(ideal.trace, region), region, emit("edie.json"))
        region_table_csv(rows, emit("region_table.csv"))
        grid.to_csv(emit("heatmap.csv"))
        if figures:
            render_figures(front, selected, baseline, ideal, grid, emit("figures.svg"))
        manifest = {
            "manifest_version": MANIFEST_VERSION,
            "package_version": __version__,
            "config": config_to_dict(cfg),
            "seed": cfg.seed,
            "started": started,
            "finished": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "modes": {"replay": ["ideal", "tracked"], "figures": figures, "workers": workers},
            "artifacts": {name: {"path": name, "sha256": _sha256(p)} for name, p in sorted(files.items())},
        }
        _dump_json(manifest, stage / "manifest.json")
        _commit(stage, out)
    finally:
        shutil.rmtree(stage, ignore_errors=True)
    return RunSummary(out, front, selected, baseline, ideal)


# ------------------------------------------------------------------ sweep


def parse_vary(spec: str) -> tuple[str, list[float]]:
    try:
        key, rng = spec.split("=", 1)
        parts = [float(p) for p in rng.split(":")]
    except ValueError:
        raise ConfigError("--vary", f"expected key=start:stop:step, got {spec!r}") from None
    if key not in SWEEP_KEYS:
        raise ConfigError("--vary", f"unknown sweep key {key!r}; choose from {', '.join(SWEEP_KEYS)}")
    if len(parts) == 1:
        return key, parts
    if len(parts) != 3:
        raise ConfigError("--vary", f"expected key=start:stop:step, got {spec!r}")
    start, stop, step = parts
    if not step > 0 or stop < start:
        raise ConfigError("--vary", "need step > 0 and stop >= start")
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return key, [round(start + i * step, 10) for i in range(n)]


def _trend(totals: list[float]) -> dict:
    d = np.diff(totals)
    return {
        "non_increasing": bool(np.all(d <= 1e-12)),
        "non_decreasing": bool(np.all(d >= -1e-12)),
    }


def run_sweep(cfg: ScenarioConfig, key: str, values: list[float], out: Path, workers: int = 1) -> int:
    runs = []
    status = EXIT_OK
    for value in values:
        sub = out / f"{key}={value:g}"
        entry = {"value": value, "dir": sub.name}
        try:
            run_cfg = cfg.with_overrides(**{key: value})
            res = run_optimize(run_cfg, sub, workers=workers, figures=False)
        except ConfigError as exc:
            entry.update(status=EXIT_CONFIG, message=f"config error: {exc}")
        except CliError as exc:
            entry.update(status=exc.code, message=str(exc))
        else:
            sel = res.front.members[res.selected]
            entry.update(
                status=EXIT_OK,
                selected={
                    "J_LC": float(sel.objectives[0]),
                    "J_TF": float(sel.objectives[1]),
                    "total": float(sum(sel.objectives)),
                },
                front=[[float(a), float(b)] for a, b in res.front.objectives()],
            )
        if entry["status"] != EXIT_OK and status == EXIT_OK:
            status = entry["status"]
        runs.append(entry)
    ok = [r for r in runs if r["status"] == EXIT_OK]
    doc = {
        "key": key,
        "values": values,
        "seed": cfg.seed,
        "runs": runs,
        "trend": _trend([r["selected"]["total"] for r in ok]) if ok else None,
    }
    out.mkdir(parents=True, exist_ok=True)
    _dump_json(doc, out / "sweep.json")
    lines = ["value,J_LC,J_TF,total,status"]
    for r in runs:
        s = r.get("selected")
        cells = [f"{s[k]:.6f}" for k in ("J_LC", "J_TF", "total")] if s else ["", "", ""]
        lines.append(",".join([f"{r['value']:g}", *cells, str(r["status"])]))
    (out / "sweep_summary.csv").write_text("\n".join(lines) + "\n")
    return status


# -------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lane-pareto", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--scenario", required=True, help="scenario YAML or a run manifest")
        sp.add_argument("--seed", type=int, default=None, help="overrides the scenario seed")
        sp.add_argument("--out", required=True, type=Path, help="output directory")
        sp.add_argument("--generations", type=int, default=None)
        sp.add_argument("--population", type=int, default=None)

    opt = sub.add_parser("optimize", help="optimize one scenario and export the selected maneuver")
    common(opt)
    opt.add_argument("--no-figures", action="store_true", help="skip the SVG rendering")
    sw = sub.add_parser("sweep", help="repeat optimize over a grid of one scenario parameter")
    common(sw)
    sw.add_argument("--vary", required=True, help="key=start:stop:step, key one of " + ", ".join(SWEEP_KEYS))
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = apply_flags(load_config(args.scenario), args.seed, args.generations, args.population)
        workers = worker_count()
        if args.command == "optimize":
            res = run_optimize(cfg, args.out, workers=workers, figures=not args.no_figures)
            sel = res.front.members[res.selected]
            print(
                f"front: {len(res.front)} points; selected J_LC={sel.objectives[0]:.4f} "
                f"J_TF={sel.objectives[1]:.4f}; artifacts in {res.out}"
            )
            return EXIT_OK
        key, values = parse_vary(args.vary)
        code = run_sweep(cfg, key, values, args.out, workers=workers)
        print(f"sweep over {key}: {len(values)} runs; summary in {args.out / 'sweep.json'}")
        return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CliError as exc:
        print(str(exc), file=sys.stderr)
        return exc.code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
