"""Result bundles: deterministic CSV/JSON files and reloading them for rendering."""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from pathlib import Path

import numpy as np

from .engine import AuditRow, RunResults
from .scenario import load_scenario, serialize_scenario

AUDIT_FIELDS = [
    "t_s", "persons_in_system", "persons_exited", "persons_injected", "residual",
    "vehicles_in_system", "vehicles_exited", "vehicles_injected",
    "persons_created", "persons_consumed", "vehicles_created", "vehicles_consumed",
]
FILES = ("summary.csv", "edges.csv", "curves.csv", "audit.csv", "edge_flows.csv",
         "scenario.json", "metadata.json")


def fmt(x) -> str:
    """Shortest round-trip decimal for floats, plain text otherwise."""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_csv(path: Path, header: list[str], rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def run_id(results: RunResults) -> str:
    return f"{results.scenario.name}-{results.scenario.settings_hash()}"


def write_results(results: RunResults, out_dir, figures: bool = True) -> dict[str, Path]:
    """Write the result bundle into ``out_dir``; returns the written paths by name."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: out / name for name in FILES}
    K = results.class_count

    _write_csv(paths["summary.csv"],
               ["commodity", "total_persons", "mean_travel_time_s", "p95_travel_time_s"],
               ([r["commodity"], float(r["total_persons"]), float(r["mean_travel_time_s"]),
                 float(r["p95_travel_time_s"])] for r in results.summary))

    with open(paths["edges.csv"], "w", encoding="utf-8") as fh:
        fh.write(",".join(["t_s", "edge_id", "cell_index", "rho_total"]
                          + [f"rho_class_{k}" for k in range(K)]) + "\n")
        layout = [(eid, int(f), int(n)) for eid, f, n in
                  zip(results.edge_ids, results.edge_first, results.edge_cells)]
        for s, t in enumerate(results.sample_times):
            ts = repr(float(t))
            dens = list(map(repr, results.density[s].tolist()))
            by_class = [",".join(map(repr, row)) for row in results.density_by_class[s].tolist()]
            fh.write("".join(
                f"{ts},{eid},{i},{dens[f + i]},{by_class[f + i]}\n"
                for eid, f, n in layout for i in range(n)
            ))

    _write_csv(paths["curves.csv"], ["t_s", "commodity", "cum_entered", "cum_exited"],
               ([float(t), cid, float(results.cum_entered[s][c]), float(results.cum_exited[s][c])]
                for s, t in enumerate(results.sample_times)
                for c, cid in enumerate(results.commodity_ids)))

    _write_csv(paths["audit.csv"], AUDIT_FIELDS,
               ([float(a.t)] + [float(getattr(a, f)) for f in AUDIT_FIELDS[1:]]
                for a in results.audit))

    _write_csv(paths["edge_flows.csv"], ["t_s", "edge_id", "cum_inflow", "cum_outflow"],
               ([float(t), eid, float(results.edge_inflow[s][e]), float(results.edge_outflow[s][e])]
                for s, t in enumerate(results.sample_times)
                for e, eid in enumerate(results.edge_ids)))

    paths["scenario.json"].write_text(serialize_scenario(results.scenario), encoding="utf-8")

    files = list(FILES)
    if figures:
        from .plotting import plot_curves, render_snapshot

        fig_dir = out / "figures"
        fig_dir.mkdir(exist_ok=True)
        plot_curves(results, fig_dir / "curves.svg")
        files.append("figures/curves.svg")
        paths["figures/curves.svg"] = fig_dir / "curves.svg"
        if results.sample_times and all(n.pos is not None for n in results.scenario.network.nodes):
            peak = int(np.argmax([d.max(initial=0.0) for d in results.density]))
            render_snapshot(results, results.sample_times[peak], fig_dir / "peak_snapshot.svg")
            files.append("figures/peak_snapshot.svg")
            paths["figures/peak_snapshot.svg"] = fig_dir / "peak_snapshot.svg"

    final = results.final_audit
    meta = {
        "run_id": run_id(results),
        "scenario": results.scenario.name,
        "seed": results.scenario.settings.seed,
        "settings_hash": results.scenario.settings_hash(),
        "transform": results.scenario.settings.transform,
        "dt_s": results.dt,
        "steps": results.steps,
        "simulated_time_s": results.termination_time,
        "truncated": results.truncated,
        "persons_created": final.persons_created if final else 0.0,
        "occupancy_sample_sum": int(sum(results.occupancy_samples)) if not
        results.scenario.settings.deterministic_transform else None,
        "persons_flushed": results.persons_flushed,
        "persons_from_flush": results.persons_from_flush,
        "vehicles_flushed": results.vehicles_flushed,
        "files": sorted(files),
    }
    paths["metadata.json"].write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return paths


def load_results(out_dir) -> RunResults:
    """Rebuild the parts of a RunResults needed for rendering from a bundle directory."""
    out = Path(out_dir)
    scenario = load_scenario(out / "scenario.json")
    edges = sorted(scenario.network.edges, key=lambda e: e.id)
    counts = np.array([e.cell_count for e in edges], dtype=int)
    first = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(int)
    index = {e.id: i for i, e in enumerate(edges)}
    N = int(counts.sum())
    K = scenario.settings.class_count
    by_time: dict[float, np.ndarray] = defaultdict(lambda: np.zeros((N, K)))
    totals: dict[float, np.ndarray] = defaultdict(lambda: np.zeros(N))
    with open(out / "edges.csv", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        k_cols = len(header) - 4
        for row in reader:
            t = float(row[0])
            cell = first[index[row[1]]] + int(row[2])
            by_time[t][cell, :k_cols] = [float(x) for x in row[4:]]
            totals[t][cell] = float(row[3])
    res = RunResults(
        scenario=scenario, dt=float("nan"), steps=0, termination_time=max(by_time, default=0.0),
        truncated=False, edge_ids=[e.id for e in edges], edge_first=first, edge_cells=counts,
        commodity_ids=sorted(c.id for c in scenario.network.commodities), class_count=K,
    )
    for t in sorted(by_time):
        res.sample_times.append(t)
        res.density_by_class.append(by_time[t])
        res.density.append(totals[t])
    meta_path = out / "metadata.json"
    if meta_path.exists():
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        res.steps = meta.get("steps", 0)
        res.truncated = meta.get("truncated", False)
    return res


def read_audit(out_dir) -> list[AuditRow]:
    rows = []
    with open(Path(out_dir) / "audit.csv", newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            vals = {f: float(rec[f]) for f in AUDIT_FIELDS}
            vals["t"] = vals.pop("t_s")
            rows.append(AuditRow(**vals))
    return rows


def bundle_files(out_dir) -> list[str]:
    root = Path(out_dir)
    return sorted(str(p.relative_to(root)) for p in root.rglob("*") if p.is_file())
