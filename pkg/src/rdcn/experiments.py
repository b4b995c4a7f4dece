"""Sweeps over (port partition, traffic share) cells with several seeds."""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
import yaml

from .metrics import MetricsBundle
from .sim import SimConfig, config_from_dict, run


@dataclass(frozen=True)
class CellSpec:
    name: str
    overrides: dict[str, Any]
    share: float


@dataclass
class CellResult:
    name: str
    share: float
    seeds: list[int]
    values: list[float] = field(default_factory=list)
    in_order: list[float] = field(default_factory=list)
    error: str | None = None
    best: bool = False
    bundles: list[MetricsBundle] = field(default_factory=list, repr=False)

    @property
    def ok(self) -> bool:
        return self.error is None and len(self.values) == len(self.seeds)

    @property
    def mean(self) -> float:
        return float(np.mean(self.values)) if self.values else math.nan

    @property
    def std(self) -> float:
        return float(np.std(self.values, ddof=1)) if len(self.values) > 1 else 0.0

    @property
    def min(self) -> float:
        return float(np.min(self.values)) if self.values else math.nan

    @property
    def max(self) -> float:
        return float(np.max(self.values)) if self.values else math.nan


@dataclass
class Manifest:
    base: dict[str, Any]
    configs: list[tuple[str, dict[str, Any]]]
    shares: list[float]
    seeds: list[int]
    workers: int = 1

    @property
    def cells(self) -> list[CellSpec]:
        return [CellSpec(name, ov, s) for name, ov in self.configs for s in self.shares]


def _config_entry(entry) -> tuple[str, dict[str, Any]]:
    if isinstance(entry, (list, tuple)):
        k_s, k_r, k_d = (int(x) for x in entry)
        return f"({k_s},{k_r},{k_d})", {"k_s": k_s, "k_r": k_r, "k_d": k_d}
    entry = dict(entry)
    name = entry.pop("name", None)
    if name is None:
        name = f"({entry.get('k_s')},{entry.get('k_r')},{entry.get('k_d')})"
    return str(name), entry


def parse_manifest(data: dict[str, Any]) -> Manifest:
    seeds = data.get("seeds", 1)
    seeds = list(range(int(seeds))) if isinstance(seeds, int) else [int(s) for s in seeds]
    configs = [_config_entry(c) for c in data.get("configs", [])]
    if not configs:
        raise ValueError("manifest lists no configurations")
    shares = [float(s) for s in data.get("shares", [data.get("base", {}).get("share", 0.7)])]
    return Manifest(dict(data.get("base", {})), configs, shares, seeds, int(data.get("workers", 1)))


def load_manifest(path: str | Path) -> Manifest:
    return parse_manifest(yaml.safe_load(Path(path).read_text()) or {})


def cell_config(manifest: Manifest, cell: CellSpec, seed: int) -> SimConfig:
    data = {**manifest.base, **cell.overrides, "share": cell.share, "seed": seed}
    return config_from_dict(data)


def run_manifest(
    manifest: Manifest,
    runner: Callable[[SimConfig], MetricsBundle] = run,
    workers: int | None = None,
    keep_bundles: bool = False,
) -> list[CellResult]:
    """Run every cell for every seed; a failing cell is reported and the
    sweep moves on. Runs are independent, so ``workers > 1`` farms them out
    to processes without changing any result."""
    cells = manifest.cells
    results = [CellResult(c.name, c.share, list(manifest.seeds)) for c in cells]
    jobs = []
    for ci, c in enumerate(cells):
        try:
            cfgs = [cell_config(manifest, c, s) for s in manifest.seeds]
        except (TypeError, ValueError) as exc:
            results[ci].error = f"invalid configuration: {exc}"
            continue
        jobs += [(ci, cfg) for cfg in cfgs]
    workers = manifest.workers if workers is None else workers

    def collect(ci: int, fut_or_value: Callable[[], MetricsBundle]) -> None:
        res = results[ci]
        if res.error is not None:
            return
        try:
            bundle = fut_or_value()
        except Exception as exc:  # keep sweeping past a broken cell
            res.error = f"{type(exc).__name__}: {exc}"
            return
        if bundle.violations:
            res.error = "; ".join(bundle.violations)
            return
        res.values.append(bundle.normalized_goodput)
        res.in_order.append(bundle.in_order_fraction)
        if keep_bundles:
            res.bundles.append(bundle)

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [(ci, pool.submit(runner, cfg)) for ci, cfg in jobs]
            for ci, fut in futs:
                collect(ci, fut.result)
    else:
        for ci, cfg in jobs:
            collect(ci, lambda cfg=cfg: runner(cfg))
    mark_best(results)
    return results


def mark_best(results: Sequence[CellResult]) -> None:
    """Flag, per traffic share, the configuration with the highest mean."""
    for share in sorted({r.share for r in results}):
        col = [r for r in results if r.share == share and r.ok]
        for r in col:
            r.best = False
        if col:
            max(col, key=lambda r: r.mean).best = True


def results_csv(results: Sequence[CellResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["config", "share", "runs", "mean", "std", "min", "max", "in_order_mean", "best", "error"])
    for r in results:
        order = repr(float(np.mean(r.in_order))) if r.in_order else ""
        if r.ok:
            w.writerow([r.name, r.share, len(r.values), repr(r.mean), repr(r.std), repr(r.min), repr(r.max), order, int(r.best), ""])
        else:
            w.writerow([r.name, r.share, len(r.values), "", "", "", "", order, 0, r.error or "incomplete"])
    return buf.getvalue()


def heatmap_csv(results: Sequence[CellResult]) -> str:
    """Mean normalized goodput with one row per configuration and one column
    per traffic share; failed cells are left empty."""
    shares = sorted({r.share for r in results})
    names = list(dict.fromkeys(r.name for r in results))
    cell = {(r.name, r.share): r for r in results}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["config"] + [f"share_{s:g}" for s in shares])
    for name in names:
        row = [name]
        for s in shares:
            r = cell.get((name, s))
            row.append(repr(r.mean) + ("*" if r.best else "") if r is not None and r.ok else "")
        w.writerow(row)
    return buf.getvalue()
