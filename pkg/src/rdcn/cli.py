"""Command line entry point. Every command writes CSV with a header row."""
from __future__ import annotations

import csv
import io
import sys
from pathlib import Path

import click
import numpy as np

from .bvn import CutoffRule, MixAlg, TraceRecord, bvn_decompose, dct_ahor, dct_map, greedy_mixnet, trace_pipeline
from .core import SystemParams, read_matrix_csv
from .experiments import heatmap_csv, load_manifest, results_csv, run_manifest
from .sim import load_config, run
from .traffic import generate, load_cdf, read_trace, write_trace


def _emit(text: str, out: str | None) -> None:
    if out is None or out == "-":
        click.echo(text, nl=False)
    else:
        Path(out).write_text(text)


def _grid(lo: float, hi: float, step: float) -> np.ndarray:
    count = int(round((hi - lo) / step)) + 1
    return np.round(lo + step * np.arange(count), 12)


@click.group()
@click.version_option(package_name="artifact")
def main() -> None:
    """Reconfigurable datacenter network models and packet simulator."""


@main.command("run")
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "-o", type=click.Path(file_okay=False), default=None, help="Directory for the CSV tables.")
@click.option("--seed", type=int, default=None, help="Override the seed in the config.")
def run_cmd(config: str, out: str | None, seed: int | None) -> None:
    """Simulate one configuration. Exits with status 2 on an invariant violation."""
    cfg = load_config(config)
    if seed is not None:
        cfg = cfg.with_(seed=seed)
    bundle = run(cfg)
    if out:
        bundle.write(out)
    else:
        click.echo(bundle.tables()["summary.csv"], nl=False)
    for v in bundle.violations:
        click.echo(f"invariant violated: {v}", err=True)
    if bundle.violations:
        sys.exit(2)


@main.command()
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "-o", default=None, help="Aggregate CSV (stdout if omitted).")
@click.option("--heatmap", default=None, help="Also write a config x share goodput table here.")
@click.option("--workers", type=int, default=None, help="Parallel runs (default from the manifest).")
def sweep(manifest: str, out: str | None, heatmap: str | None, workers: int | None) -> None:
    """Run a (configuration, share, seed) grid and aggregate over seeds."""
    results = run_manifest(load_manifest(manifest), workers=workers)
    _emit(results_csv(results), out)
    if heatmap:
        Path(heatmap).write_text(heatmap_csv(results))
    failed = [r for r in results if not r.ok]
    for r in failed:
        click.echo(f"cell {r.name} share={r.share} failed: {r.error}", err=True)
    if failed:
        sys.exit(1)


@main.command("dct-map")
@click.option("--n", type=int, default=64, show_default=True)
@click.option("--m", type=int, default=20, show_default=True)
@click.option("--grid", type=float, default=0.05, show_default=True, help="Step of the L/r axis.")
@click.option("--u-step", type=float, default=0.1, show_default=True, help="Step of the uniform share axis.")
@click.option("--rd", type=float, default=10e-3, show_default=True, help="Demand-aware reconfiguration time in seconds.")
@click.option("--eta", type=float, default=0.98, show_default=True)
@click.option("--r", "rate", type=float, default=10e9, show_default=True)
@click.option("--alg", type=click.Choice([a.value for a in MixAlg]), default="a_ver", show_default=True)
@click.option("--formula-variant", is_flag=True, help="Add both closed forms of the horizontal split as extra columns.")
@click.option("--out", "-o", default=None)
def dct_map_cmd(n, m, grid, u_step, rd, eta, rate, alg, formula_variant, out) -> None:
    """Best network per (uniform share, load) cell of the synthetic model.

    Columns: u, load, region, dct_da, dct_rot, dct_mix, boundary, and with
    --formula-variant also dct_ahor_prose, dct_ahor_displayed."""
    params = SystemParams.with_eta(eta, r=rate, R_d=rd, n=n)
    us = _grid(u_step, 1.0 - u_step, u_step)
    xs = _grid(grid, 1.0 - grid, grid)
    dm = dct_map(us, xs, n, m, params, alg)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["u", "load", "region", "dct_da", "dct_rot", "dct_mix", "boundary"]
    w.writerow(header + (["dct_ahor_prose", "dct_ahor_displayed"] if formula_variant else []))
    for u, x, region, da, rot, mix in dm.rows():
        row = [repr(u), repr(x), region, repr(float(da)), repr(float(rot)), repr(float(mix)), repr(dm.boundary)]
        if formula_variant:
            row += [repr(dct_ahor(n, m, u, x * rate, params, v)) for v in ("prose", "displayed")]
        w.writerow(row)
    _emit(buf.getvalue(), out)


@main.command()
@click.argument("matrix", type=click.Path(exists=True, dir_okay=False))
@click.option("--stop-fraction", type=float, default=0.0, show_default=True)
@click.option("--cutoff", type=click.Choice([c.value for c in CutoffRule]), default="none", show_default=True)
@click.option("--rd", type=float, default=1e-3, show_default=True)
@click.option("--eta", type=float, default=0.98, show_default=True)
@click.option("--r", "rate", type=float, default=10e9, show_default=True)
@click.option("--out", "-o", default=None)
def decompose(matrix, stop_fraction, cutoff, rd, eta, rate, out) -> None:
    """Decompose a demand matrix and split it between the two networks.

    Columns: index, alpha, perm (space separated targets), net. A final row
    with index "residual" carries the undecomposed volume."""
    M = read_matrix_csv(matrix)
    params = SystemParams.with_eta(eta, r=rate, R_d=rd, n=M.n)
    dec = bvn_decompose(M, stop_fraction, cutoff)
    part, _ = greedy_mixnet(M, params, decomposition=dec)
    da_ids = {id(p) for p in part.p_da}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "alpha", "perm", "net"])
    for i, p in enumerate(dec.perms):
        w.writerow([i, repr(float(p.alpha)), " ".join(str(int(v)) for v in p.perm), "da" if id(p) in da_ids else "rot"])
    w.writerow(["residual", repr(float(dec.residual.total)), "", ""])
    _emit(buf.getvalue(), out)


@main.command("trace-dct")
@click.argument("trace", type=click.Path(exists=True, dir_okay=False))
@click.option("--n", type=int, required=True, help="Number of ToRs.")
@click.option("--k", "hosts_per_rack", type=int, required=True, help="Hosts per ToR.")
@click.option("--window", type=float, default=0.05, show_default=True)
@click.option("--ls", "L_s", type=float, default=0.05, show_default=True, help="Volume fraction left to the static network.")
@click.option("--rd", type=float, default=1e-3, show_default=True)
@click.option("--eta", type=float, default=0.98, show_default=True)
@click.option("--r", "rate", type=float, default=10e9, show_default=True)
@click.option("--out", "-o", default=None)
def trace_dct(trace, n, hosts_per_rack, window, L_s, rd, eta, rate, out) -> None:
    """Per-window DCT of GMN, A_hor, da-net and rotor-net for a flow trace.

    Columns: window, gmn, ahor, da, rot, gmn_da_part, gmn_rot_part,
    volume_bits, factor, region."""
    flows = read_trace(Path(trace).read_text())
    recs = [TraceRecord(f.arrival, f.src // hosts_per_rack, f.dst // hosts_per_rack, 8.0 * f.size, f.tag.value) for f in flows]
    params = SystemParams.with_eta(eta, r=rate, R_d=rd, n=n)
    rows = trace_pipeline(recs, n, window, L_s, params)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["window", "gmn", "ahor", "da", "rot", "gmn_da_part", "gmn_rot_part", "volume_bits", "factor", "region"])
    for r in rows:
        w.writerow([r.index] + [repr(float(v)) for v in (r.gmn, r.ahor, r.da, r.rot, r.gmn_da_part, r.gmn_rot_part, r.volume, r.factor)] + [r.region()])
    _emit(buf.getvalue(), out)


@main.command("gen-trace")
@click.option("--n", type=int, default=16, show_default=True)
@click.option("--k", "hosts_per_rack", type=int, default=4, show_default=True)
@click.option("--load", type=float, default=0.4, show_default=True)
@click.option("--share", type=float, default=0.7, show_default=True)
@click.option("--cdf", default="datamining", show_default=True, help="Built-in name or CSV path.")
@click.option("--r", "rate", type=float, default=100e6, show_default=True)
@click.option("--duration", type=float, default=0.1, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "-o", default=None)
def gen_trace(n, hosts_per_rack, load, share, cdf, rate, duration, seed, out) -> None:
    """Synthetic flow trace. Columns: arrival_s, src_host, dst_host, size_bytes, tag."""
    flows = generate(load, share, load_cdf(cdf), n, hosts_per_rack, rate, duration, seed)
    _emit(write_trace(flows), out)


if __name__ == "__main__":
    main()
