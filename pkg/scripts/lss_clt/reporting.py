"""
Output files. Every file carries the package version, config hash and seed.
"""
import json
import os

import matplotlib
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
import xarray as xr

from . import __version__
from .fixed_point import stieltjes_transform

# fixed SVG element ids so identical runs give identical files
matplotlib.rcParams["svg.hashsalt"] = "lss-clt"


def provenance(config_hash, seed=None):
    return {"version": __version__, "config_hash": config_hash, "seed": None if seed is None else int(seed)}


def write_csv(frame, path, config_hash, seed=None):
    """CSV with '# key=value' header lines; read back with pandas.read_csv(path, comment='#')."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as f:
        for key, value in provenance(config_hash, seed).items():
            f.write(f"# {key}={value}\n")
        frame.to_csv(f, index=False, float_format="%.17g")
    return path


def write_json(data, path, config_hash, seed=None):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    document = {"meta": provenance(config_hash, seed)}
    document.update(data)
    with open(path, "w") as f:
        json.dump(document, f, indent=2, sort_keys=True, default=_json_default)
    return path


def read_json(path):
    with open(path, "r") as f:
        return json.load(f)


def _json_default(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, complex):
        return [value.real, value.imag]
    raise TypeError(f"cannot serialise {type(value).__name__}")


def solutions_frame(model, rows):
    """
    One row per evaluation point.

    rows holds (z, solution or None, error message or None) triples.
    """
    records = []
    for z, sol, message in rows:
        record = {"z_re": z.real, "z_im": z.imag, "converged": False, "iterations": 0,
                  "residual": np.nan, "m_re": np.nan, "m_im": np.nan, "error": message or ""}
        if sol is not None:
            m = stieltjes_transform(model, sol)
            record.update({"converged": bool(sol.converged), "iterations": sol.iterations,
                           "residual": sol.residual, "m_re": m.real, "m_im": m.imag})
            for r, value in enumerate(sol.g1, 1):
                record[f"g1_{r}_re"], record[f"g1_{r}_im"] = value.real, value.imag
            for r, value in enumerate(sol.g2, 1):
                record[f"g2_{r}_re"], record[f"g2_{r}_im"] = value.real, value.imag
        records.append(record)
    return pd.DataFrame(records)


def replicate_frame(result):
    """Columns replicate, seed, lss_1..l, std_1..l."""
    frame = pd.DataFrame({"replicate": np.arange(result.replicates), "seed": result.seeds.astype(np.uint64)})
    for index in range(len(result.labels)):
        frame[f"lss_{index + 1}"] = result.lss[:, index]
    for index in range(len(result.labels)):
        frame[f"std_{index + 1}"] = result.standardized[:, index]
    return frame


def write_replicate_cube(values, labels, seeds, path, config_hash, seed=None, name="lss"):
    """Replicate-by-statistic cube as NetCDF3 (scipy engine)."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    cube = xr.DataArray(np.asarray(values, dtype=float), dims=("replicate", "statistic"),
                        coords={"replicate": np.arange(len(values)), "statistic": list(labels)},
                        name=name)
    ds = cube.to_dataset()
    # NetCDF3 has no 64-bit unsigned type
    ds["seed"] = ("replicate", np.array([str(int(s)) for s in seeds], dtype=str))
    ds.attrs.update({key: str(value) for key, value in provenance(config_hash, seed).items()})
    ds.to_netcdf(path, engine="scipy")
    return path


def plot_histograms(samples, labels, output_dir, prefix, reference=None, reference_label=None):
    """
    One SVG histogram per column with Freedman-Diaconis bins.

    Args:
        samples: Array (replicates, columns)
        labels: Column labels
        output_dir: Target directory
        prefix: File name prefix
        reference: Optional per-column vertical reference values
        reference_label: Legend text for the reference lines

    Returns:
        List of written paths
    """
    os.makedirs(output_dir, exist_ok=True)
    samples = np.asarray(samples, dtype=float)
    paths = []
    for index, label in enumerate(labels):
        column = samples[:, index]
        column = column[np.isfinite(column)]
        if column.size < 2:
            continue
        bins = np.histogram_bin_edges(column, bins="fd")
        plt.figure(figsize=(7, 5))
        plt.hist(column, bins=bins, color="lightblue", edgecolor="black", alpha=0.8)
        if reference is not None:
            plt.axvline(reference[index], color="red", linestyle="--", linewidth=2,
                        label=reference_label or "reference")
            plt.legend(fontsize=11, loc="best")
        plt.xlabel(label, fontsize=14)
        plt.ylabel("Count", fontsize=14)
        plt.title(f"{label} over {column.size} replicates", fontsize=14, fontweight="bold")
        plt.grid(True, alpha=0.3)
        plt.tight_layout()
        safe = "".join(ch if ch.isalnum() else "_" for ch in label)
        path = os.path.join(output_dir, f"{prefix}_{index + 1}_{safe}.svg")
        plt.savefig(path, format="svg", metadata={"Date": None})
        plt.close()
        paths.append(path)
    return paths


def plot_density(x_grid, density, path, title):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    plt.figure(figsize=(8, 5))
    plt.plot(x_grid, density, color="black", linewidth=1.5)
    plt.xlabel("x", fontsize=14)
    plt.ylabel("density", fontsize=14)
    plt.title(title, fontsize=14, fontweight="bold")
    plt.grid(True, alpha=0.3)
    plt.ylim(bottom=0)
    plt.tight_layout()
    plt.savefig(path, format="svg", metadata={"Date": None})
    plt.close()
    return path


def format_table1(report):
    """Aligned text mirroring the two-row bias / 2SD layout."""
    names = ("tau1", "tau2", "tau_e")
    header = f"{'':<12}" + "".join(f"{'bias ' + n:>12}" for n in names) + "".join(f"{'2SD ' + n:>12}" for n in names)
    lines = [header, "-" * len(header)]
    for row, bias, spread in (("Empirical", report.empirical_bias, report.empirical_two_sd),
                              ("Theoretical", report.theoretical_bias, report.theoretical_two_sd)):
        cells = [("undefined" if not np.isfinite(v) else f"{v:.4f}") for v in np.concatenate([bias, spread])]
        lines.append(f"{row:<12}" + "".join(f"{cell:>12}" for cell in cells))
    lines.append("")
    lines.append(f"tau = {report.tau.as_array().tolist()}, replicates = {len(report.seeds)}, "
                 f"failed inversions = {report.failures}")
    return "\n".join(lines)


def write_table1(report, output_dir, config_hash, seed=None, histograms=False):
    """Write the report table (CSV and text), replicate records, CLT summary and histograms."""
    os.makedirs(output_dir, exist_ok=True)
    paths = [write_csv(report.to_frame().reset_index(), os.path.join(output_dir, "table1.csv"), config_hash, seed)]

    text_path = os.path.join(output_dir, "table1.txt")
    with open(text_path, "w") as f:
        for key, value in provenance(config_hash, seed).items():
            f.write(f"# {key}={value}\n")
        f.write(format_table1(report) + "\n")
    paths.append(text_path)

    records = pd.DataFrame({"replicate": np.arange(len(report.seeds)), "seed": report.seeds.astype(np.uint64)})
    for index, name in enumerate(("tr_B", "tr_B2", "tr_D")):
        records[name] = report.moments[:, index]
    for index, name in enumerate(("tau1_hat", "tau2_hat", "tau_e_hat")):
        records[name] = report.estimates[:, index]
    paths.append(write_csv(records, os.path.join(output_dir, "table1_replicates.csv"), config_hash, seed))
    paths.append(write_json({"clt_summary": report.clt.to_dict(), "provenance": report.provenance,
                             "family_sizes": report.family_sizes},
                            os.path.join(output_dir, "table1_summary.json"), config_hash, seed))
    if histograms:
        paths += plot_histograms(report.estimates, ["tau1_hat", "tau2_hat", "tau_e_hat"],
                                 output_dir, "tau_hat", reference=report.tau.as_array(),
                                 reference_label="true value")
    return paths
