"""Command-line entry point.

Every run writes its outputs plus ``manifest.json`` (command, resolved
config, package version, kernel backend and SHA-256 of every output) into
the output directory.  ``qpsplit rerun --manifest m.json --out d`` repeats a
run; identical manifests give bit-identical files.

Exit codes: 0 success, 2 config error, 3 numerical non-convergence,
4 I/O error.
"""

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__, config as cfgmod
from ._backend import backend_name, set_num_threads
from .circuit import BasisSpec, CircuitParams, qubit_gap, split_map_vs_junctions, transitions_at, omega20
from .errors import ConfigError, ConvergenceError, QpsplitError
from .extract import Ridge, RidgeConfig, RidgeSet, extract_ridges, extract_split_series, split_histogram
from .fitting import Constraint, fit_circuit_two_parity, fit_rabi_two_delta
from .noise import ChargeSeries, compute_psd, fill_gaps, fit_one_over_f, fold_to_range, invert_split_to_charge
from .rabi import RabiParams, branch_name, rabi_branches
from .synth import (BackgroundNoise, CircuitDispersion, CosineDispersion, TelegraphParams, load as load_npz,
                    save as save_npz, synth_spectrogram, synth_trace_stack)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("qpsplit")


# ---------------------------------------------------------------------------
# small I/O helpers
# ---------------------------------------------------------------------------


class Run:
    def __init__(self, out, fmt, workers):
        self.out, self.fmt, self.workers = out, fmt, workers
        self.files = []
        os.makedirs(out, exist_ok=True)

    def path(self, name):
        self.files.append(name)
        return os.path.join(self.out, name)

    def table(self, name, columns, rows, units):
        """Write rows as CSV (with a units comment) or JSON, depending on --format."""
        if self.fmt == "json":
            data = {"units": units, "columns": columns, "rows": [list(map(_plain, r)) for r in rows]}
            with open(self.path(name + ".json"), "w") as fh:
                json.dump(data, fh, indent=1, sort_keys=True)
                fh.write("\n")
        else:
            with open(self.path(name + ".csv"), "w") as fh:
                fh.write(f"# units: {units}\n")
                fh.write(",".join(columns) + "\n")
                for r in rows:
                    fh.write(",".join(_fmt(v) for v in r) + "\n")

    def text(self, name, body):
        with open(self.path(name), "w") as fh:
            fh.write(body)


def _plain(v):
    if isinstance(v, (np.floating, float)):
        return float(v) if np.isfinite(v) else None
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def read_table(path):
    """Read a CSV or JSON table written by :meth:`Run.table` into a dict of columns."""
    path = str(path)
    if path.endswith(".json"):
        with open(path) as fh:
            d = json.load(fh)
        cols = list(zip(*d["rows"])) if d["rows"] else [[] for _ in d["columns"]]
        return {c: np.array([np.nan if v is None else v for v in col]) for c, col in zip(d["columns"], cols)}
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    header = lines[0].strip().split(",")
    rows = [ln.strip().split(",") for ln in lines[1:] if ln.strip()]
    out = {}
    for i, c in enumerate(header):
        col = [r[i] for r in rows]
        try:
            out[c] = np.array(col, dtype=float)
        except ValueError:
            out[c] = np.array(col)
    return out


def _grid(g):
    return np.linspace(float(g["start"]), float(g["stop"]), int(g["num"]))


def _basis(cfg):
    return BasisSpec(**cfg["basis"])


def _circuit(cfg):
    return CircuitParams.from_config(cfg["circuit"])


def _rabi(cfg):
    r = cfg["rabi"]
    return RabiParams(delta=r["delta_ghz"], g=r["g_ghz"], omega_r=r["omega_r_ghz"], n_fock=r["n_fock"])


def _input(cfg, key):
    try:
        return cfg["inputs"][key]
    except KeyError:
        raise ConfigError(f"missing required key 'inputs.{key}'") from None


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_spectrum(cfg, run):
    s = cfg["spectrum"]
    grid = _grid(s["grid"])
    pairs = [tuple(p) for p in s["pairs"]]
    if s["model"] == "rabi":
        p = _rabi(cfg)
        families = {"blue": p}
        if cfg["rabi"]["delta_green_ghz"] is not None:
            families["green"] = replace(p, delta=cfg["rabi"]["delta_green_ghz"])
        for fam, pf in families.items():
            for b in rabi_branches(pf, grid, pairs):
                name = b.branch if len(families) == 1 else f"{fam}_{b.branch}"
                run.table(name, ["branch", "epsilon_ghz", "freq_ghz"],
                          [(name, e, f) for e, f in zip(b.epsilon, b.freq)], "epsilon and freq in GHz")
    elif s["model"] == "circuit":
        p, basis = _circuit(cfg), _basis(cfg)
        for k, charges in enumerate(s["charges"]):
            fam = ("blue", "green")[k] if len(s["charges"]) <= 2 else f"q{k}"
            vals = np.array([transitions_at(p, tuple(charges), ph, basis, pairs) for ph in grid])
            for j, (a, b) in enumerate(pairs):
                name = f"{fam}_{branch_name(a, b)}"
                run.table(name, ["branch", "phi_ext", "freq_ghz"],
                          [(name, ph, f) for ph, f in zip(grid, vals[:, j])],
                          f"phi_ext in flux quanta, freq in GHz, charges {list(charges)} e")
    else:
        raise ConfigError(f"spectrum.model must be 'rabi' or 'circuit', got {s['model']!r}")


def cmd_chargesweep(cfg, run):
    c = cfg["chargesweep"]
    p, basis = _circuit(cfg), _basis(cfg)
    island = int(c["island"])
    if island not in (2, 3):
        raise ConfigError("chargesweep.island must be 2 or 3")
    rows = []
    for q in _grid(c["grid"]):
        charges = [0.0, 0.0, 0.0, 0.0]
        charges[island - 1] = q
        rows.append((q, qubit_gap(p, charges, basis), omega20(p, charges, c["phi_ext"], basis)))
    run.table(f"chargesweep_island{island}", ["q_e", "delta_ghz", "omega20_ghz"], rows,
              f"q in e on island {island}, frequencies in GHz, omega20 at phi_ext={c['phi_ext']}")
    if c["split_map"]:
        sm = c["split_map"]
        res = split_map_vs_junctions(p, sm["alphas"], sm["us"], island=sm.get("island", island),
                                     basis=basis, workers=run.workers)
        rows = [(a, u, res.values[i, j] * 1e3) for i, a in enumerate(res.alphas) for j, u in enumerate(res.us)]
        run.table("split_map", ["alpha", "u", "split_mhz"], rows, "split of the qubit gap in MHz")


def _dispersion(cfg):
    d = cfg["synth"]["dispersion"]
    if d["kind"] == "cosine":
        return CosineDispersion(d["f_mid_ghz"], d["width_max_ghz"])
    if d["kind"] == "circuit":
        return CircuitDispersion(_circuit(cfg), d["phi_ext"], _basis(cfg))
    raise ConfigError(f"synth.dispersion.kind must be 'cosine' or 'circuit', got {d['kind']!r}")


def _synth_stack(cfg):
    s = cfg["synth"]
    disp = _dispersion(cfg)
    tel = TelegraphParams(**s["telegraph"]) if s["telegraph"] else None
    from .synth import default_freq_axis
    freq = default_freq_axis(disp, s["linewidth_ghz"], s["freq_step_ghz"])
    return synth_trace_stack(disp, s["n_traces"], s["interval_s"], BackgroundNoise(**s["background"]), tel,
                             freq, s["linewidth_ghz"], s["noise_sigma"], cfg["seed"])


def cmd_synth(cfg, run):
    s = cfg["synth"]
    if s["kind"] == "tracestack":
        st = _synth_stack(cfg)
        save_npz(st, run.path("stack.npz"))
        run.table("truth", ["t_s", "q_g2_e", "parity", "odd_fraction", "both_visible"],
                  zip(st.trace_times, st.q_g2, st.parity, st.odd_fraction, st.both_visible.astype(int)),
                  "t in s, q in e")
        return st
    if s["kind"] == "spectrogram":
        sg = s["spectrogram"]
        bias = _grid(sg["bias"])
        f = sg["freq"]
        freq = np.arange(f["start"], f["stop"] + 0.5 * f["step"], f["step"])
        p = _rabi(cfg)
        branches = rabi_branches(p, bias)
        if cfg["rabi"]["delta_green_ghz"] is not None:
            branches += rabi_branches(replace(p, delta=cfg["rabi"]["delta_green_ghz"]), bias, pairs=((0, 2),))
        spec = synth_spectrogram(branches, freq, s["linewidth_ghz"], s["noise_sigma"], cfg["seed"])
        save_npz(spec, run.path("spectrogram.npz"))
        return spec
    raise ConfigError(f"synth.kind must be 'tracestack' or 'spectrogram', got {s['kind']!r}")


def _ridge_cfg(cfg):
    e = cfg["extract"]
    return RidgeConfig(e["smooth_sigma"], e["k_mad"], e["max_jump_ghz"], e["min_len"], e["max_gap"])


def _write_splits(run, ss, cfg):
    run.table("split_series", ["t_s", "upper_ghz", "lower_ghz", "mid_ghz", "n_peaks"],
              zip(ss.times, ss.upper, ss.lower, ss.mid, ss.n_peaks), "t in s, freq in GHz")
    if np.any(ss.two_peak):
        h = split_histogram(ss, cfg["extract"]["bin_width_mhz"])
        run.table("split_histogram", ["bin_left_mhz", "count", "probability"],
                  zip(h.edges_mhz[:-1], h.counts, h.probability), "MHz")
        return h
    return None


def cmd_extract(cfg, run, obj=None):
    obj = obj if obj is not None else load_npz(_input(cfg, "stack"))
    if hasattr(obj, "trace_times"):
        ss = extract_split_series(obj, _ridge_cfg(cfg))
        h = _write_splits(run, ss, cfg)
        return ss, h
    rs = extract_ridges(obj, _ridge_cfg(cfg))
    rows = [(b, f, f"ridge{i}") for i, r in enumerate(rs.branches) for b, f in zip(r.bias, r.freq)]
    rows += [(b, f, "unassigned") for b, f, _ in rs.unassigned]
    run.table("ridges", ["bias", "freq_ghz", "branch"], rows, "bias as synthesized, freq in GHz")
    return rs, None


def _invert(cfg, times, width, valid):
    iv = cfg["invert"]
    if iv["mode"] == "model_lookup":
        curve = _dispersion(cfg)
        if not hasattr(curve, "split_curve"):
            raise ConfigError("model_lookup inversion needs synth.dispersion.kind = 'circuit'")
        model_curve = curve.split_curve()
    else:
        model_curve = None
    w = np.where(valid, width, 0.0)
    q = invert_split_to_charge(w, iv["width_max_ghz"], iv["mode"], model_curve, iv["tol"])
    return np.where(valid, fold_to_range(q), np.nan)


def cmd_invert(cfg, run, ss=None):
    if ss is None:
        t = read_table(_input(cfg, "splits"))
        times, width, valid = t["t_s"], t["upper_ghz"] - t["lower_ghz"], t["n_peaks"] >= 2
    else:
        times, width, valid = ss.times, ss.width, ss.two_peak
    q = _invert(cfg, times, width, valid)
    run.table("charge", ["t_s", "q_e", "valid"], zip(times, q, valid.astype(int)), "t in s, q in e")
    return times, q, valid


def cmd_psd(cfg, run, series=None):
    if series is None:
        t = read_table(_input(cfg, "charge"))
        series = (t["t_s"], t["q_e"], t["valid"] > 0)
    times, q, valid = series
    if times.size < 2:
        raise ConfigError("charge series needs at least two samples")
    dt = float(times[1] - times[0])
    ps = cfg["psd"]
    segs = fill_gaps(times, q, valid, dt, ps["max_gap"])
    psd = compute_psd(segs, ps["segment_len"], ps["overlap"])
    fit_one_over_f(psd, ps["band_hz"])
    run.table("psd", ["f_hz", "s_q_e2_per_hz"], zip(psd.freqs, psd.s_q), "f in Hz, S_q in e^2/Hz")
    run.text("fit_report.txt", psd.report())
    return psd


def _ridges_from_table(path):
    t = read_table(path)
    bias_col = next(c for c in ("bias", "epsilon_ghz", "phi_ext", "bias_or_time") if c in t)
    branch_col = next(c for c in ("branch", "branch_or_flag") if c in t)
    out = []
    for lab in sorted(set(t[branch_col].tolist())):
        m = t[branch_col] == lab
        o = np.argsort(t[bias_col][m], kind="stable")
        out.append(Ridge(t[bias_col][m][o], t["freq_ghz"][m][o], np.ones(int(m.sum())), lab))
    return RidgeSet(out)


def cmd_fit(cfg, run):
    f = cfg["fit"]
    paths = _input(cfg, "ridges")
    paths = [paths] if isinstance(paths, str) else paths
    ridges = RidgeSet([r for pth in paths for r in _ridges_from_table(pth).branches])
    if f["model"] == "rabi":
        res = fit_rabi_two_delta(ridges, _rabi(cfg), cfg["rabi"]["delta_green_ghz"], tuple(f["bias_map"]),
                                 f["fit_bias_map"], f["n_starts"], cfg["seed"])
        units = {"delta_blue": "GHz", "delta_green": "GHz", "g": "GHz", "omega_r": "GHz"}
    elif f["model"] == "circuit":
        cons = [Constraint(k[:-4], v) for k, v in (f["constraints"] or {}).items()]
        res = fit_circuit_two_parity(ridges, _circuit(cfg), f["q_g2"], cons, tuple(f["free"]), f["eta_mode"],
                                     _basis(cfg), f["n_starts"], cfg["seed"])
        units = {"e_j": "GHz", "e_c": "GHz", "omega_r": "GHz", "l_r": "nH", "q_g2": "e"}
    else:
        raise ConfigError(f"fit.model must be 'rabi' or 'circuit', got {f['model']!r}")
    run.text("fit_result.txt", res.to_text())
    print(res.table(units))
    if not res.converged:
        raise ConvergenceError("fit did not converge", res.params)
    return res


def cmd_pipeline(cfg, run):
    cfg["synth"]["kind"] = "tracestack"
    st = cmd_synth(cfg, run)
    ss, h = cmd_extract(cfg, run, st)
    series = cmd_invert(cfg, run, ss)
    psd = cmd_psd(cfg, run, series)
    summary = {"gamma": psd.gamma, "s1hz_e2_per_hz": psd.s_1hz,
               "histogram_mode_mhz": None if h is None else h.mode_mhz,
               "two_peak_fraction": float(np.mean(ss.two_peak))}
    with open(run.path("summary.json"), "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return summary


COMMANDS = {
    "spectrum": cmd_spectrum, "chargesweep": cmd_chargesweep, "synth": cmd_synth, "extract": cmd_extract,
    "invert": cmd_invert, "psd": cmd_psd, "fit": cmd_fit, "pipeline": cmd_pipeline,
}


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(run, command, cfg):
    man = {
        "manifest_version": 1,
        "command": command,
        "config": cfg,
        "qpsplit_version": __version__,
        "backend": backend_name(),
        "format": run.fmt,
        "outputs": {f: _sha256(os.path.join(run.out, f)) for f in sorted(set(run.files))},
    }
    with open(os.path.join(run.out, "manifest.json"), "w") as fh:
        json.dump(man, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return man


def build_parser():
    ap = argparse.ArgumentParser(prog="qpsplit", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in list(COMMANDS) + ["rerun"]:
        sp = sub.add_parser(name)
        if name == "rerun":
            sp.add_argument("--manifest", required=True)
        else:
            sp.add_argument("--config", required=True)
            sp.add_argument("--seed", type=int)
        sp.add_argument("--out", required=True)
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--format", choices=("csv", "json"))
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "rerun":
            with open(args.manifest) as fh:
                man = json.load(fh)
            command = man["command"]
            cfg = cfgmod.resolve(man["config"], command)
            fmt = args.format or man.get("format", "csv")
        else:
            command = args.command
            cfg = cfgmod.load(args.config, command, args.seed)
            fmt = args.format or "csv"
        set_num_threads(args.threads)
        run = Run(args.out, fmt, args.threads)
        resolved = json.loads(json.dumps(cfg))
        COMMANDS[command](cfg, run)
        write_manifest(run, command, resolved)
    except (ConfigError, KeyError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except QpsplitError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
