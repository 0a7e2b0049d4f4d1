"""Command-line front end: ``divacancy <group> <action> [options]``.

Every run reads an optional ``key = value`` config file, applies
``--set key=value`` overrides, writes its result to ``--out`` (or stdout)
and, when writing to a file, a JSON manifest next to it. Identical
configuration and seed give byte-identical results; the wall time lives
only in the manifest.
"""

import argparse
import hashlib
import json
import os
import platform
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .constants import (CW_POWERS_MW, D_GROUND, EXCITED_PRESETS, HYPERFINE_EXPERIMENT,
                        HYPERFINE_THEORY, NV_LIKE, TAU_MS0, TAU_MS1, POLARIZATION, ZPL_THZ)
from .excited import ExcitedStateParams, StrainVector, TrackingError, spin_flip_probability, strain_fan
from .ground import (GroundStateParams, HyperfineTensor, fit_decay, fit_hyperfine, fringe_decay,
                     hahn_echo_eseem, odmr_lines, rabi_fit, synthetic_resonances)
from .inference.linewidth import fit_linewidth_temperature
from .inference.lsq import FitError
from .inference.ple import EnsemblePleDataset, PleDefect, fit_ple_ensemble, synthetic_ensemble
from .io import MeasurementTable, TableError, emit_table, parse_table, write_csv
from .optical import (PlTrace, RateParams, background_correct_g2, extract_biexponential, g2_curve,
                      global_rate_fit, ground_state, pulsed_pl, saturation_fit, synthetic_cw_bundle)

DEFAULT_SEED = 20140521
FORMATS = ("csv", "json")


class ConfigError(ValueError):
    """Bad command line or configuration file (exit status 2)."""


@dataclass
class RunConfig:
    command: tuple                     # (group, action)
    inputs: list = field(default_factory=list)
    out: str | None = None
    seed: int = DEFAULT_SEED
    format: str | None = None
    overrides: dict = field(default_factory=dict)


@dataclass
class Table:
    header: list
    rows: list


# ------------------------------------------------------------ parameters

def _floats(s):
    return [float(x) for x in str(s).split(",") if x.strip()]


def _bool(s):
    if isinstance(s, bool):
        return s
    t = str(s).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"cannot read {s!r} as a boolean")


def _coerce(default, raw):
    if isinstance(raw, str):
        if isinstance(default, bool):
            return _bool(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float) or default is None:
            return float(raw)
    return raw


def _resolve(spec, overrides):
    unknown = sorted(set(overrides) - set(spec))
    if unknown:
        raise ConfigError(f"unknown parameter(s): {', '.join(unknown)}; accepted: {', '.join(sorted(spec))}")
    out = {}
    for k, default in spec.items():
        if k in overrides:
            try:
                out[k] = _coerce(default, overrides[k])
            except ValueError as exc:
                raise ConfigError(f"parameter {k}: {exc}") from None
        else:
            out[k] = default
    return out


def _excited(p):
    if p["form"] not in EXCITED_PRESETS:
        raise ConfigError(f"form must be one of {', '.join(EXCITED_PRESETS)}, got {p['form']!r}")
    preset = EXCITED_PRESETS[p["form"]]
    vals = {k: (preset[k] if p.get(k) is None else p[k]) for k in ("lambda_z", "D_es", "Delta1", "Delta2")}
    return ExcitedStateParams(**vals)


def _tensor(nucleus, source):
    table = {"theory": HYPERFINE_THEORY, "experiment": HYPERFINE_EXPERIMENT}
    if source not in table:
        raise ConfigError(f"tensor must be 'theory' or 'experiment', got {source!r}")
    if nucleus not in table[source]:
        raise ConfigError(f"no {source} tensor for nucleus {nucleus!r}")
    Axx, Ayy, Azz, theta = table[source][nucleus]
    return HyperfineTensor(Axx, Ayy, Azz, theta, nucleus=nucleus)


def _form(p):
    if p["form"] not in ZPL_THZ:
        raise ConfigError(f"form must be one of {', '.join(ZPL_THZ)}, got {p['form']!r}")
    return p["form"]


def _one_input(cfg, kind):
    if len(cfg.inputs) != 1:
        raise ConfigError(f"{' '.join(cfg.command)} takes exactly one input table")
    return parse_table(cfg.inputs[0], kind)


def _noise(rng, scale, n):
    return scale * rng.standard_normal(n) if scale > 0 else np.zeros(n)


# -------------------------------------------------------------- commands

def _ple_simulate(cfg, p):
    form = _form(p)
    zpl = ZPL_THZ[form] if p["zpl_thz"] is None else p["zpl_thz"]
    Dg = D_GROUND[form] if p["D_ground"] is None else p["D_ground"]
    es = _excited(p)
    if p["mode"] == "fan":
        deltas = np.linspace(p["delta_min"], p["delta_max"], p["n_points"])
        fan = strain_fan(es, zpl, Dg, deltas, p["phi"])
        header = ["delta(GHz)"] + [f"{lab}(THz)" for lab in fan.labels]
        return Table(header, [[d, *f] for d, f in zip(fan.deltas, fan.frequencies)])
    if p["mode"] == "ensemble":
        params = dict(lambda_z=es.lambda_z, D_es=es.D_es, Delta1=es.Delta1, Delta2=es.Delta2)
        ds, _ = synthetic_ensemble(form, p["n_defects"], seed=cfg.seed, noise_mhz=p["noise_mhz"],
                                   params=params, strain_range=(p["strain_min"], p["strain_max"]),
                                   zpl_thz=zpl, D_ground=Dg)
        cols = {"defect_id": [], "form": [], "frequency": [], "sigma": [], "mw_on": []}
        for d in ds.defects:
            for f, s, on in zip(d.frequencies, d.sigma, d.mw_on):
                cols["defect_id"].append(d.defect_id)
                cols["form"].append(d.form)
                cols["frequency"].append(f)
                cols["sigma"].append(s)
                cols["mw_on"].append(on)
        return MeasurementTable("ple-lines", cols, {"form": form, "seed": cfg.seed})
    raise ConfigError(f"ple simulate mode must be 'fan' or 'ensemble', got {p['mode']!r}")


def _ple_fit(cfg, p):
    t = _one_input(cfg, "ple-lines")
    forms = sorted(set(t["form"]))
    form = p["form"] or (forms[0] if len(forms) == 1 else None)
    if form is None:
        raise ConfigError(f"table mixes forms {forms}; select one with --set form=")
    p["form"] = form
    _form(p)
    order, groups = [], {}
    for i, d in enumerate(t["defect_id"]):
        if t["form"][i] != form:
            continue
        if d not in groups:
            groups[d] = []
            order.append(d)
        groups[d].append(i)
    defects = [PleDefect(d, form, t["frequency"][idx], t["sigma"][idx], t["mw_on"][idx])
               for d, idx in ((d, np.array(groups[d])) for d in order)]
    post = fit_ple_ensemble(EnsemblePleDataset(defects), form, seed=cfg.seed, n_steps=p["n_steps"],
                            zpl_thz=p["zpl_thz"], D_ground=p["D_ground"])
    names = ["lambda_z", "D_es", "Delta1", "Delta2", "zpl"] if not p["strains"] else None
    rep = post.report(level=p["level"], names=names)
    rep["units"] = {"lambda_z": "GHz", "D_es": "GHz", "Delta1": "GHz", "Delta2": "GHz",
                    "zpl": "GHz offset from zpl_nominal_thz", "delta_i": "GHz"}
    rep["diagnostics"] = post.diagnostics
    return rep


def _odmr_params(p):
    return GroundStateParams(D=p["D"], B_mag=p["B_mag"], B_theta=p["B_theta"], B_phi=p["B_phi"])


def _odmr_lines(cfg, p):
    hf = None if p["nucleus"] == "none" else _tensor(p["nucleus"], p["tensor"])
    if p["mode"] == "lines":
        lines = odmr_lines(_odmr_params(p), [hf] if hf else [], min_strength=p["min_strength"])
        return Table(["frequency(GHz)", "strength"], [list(x) for x in lines])
    if p["mode"] != "scan":
        raise ConfigError(f"odmr lines mode must be 'lines' or 'scan', got {p['mode']!r}")
    if hf is None:
        raise ConfigError("a field scan needs a nucleus")
    gp = GroundStateParams(D=p["D"], B_phi=p["B_phi"])
    b, th, f = synthetic_resonances(gp, hf, _floats(p["fields"]), _floats(p["angles"]),
                                    noise_mhz=p["noise_mhz"], min_strength=p["scan_min_strength"],
                                    seed=cfg.seed)
    n = f.size
    cols = {"B_mag": b, "B_theta": th, "B_phi": np.full(n, p["B_phi"]), "frequency": f,
            "sigma": np.full(n, p["sigma_mhz"])}
    return MeasurementTable("odmr-resonances", cols, {"nucleus": p["nucleus"], "seed": cfg.seed})


def _odmr_fit(cfg, p):
    t = _one_input(cfg, "odmr-resonances")
    tie = {"auto": None, "yes": True, "no": False}.get(p["tie_ayy"], "bad")
    if tie == "bad":
        raise ConfigError(f"tie_ayy must be auto, yes or no, got {p['tie_ayy']!r}")
    fit = fit_hyperfine(t["B_mag"], t["B_theta"], t["frequency"], t["sigma"], B_phi=t.get("B_phi"),
                        params=GroundStateParams(D=p["D"]), nucleus=p["nucleus"], tie_ayy=tie,
                        level=p["level"])
    out = fit.as_dict()
    out["chi2"] = float(fit.result.chi2)
    out["units"] = {"Axx": "MHz", "Ayy": "MHz", "Azz": "MHz", "theta": "deg", "A_z": "MHz"}
    return out


def _echo_simulate(cfg, p):
    rng = np.random.default_rng(cfg.seed)
    if p["mode"] == "echo":
        gp = GroundStateParams(D=p["D"], B_mag=p["B_mag"], B_theta=p["B_theta"])
        hf = _tensor(p["nucleus"], p["tensor"])
        t_max = 2000.0 if p["t_max"] is None else p["t_max"]
        tau = np.linspace(0.0, 0.5 * t_max, p["n_points"])
        env = hahn_echo_eseem(gp, hf, p["T2"], p["n"], tau, secular=p["secular"])
        t, y = env.times, env.signal
    elif p["mode"] == "ramsey":
        t = np.linspace(0.0, 8.0 if p["t_max"] is None else p["t_max"], p["n_points"])
        y = fringe_decay(t, 1.0, p["T2star"], p["n"], p["detuning_mhz"])
    else:
        raise ConfigError(f"echo simulate mode must be 'echo' or 'ramsey', got {p['mode']!r}")
    cols = {"time": t, "signal": y + _noise(rng, p["noise"], t.size)}
    if p["noise"] > 0:
        cols["sigma"] = np.full(t.size, p["noise"])
    return MeasurementTable("time-trace", cols, {"mode": p["mode"], "seed": cfg.seed})


def _echo_fit(cfg, p):
    t = _one_input(cfg, "time-trace")
    fit = fit_decay(t["time"], t["signal"], t.get("sigma"), p["model"], level=p["level"])
    out = fit.as_dict()
    out["units"] = {"decay": "us", "frequency": "MHz"}
    return out


def _rabi_fit(cfg, p):
    t = _one_input(cfg, "time-trace")
    out = rabi_fit(t["time"], t["signal"], t.get("sigma"), level=p["level"]).as_dict()
    out["units"] = {"frequency": "MHz", "decay": "us"}
    return out


def _rate_params(p):
    return RateParams.from_lifetimes(p["tau0"], p["tau1"], p["tau_r"], G_s=p["G_s"], beta=p["beta"],
                                     bg=p["bg"], polarization=p["polarization"], pi_fidelity=p["pi_fidelity"])


def _rates_simulate(cfg, p):
    rp = _rate_params(p)
    cols = {"time": [], "signal": [], "sigma": [], "power": [], "preparation": []}
    # default windows: 600 ns CW transients, 150 ns pulsed decays
    pulsed = p["mode"] == "pulsed"
    t_max = (150.0 if pulsed else 600.0) if p["t_max"] is None else p["t_max"]
    dt = (0.5 if pulsed else 2.0) if p["dt"] is None else p["dt"]
    t = np.arange(0.0, t_max, dt)
    if p["mode"] == "cw":
        traces = synthetic_cw_bundle(rp, _floats(p["powers"]), t, noise=p["noise"], seed=cfg.seed)
    elif pulsed:
        rng = np.random.default_rng(cfg.seed)
        traces = []
        for prep in ("ms0", "ms1"):
            clean = pulsed_pl(rp, ground_state(rp, prep)[0], t).signal
            sig = np.maximum(p["noise"] * np.abs(clean), 1e-12)
            noisy = clean + sig * rng.standard_normal(t.size) if p["noise"] > 0 else clean
            traces.append(PlTrace(t, noisy, preparation=prep, sigma=sig))
        del cols["power"]
    else:
        raise ConfigError(f"rates simulate mode must be 'cw' or 'pulsed', got {p['mode']!r}")
    for tr in traces:
        cols["time"].extend(tr.times)
        cols["signal"].extend(tr.signal)
        cols["sigma"].extend(tr.sigma)
        cols["preparation"].extend([tr.preparation] * tr.times.size)
        if "power" in cols:
            cols["power"].extend([tr.power] * tr.times.size)
    return MeasurementTable("pl-trace", cols, {"mode": p["mode"], "seed": cfg.seed})


def _traces(t, t_min=None, t_max=None):
    """Group pl-trace rows into traces; rows outside [t_min, t_max] ns are masked."""
    keys, groups = [], {}
    power = t.get("power")
    lo = -np.inf if t_min is None else t_min
    hi = np.inf if t_max is None else t_max
    for i, prep in enumerate(t["preparation"]):
        if not lo <= t["time"][i] <= hi:
            continue
        k = (None if power is None else float(power[i]), prep)
        if k not in groups:
            groups[k] = []
            keys.append(k)
        groups[k].append(i)
    out = []
    for P, prep in keys:
        idx = np.array(groups[(P, prep)])
        sig = t.get("sigma")
        out.append(PlTrace(t["time"][idx], t["signal"][idx], P, prep,
                           None if sig is None else sig[idx],
                           label=f"{P:g}mW-{prep}" if P is not None else prep))
    return out


def _rates_biexp(cfg, p):
    traces = {tr.preparation: tr for tr in _traces(_one_input(cfg, "pl-trace"), p["t_min"], p["t_max"])}
    if set(traces) != {"ms0", "ms1"} or len(traces) != 2:
        raise ConfigError("fit-biexp needs exactly one ms0 and one ms1 trace")
    res = extract_biexponential(traces["ms0"], traces["ms1"], pi_fidelity=p["pi_fidelity"], level=p["level"])
    out = res.as_dict()
    out["units"] = {"tau0": "ns", "tau1": "ns"}
    return out


def _rates_global(cfg, p):
    traces = _traces(_one_input(cfg, "pl-trace"), p["t_min"], p["t_max"])
    fit = global_rate_fit(traces, p["tau0"], p["tau1"], p["polarization"], bg=p["bg"],
                          pi_fidelity=p["pi_fidelity"], level=p["level"])
    out = fit.as_dict()
    out["units"] = {"k_r": "1/ns", "G_s": "1/ns", "beta": "1/(ns mW)", "G_isc0": "1/ns", "G_isc1": "1/ns"}
    return out


def _g2_simulate(cfg, p):
    rp = _rate_params(p)
    tau = np.linspace(0.0, p["tau_max"], p["n_points"])
    g = g2_curve(rp, p["power"], tau)
    rho = p["rho"]
    raw = rho * rho * g + (1.0 - rho * rho)
    rng = np.random.default_rng(cfg.seed)
    return MeasurementTable("g2-histogram", {"tau": tau, "g2": raw + _noise(rng, p["noise"], tau.size)},
                            {"rho": rho, "seed": cfg.seed})


def _g2_correct(cfg, p):
    t = _one_input(cfg, "g2-histogram")
    meta = dict(t.metadata)
    meta["corrected_rho"] = p["rho"]
    return MeasurementTable("g2-histogram", {"tau": t["tau"], "g2": background_correct_g2(t["g2"], p["rho"])},
                            meta)


def _linewidth_fit(cfg, p):
    t = _one_input(cfg, "linewidth-vs-T")
    fit = fit_linewidth_temperature(t["temperature"], t["width"], t.get("sigma"), exponent=p["exponent"],
                                    free_exponent=p["free_exponent"], level=p["level"])
    out = fit.as_dict()
    out["units"] = {"Gamma0": "MHz", "a": "MHz/K^n"}
    return out


def _saturation_fit(cfg, p):
    t = _one_input(cfg, "saturation")
    out = saturation_fit(t["power"], t["rate"], t.get("sigma"), level=p["level"]).as_dict()
    out["units"] = {"R_max": "kHz", "P_sat": "mW"}
    return out


def _mixing_report(cfg, p):
    es = _excited(p)
    nv = ExcitedStateParams(**NV_LIKE)
    rows = []
    for d in _floats(p["deltas"]):
        s = StrainVector(d, 0.0)
        a = spin_flip_probability(es, s, p["level"])
        b = spin_flip_probability(nv, s, p["level"])
        rows.append([d, a, b, b / a if a > 0 else float("inf")])
    return Table(["delta(GHz)", "p_flip", "p_flip_nv_like", "ratio"], rows)


_LEVEL = {"level": 0.95}
_EXC = {"form": "hh", "lambda_z": None, "D_es": None, "Delta1": None, "Delta2": None}
_RATES = {"tau0": TAU_MS0, "tau1": TAU_MS1, "tau_r": 23.0, "G_s": 20.0 / 220.0, "beta": 0.05, "bg": 0.0,
          "polarization": POLARIZATION, "pi_fidelity": 1.0}
_POWERS = ",".join(f"{x:g}" for x in CW_POWERS_MW)

# (group, action) -> (handler, parameter defaults, default output format)
COMMANDS = {
    ("ple", "simulate"): (_ple_simulate, {**_EXC, "form": "kk", "mode": "fan", "delta_min": 0.0,
                                          "delta_max": 20.0, "n_points": 81, "phi": 0.0, "zpl_thz": None,
                                          "D_ground": None, "n_defects": 10, "noise_mhz": 10.0,
                                          "strain_min": 0.5, "strain_max": 12.0}, "csv"),
    ("ple", "fit"): (_ple_fit, {"form": "", "n_steps": 2000, "zpl_thz": None, "D_ground": None,
                                "strains": False, **_LEVEL}, "json"),
    ("odmr", "lines"): (_odmr_lines, {"D": 1.336, "B_mag": 0.0, "B_theta": 0.0, "B_phi": 0.0,
                                      "nucleus": "none", "tensor": "theory", "min_strength": 1e-6,
                                      "mode": "lines", "fields": "10,50,100,150,200,250",
                                      "angles": "0,10,20,30,40,50,60,70,80", "noise_mhz": 1.0,
                                      "sigma_mhz": 1.0, "scan_min_strength": 0.2}, "csv"),
    ("odmr", "fit-hyperfine"): (_odmr_fit, {"D": 1.336, "nucleus": "13C-I", "tie_ayy": "auto", **_LEVEL},
                                "json"),
    ("echo", "simulate"): (_echo_simulate, {"mode": "echo", "D": 1.336, "B_mag": 253.0, "B_theta": 0.0,
                                            "nucleus": "29Si-IIa", "tensor": "theory", "T2": 901.0, "T2star": 1.8,
                                            "n": 2.0, "t_max": None, "n_points": 401, "detuning_mhz": 2.0,
                                            "noise": 0.0, "secular": False}, "csv"),
    ("echo", "fit"): (_echo_fit, {"model": "stretched", **_LEVEL}, "json"),
    ("rabi", "fit"): (_rabi_fit, dict(_LEVEL), "json"),
    ("rates", "simulate"): (_rates_simulate, {**_RATES, "mode": "cw", "powers": _POWERS, "t_max": None,
                                              "dt": None, "noise": 0.03}, "csv"),
    ("rates", "fit-biexp"): (_rates_biexp, {"pi_fidelity": 1.0, "t_min": None, "t_max": None, **_LEVEL}, "json"),
    ("rates", "fit-global"): (_rates_global, {"tau0": TAU_MS0, "tau1": TAU_MS1, "polarization": POLARIZATION,
                                              "bg": 0.0, "pi_fidelity": 1.0, "t_min": None, "t_max": None,
                                              **_LEVEL}, "json"),
    ("g2", "simulate"): (_g2_simulate, {**_RATES, "power": 1.0, "tau_max": 200.0, "n_points": 401,
                                        "rho": 1.0, "noise": 0.0}, "csv"),
    ("g2", "correct"): (_g2_correct, {"rho": 0.95}, "csv"),
    ("linewidth", "fit"): (_linewidth_fit, {"exponent": 5.0, "free_exponent": False, **_LEVEL}, "json"),
    ("saturation", "fit"): (_saturation_fit, dict(_LEVEL), "json"),
    ("mixing", "report"): (_mixing_report, {**_EXC, "deltas": "1,5,10", "level": "Ex"}, "csv"),
}
ALIASES = {("rates", "fit"): ("rates", "fit-global")}


# ---------------------------------------------------------------- output

def _report_rows(rep):
    params = rep.get("parameters", {})
    extra = sorted({k for v in params.values() for k in v} - {"estimate", "lo", "hi"})
    header = ["parameter", "estimate", "lo", "hi"] + extra
    rows = [[k, v["estimate"], v["lo"], v["hi"]] + [v.get(e, "") for e in extra] for k, v in params.items()]
    return header, rows


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.generic):
        return x.item()
    return x


def _dump_json(obj, fh):
    fh.write(json.dumps(_jsonable(obj), sort_keys=True, indent=2, allow_nan=True) + "\n")


def _write_result(result, fmt, fh):
    if isinstance(result, MeasurementTable):
        if fmt == "csv":
            emit_table(result, fh)
        else:
            cols = {k: v.tolist() for k, v in result.columns.items()}
            _dump_json({"kind": result.kind, "units": result.units, "columns": cols,
                        "metadata": result.metadata}, fh)
    elif isinstance(result, Table):
        if fmt == "csv":
            write_csv(fh, result.header, result.rows)
        else:
            _dump_json({"columns": result.header, "rows": result.rows}, fh)
    else:
        if fmt == "csv":
            write_csv(fh, *_report_rows(result))
        else:
            _dump_json(result, fh)


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _versions():
    import scipy
    return {"divacancy": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


# ---------------------------------------------------------------- driver

def run_command(cfg):
    """Dispatch one configured run; returns the process exit status."""
    start = time.perf_counter()
    command = ALIASES.get(tuple(cfg.command), tuple(cfg.command))
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {' '.join(cfg.command)!r}")
    handler, spec, default_fmt = COMMANDS[command]
    fmt = cfg.format or default_fmt
    if fmt not in FORMATS:
        raise ConfigError(f"format must be csv or json, got {fmt!r}")
    params = _resolve(spec, cfg.overrides)
    result = handler(cfg, params)
    if cfg.out:
        with open(cfg.out, "w", newline="", encoding="utf-8") as fh:
            _write_result(result, fmt, fh)
        manifest = {
            "command": list(command),
            "inputs": [{"path": os.path.abspath(p), "sha256": _sha256(p)} for p in cfg.inputs],
            "output": os.path.abspath(cfg.out),
            "format": fmt,
            "seed": cfg.seed,
            "overrides": {k: cfg.overrides[k] for k in sorted(cfg.overrides)},
            "parameters": params,
            "versions": _versions(),
            "wall_time_s": time.perf_counter() - start,
        }
        with open(cfg.out + ".manifest.json", "w", encoding="utf-8") as fh:
            _dump_json(manifest, fh)
    else:
        _write_result(result, fmt, sys.stdout)
    return 0


def read_config(path):
    """Parse a ``key = value`` file with ``#`` comments."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            s = line.split("#", 1)[0].strip()
            if not s:
                continue
            if "=" not in s:
                raise ConfigError(f"{path}:{n}: expected 'key = value', got {s!r}")
            k, v = (x.strip() for x in s.split("=", 1))
            if not k:
                raise ConfigError(f"{path}:{n}: empty key")
            out[k] = v
    return out


def build_parser():
    parser = argparse.ArgumentParser(prog="divacancy", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    groups = parser.add_subparsers(dest="group", metavar="GROUP", required=True)
    actions = {}
    for group, action in list(COMMANDS) + list(ALIASES):
        actions.setdefault(group, []).append(action)
    for group, acts in actions.items():
        gp = groups.add_parser(group, help=f"{group} workflows ({'|'.join(acts)})")
        sub = gp.add_subparsers(dest="action", metavar="ACTION", required=True)
        for act in acts:
            ap = sub.add_parser(act)
            ap.add_argument("inputs", nargs="*", metavar="INPUT", help="input CSV table(s)")
            ap.add_argument("--config", metavar="PATH", help="key = value configuration file")
            ap.add_argument("--seed", type=int, default=None, help=f"RNG seed (default {DEFAULT_SEED})")
            ap.add_argument("--out", metavar="PATH", help="result file; a manifest is written alongside")
            ap.add_argument("--format", choices=FORMATS, default=None)
            ap.add_argument("--set", dest="sets", action="append", default=[], metavar="KEY=VALUE",
                            help="parameter override (repeatable)")
    return parser


def config_from_args(args):
    file_cfg = read_config(args.config) if args.config else {}
    file_cfg = dict(file_cfg)
    seed = file_cfg.pop("seed", None)
    out = file_cfg.pop("out", None)
    fmt = file_cfg.pop("format", None)
    inputs = file_cfg.pop("input", None)
    overrides = dict(file_cfg)
    for s in args.sets:
        if "=" not in s:
            raise ConfigError(f"--set expects KEY=VALUE, got {s!r}")
        k, v = (x.strip() for x in s.split("=", 1))
        overrides[k] = v
    try:
        seed = args.seed if args.seed is not None else (int(seed) if seed is not None else DEFAULT_SEED)
    except ValueError:
        raise ConfigError(f"seed must be an integer, got {seed!r}") from None
    ins = list(args.inputs) or ([x.strip() for x in inputs.split(",") if x.strip()] if inputs else [])
    return RunConfig((args.group, args.action), ins, args.out or out, seed, args.format or fmt, overrides)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_from_args(args)
        return run_command(cfg)
    except ConfigError as exc:
        print(f"divacancy: error: {exc}", file=sys.stderr)
        return 2
    except (FitError, TableError, TrackingError, ValueError, OSError) as exc:
        msg = " ".join(str(exc).split())
        print(f"divacancy: error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
