"""Configuration-driven experiment runner.

Every study is a subcommand reading a TOML config and writing its reports
(JSON), tables (CSV), gnuplot-ready .dat files and a manifest.json into the
output directory.  Exit codes: 0 success, 2 config/parameter validation
error (message names the offending key), 3 numerical failure.

Reproducibility: outputs are pure functions of (config, seed); file bytes
are identical across runs (manifest wall-time aside), so a run can be
reproduced from its manifest alone.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from qmemlab import __version__
from qmemlab._errors import NumericalFailure, ParameterError
from qmemlab import bath, davies, dynamics as dyn, errormap, lattice as lat, memory


def _fail(code, message):
    print(f"error: {message}", file=sys.stderr)
    raise SystemExit(code)


def _atomic_write(path, text):
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_json(path, obj):
    _atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(v) if isinstance(v, float) else str(v)
                              for v in row))
    _atomic_write(path, "\n".join(lines) + "\n")


def _write_dat(path, comment, columns):
    lines = [f"# {comment}"]
    for row in zip(*columns):
        lines.append(" ".join(repr(float(v)) for v in row))
    _atomic_write(path, "\n".join(lines) + "\n")


def _check_keys(table, allowed, context):
    for key in table:
        if key not in allowed:
            raise ParameterError(f"unknown config key {context}.{key}")


def _load_config(path):
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ParameterError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ParameterError(f"config parse error in {path}: {exc}")


def _bath_from_config(table):
    _check_keys(table, {"kind", "amplitude", "cutoff", "beta", "exponent",
                        "csv_path", "kms_tolerance"}, "bath")
    kind = table.get("kind", bath.FLAT_KMS)
    if kind == bath.TABULATED and "csv_path" in table:
        return bath.read_tabulated_csv(table["csv_path"], table["beta"],
                                       table.get("kms_tolerance", 1e-6))
    return bath.build_spectral_density(
        kind, amplitude=table.get("amplitude"), cutoff=table.get("cutoff"),
        beta=table.get("beta"), exponent=table.get("exponent"),
        kms_tolerance=table.get("kms_tolerance", 1e-6))


def _manifest(out_dir, command, config, config_path, seed, t_start, outputs):
    digest = hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()
    man = {
        "command": command,
        "config_path": os.path.abspath(config_path),
        "config": config,
        "config_sha256": digest,
        "seed": seed,
        "versions": {"qmemlab": __version__, "numpy": np.__version__},
        "wall_time_s": time.time() - t_start,
        "outputs": sorted(outputs),
    }
    _write_json(os.path.join(out_dir, "manifest.json"), man)


def cmd_bath_audit(config, out, seed):
    _check_keys(config, {"bath", "tail", "gate"}, "(top level)")
    model = _bath_from_config(config.get("bath", {}))
    tail_cfg = config.get("tail", {})
    _check_keys(tail_cfg, {"t_min", "t_max", "r2_threshold"}, "tail")
    t_min = tail_cfg.get("t_min", 20.0 / model.cutoff * 10.0)
    t_max = tail_cfg.get("t_max", 10.0 * t_min)
    gate_cfg = config.get("gate", {})
    _check_keys(gate_cfg, {"epsilon"}, "gate")
    epsilon = gate_cfg.get("epsilon", 0.1)

    grid = bath.tail_window_grid(model.cutoff, t_min, t_max)
    corr = bath.correlation_function(model, grid)
    fit = bath.tail_fit(corr, t_min, t_max)
    report = bath.check_conditions(model,
                                   r2_threshold=tail_cfg.get("r2_threshold", 1e-3))
    bound = bath.tb_gate_time_bound(max(report.r2_constant, 1e-300),
                                    model.cutoff, epsilon)

    out_json = {
        "kms_max_violation": report.kms_max_violation,
        "r2_constant": report.r2_constant,
        "r2_satisfied": report.r2_satisfied,
        "tail_exponent": fit.exponent,
        "tail_amplitude": fit.amplitude,
        "tail_non_power_law": fit.non_power_law,
        "tau_max": bound.tau_max,
        "flags": list(report.flags),
    }
    _write_json(os.path.join(out, "bath_audit.json"), out_json)
    _write_csv(os.path.join(out, "correlation.csv"),
               ["t", "re_f", "im_f", "abs_f"],
               [(float(t), float(v.real), float(v.imag), float(abs(v)))
                for t, v in zip(corr.t_grid, corr.values)])
    _write_dat(os.path.join(out, "gate_error_floor.dat"),
               "omega  R(omega)/omega",
               (report.gate_error_floor_omega, report.gate_error_floor))
    return ["bath_audit.json", "correlation.csv", "gate_error_floor.dat"]


def cmd_kitaev_gap(config, out, seed):
    _check_keys(config, {"bath", "study"}, "(top level)")
    study = config.get("study", {})
    _check_keys(study, {"sizes", "beta", "energy_scale", "k"}, "study")
    sizes = study.get("sizes", [2, 3, 4])
    beta = study.get("beta", 1.0)
    scale = study.get("energy_scale", 1.0)
    k = study.get("k", 4)
    bath_cfg = dict(config.get("bath", {}))
    bath_cfg.setdefault("beta", beta)
    if abs(bath_cfg["beta"] - beta) > 1e-12:
        raise ParameterError("bath.beta must match study.beta")
    model = _bath_from_config(bath_cfg)
    table = davies.build_rates(model, davies.kitaev_bohr_frequencies(scale), 1.0)
    rows = []
    for size in sizes:
        lattice = lat.build_torus(int(size))
        gen = davies.build_kitaev_sector_generator(lattice, table, beta=beta,
                                                   energy_scale=scale)
        rep = davies.spectral_gap(gen, k=k)
        rows.append((int(size), gen.dimension, rep.gap, rep.method))
    _write_json(os.path.join(out, "kitaev_gap.json"),
                {"beta": beta, "energy_scale": scale,
                 "gaps": [{"L": r[0], "dimension": r[1], "gap": r[2],
                           "method": r[3]} for r in rows]})
    _write_csv(os.path.join(out, "kitaev_gap.csv"),
               ["L", "dimension", "gap", "method"], rows)
    _write_dat(os.path.join(out, "kitaev_gap.dat"), "L  gap",
               ([r[0] for r in rows], [r[2] for r in rows]))
    return ["kitaev_gap.json", "kitaev_gap.csv", "kitaev_gap.dat"]


def cmd_davies_properties(config, out, seed):
    _check_keys(config, {"bath", "systems"}, "(top level)")
    systems = config.get("systems", {})
    _check_keys(systems, {"ising_sizes", "kitaev_sizes", "betas",
                          "relaxation_initials"}, "systems")
    ising_sizes = systems.get("ising_sizes", [3, 4, 5, 6, 7, 8])
    kitaev_sizes = systems.get("kitaev_sizes", [2, 3])
    betas = systems.get("betas", [0.0, 0.5, 1.0])
    n_ini = systems.get("relaxation_initials", 20)
    bath_amp = config.get("bath", {}).get("amplitude", 1.0)
    bath_cut = config.get("bath", {}).get("cutoff", 10.0)

    rows = []
    for beta in betas:
        beta_eff = max(float(beta), 1e-12)
        model = bath.build_spectral_density(bath.FLAT_KMS, amplitude=bath_amp,
                                            cutoff=bath_cut, beta=beta_eff)
        for n in ising_sizes:
            ring = lat.build_ising_ring(int(n))
            table = davies.build_rates(model, davies.ising_bohr_frequencies(ring), 1.0)
            gen = davies.build_ising_generator(ring, table, beta=beta_eff)
            rows.append(_davies_property_row("ising-ring", int(n), float(beta),
                                             gen, n_ini, seed))
        for L in kitaev_sizes:
            torus = lat.build_torus(int(L))
            table = davies.build_rates(model, davies.kitaev_bohr_frequencies(), 1.0)
            gen = davies.build_kitaev_sector_generator(torus, table, beta=beta_eff)
            rows.append(_davies_property_row("kitaev-sector", int(L),
                                             float(beta), gen, n_ini, seed))
    _write_json(os.path.join(out, "davies_properties.json"), {"rows": rows})
    _write_csv(os.path.join(out, "davies_properties.csv"),
               ["system", "size", "beta", "stationarity", "db_residual",
                "gap", "zero_mode_simple", "d4_min_eigenvalue",
                "relaxation_tv", "relaxation_time"],
               [(r["system"], r["size"], r["beta"], r["stationarity"],
                 r["db_residual"], r["gap"], r["zero_mode_simple"],
                 r["d4_min_eigenvalue"], r["relaxation_tv"],
                 r["relaxation_time"]) for r in rows])
    return ["davies_properties.json", "davies_properties.csv"]


def _davies_property_row(system, size, beta, gen, n_ini, seed):
    db = davies.check_db_stationarity(gen)
    spec = davies.spectral_gap(gen, k=min(4, gen.dimension))
    tv, t_relax = davies.relaxation_check(gen, n_initial=n_ini, seed=seed)
    zero_simple = bool(spec.eigenvalues[0] < 1e-9 and spec.eigenvalues[1] > 1e-9)
    # D4: all eigenvalues of the symmetrized -L* are nonnegative up to
    # roundoff; the smallest computed one is the witness
    return {"system": system, "size": size, "beta": beta,
            "stationarity": db.stationarity_residual,
            "db_residual": db.db_max_residual,
            "gap": spec.gap, "zero_mode_simple": zero_simple,
            "d4_min_eigenvalue": float(spec.eigenvalues[0]),
            "relaxation_tv": tv, "relaxation_time": t_relax}


def _lifetime_cells(config, model_name, seed):
    cells_cfg = config.get("cells")
    if not cells_cfg:
        raise ParameterError("cells: at least one [[cells]] table required")
    cells = []
    for i, c in enumerate(cells_cfg):
        _check_keys(c, {"size", "beta", "observable", "n_trajectories",
                        "t_max", "sample_interval", "fit_lo", "fit_hi",
                        "mode", "energy_scale"}, f"cells[{i}]")
        for key in ("size", "beta", "observable", "t_max", "sample_interval"):
            if key not in c:
                raise ParameterError(f"cells[{i}].{key} is required")
        if c["beta"] <= 0:
            raise ParameterError(f"cells[{i}].beta must be > 0")
        cells.append(memory.StudyCell(
            model=model_name, size=int(c["size"]), beta=float(c["beta"]),
            observable=str(c["observable"]),
            n_trajectories=int(c.get("n_trajectories", 24)),
            t_max=float(c["t_max"]),
            sample_interval=float(c["sample_interval"]),
            seed=seed + 104729 * i,
            fit_lo=float(c.get("fit_lo", 0.15)),
            fit_hi=float(c.get("fit_hi", 0.9)),
            mode=str(c.get("mode", dyn.EQUILIBRIUM_ENSEMBLE)),
            energy_scale=float(c.get("energy_scale", 1.0))))
    return cells


def _flat_rates_for_beta(amp, cut):
    def rates_for_beta(beta, freqs):
        model = bath.build_spectral_density(bath.FLAT_KMS, amplitude=amp,
                                            cutoff=cut, beta=max(beta, 1e-12))
        return davies.build_rates(model, freqs, 1.0)
    return rates_for_beta


def _run_cell_task(cell, amp, cut):
    return memory.run_study_cell(cell, _flat_rates_for_beta(amp, cut))


def _lifetime_run(config, out, seed, model_name, stem, threads=1):
    _check_keys(config, {"bath", "cells"}, "(top level)")
    bath_cfg = config.get("bath", {})
    amp = bath_cfg.get("amplitude", 1.0)
    cut = bath_cfg.get("cutoff", 10.0)
    cells = _lifetime_cells(config, model_name, seed)

    report = memory.LifetimeReport()
    estimates = {}
    if threads > 1:
        # cells are independent jobs; results merge in submission order so
        # the report is identical to a sequential run
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(_run_cell_task, c, amp, cut) for c in cells]
            results = [f.result() for f in futures]
    else:
        results = [_run_cell_task(c, amp, cut) for c in cells]
    for cell, (row, est) in zip(cells, results):
        report.rows.append(row)
        estimates[(cell.model, cell.size, cell.beta, cell.observable)] = est

    report.write_csv(os.path.join(out, f"{stem}.csv"))
    report.write_json(os.path.join(out, f"{stem}.json"))
    outputs = [f"{stem}.csv", f"{stem}.json"]
    for key, est in estimates.items():
        beta_tag = repr(float(key[2])).replace(".", "p")
        name = f"{stem}_ac_L{key[1]}_beta{beta_tag}_{key[3]}.dat"
        _write_dat(os.path.join(out, name), "lag  C  stderr",
                   (est.lags, est.values, est.stderr))
        outputs.append(name)
    return outputs


def cmd_ising_lifetime(config, out, seed, threads=1):
    return _lifetime_run(config, out, seed, memory.ISING_TORUS,
                         "ising_lifetime", threads)


def cmd_kitaev_lifetime(config, out, seed, threads=1):
    return _lifetime_run(config, out, seed, memory.KITAEV,
                         "kitaev_lifetime", threads)


def cmd_errormap_audit(config, out, seed):
    _check_keys(config, {"chain", "audit", "bath"}, "(top level)")
    chain_cfg = config.get("chain", {})
    _check_keys(chain_cfg, {"n_qubits", "coupling", "field", "site",
                            "operator_kind"}, "chain")
    chain = errormap.ChainModel(n_qubits=int(chain_cfg.get("n_qubits", 10)),
                                coupling=float(chain_cfg.get("coupling", 1.0)),
                                field=float(chain_cfg.get("field", 1.0)))
    site = int(chain_cfg.get("site", chain.n_qubits // 2))
    kind = chain_cfg.get("operator_kind", "x")

    audit_cfg = config.get("audit", {})
    _check_keys(audit_cfg, {"t_start", "t_stop", "n_times", "tau_scale"},
                "audit")
    t_start = float(audit_cfg.get("t_start", 0.2))
    t_stop = float(audit_cfg.get("t_stop", 2.6))
    n_times = int(audit_cfg.get("n_times", 41))
    tau_scale = float(audit_cfg.get("tau_scale", 10.0))
    ts = np.linspace(t_start, t_stop, n_times)
    taus = tau_scale * ts

    bath_cfg = dict(config.get("bath", {}))
    synth_rate = bath_cfg.pop("exponential_rate", None)
    if synth_rate is not None:
        if synth_rate <= 0:
            raise ParameterError("bath.exponential_rate must be > 0")
        corr = bath.CorrelationFunction(
            t_grid=taus, values=np.exp(-synth_rate * taus).astype(complex),
            f_zero=1.0, provenance={"kind": "synthetic-exponential",
                                    "rate": synth_rate})
        bath_desc = {"kind": "synthetic-exponential", "rate": synth_rate}
    else:
        model = _bath_from_config(bath_cfg)
        corr = bath.correlation_function(model, taus)
        bath_desc = {"kind": model.kind, "beta": model.beta,
                     "cutoff": model.cutoff}

    spectra = errormap.evolve_support(chain, site, ts, operator_kind=kind)
    est = errormap.born_error_weights(spectra, corr,
                                      tau_map=lambda t: tau_scale * t)
    verdict = errormap.a2_fit(est)

    _write_json(os.path.join(out, "errormap_audit.json"),
                {"bath": bath_desc, "verdict": verdict.to_json_dict(),
                 "weights": est.to_json_dict()})
    _write_csv(os.path.join(out, "support_spectra.csv"),
               ["t"] + [f"w_{n}" for n in range(1, chain.n_qubits + 1)],
               [(s.time, *map(float, s.weights)) for s in spectra])
    _write_csv(os.path.join(out, "error_weights.csv"), ["n", "m_n"],
               list(zip(est.sizes.tolist(), est.magnitudes.tolist())))
    _write_dat(os.path.join(out, "error_weights.dat"), "n  m_n",
               (est.sizes.astype(float), est.magnitudes))
    return ["errormap_audit.json", "support_spectra.csv",
            "error_weights.csv", "error_weights.dat"]


_COMMANDS = {
    "bath-audit": cmd_bath_audit,
    "kitaev-gap": cmd_kitaev_gap,
    "davies-properties": cmd_davies_properties,
    "ising-lifetime": cmd_ising_lifetime,
    "kitaev-lifetime": cmd_kitaev_lifetime,
    "errormap-audit": cmd_errormap_audit,
}


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="qmemlab",
        description="Thermal quantum-memory studies: baths, generators, "
                    "anyon dynamics, lifetimes, locality audits.")
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="TOML config path")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=None,
                        help="master seed (overrides config)")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads for independent study cells")
    args = parser.parse_args(argv)

    t_start = time.time()
    try:
        config = _load_config(args.config)
        config_seed = config.pop("seed", 0)
        seed = config_seed if args.seed is None else args.seed
        if not isinstance(seed, int) or seed < 0:
            raise ParameterError("seed must be a nonnegative integer")
        if args.threads < 1:
            raise ParameterError("threads must be >= 1")
        os.makedirs(args.out, exist_ok=True)
        runner = _COMMANDS[args.command]
        if args.command in ("ising-lifetime", "kitaev-lifetime"):
            outputs = runner(config, args.out, seed, args.threads)
        else:
            outputs = runner(config, args.out, seed)
        full_config = dict(config)
        full_config["seed"] = seed
        _manifest(args.out, args.command, full_config, args.config, seed,
                  t_start, outputs + ["manifest.json"])
    except ParameterError as exc:
        _fail(2, str(exc))
    except NumericalFailure as exc:
        _fail(3, str(exc))
    return 0


if __name__ == "__main__":
    sys.exit(main())
