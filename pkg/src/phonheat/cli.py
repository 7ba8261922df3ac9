"""Batch front-end: JSON configs in, CSV/JSON artifacts and a manifest out.

One process per run.  Every subcommand validates its flat JSON config
against a schema (unknown keys rejected), computes, writes artifacts into
--out, and finishes with manifest.json listing each artifact with its
sha256.  Numbers are printed with repr-faithful %.17g so identical
config + seed gives byte-identical CSVs.

Exit codes: 0 success, 2 config error, 3 numerical failure, 4 divergence.
On failure a one-line JSON error report goes to stderr (and error.json
into the output directory when it is writable).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import __version__
from .collision import (CollisionConfig, conservation_defects, equilibrium_v,
                        kinetic_collision)
from .errors import ConfigError, DivergenceError, NumericsError
from .langevin import ChainConfig, lyapunov_oracle, run_experiment
from .lattice import Dispersion, Regularization, build_grid
from .linear_ops import linearize
from .transport import (BoundaryConditions, diffusion_matrix, solve_hydro,
                        solve_kinetic_bvp)


# ---------------------------------------------------------------------------
# config schema


@dataclass(frozen=True)
class _Field:
    kind: str  # int | float | str | bool | float_list | opt_float
    default: object = None
    required: bool = False


_GRID_FIELDS = {
    "d": _Field("int", 3),
    "M": _Field("int", 8),
    "m_sq": _Field("float", 1.0),
    "c_eps": _Field("float", 2.0),
}

_SCHEMAS: dict[str, dict[str, _Field]] = {
    "dispersion": dict(_GRID_FIELDS),
    "collision-check": {
        **_GRID_FIELDS,
        "T": _Field("float", 1.0),
        "A": _Field("float", 0.2),
        "halvings": _Field("int", 3),
        "n_random": _Field("int", 10),
        "seed": _Field("int", 0),
    },
    "zero-modes": {
        **_GRID_FIELDS,
        "T": _Field("float", 1.0),
        "A": _Field("float", 0.0),
        "halvings": _Field("int", 3),
    },
    "diffusion": {
        **_GRID_FIELDS,
        "T_values": _Field("float_list", (1.0,)),
        "A_values": _Field("float_list", (0.0,)),
        "R": _Field("float", 1.0),
    },
    "hydro": {
        **_GRID_FIELDS,
        "T1": _Field("float", required=True),
        "T2": _Field("float", required=True),
        "A1": _Field("float", 0.0),
        "A2": _Field("float", 0.0),
        "R": _Field("float", 1.0),
        "n_x": _Field("int", 9),
        "tol": _Field("float", 1e-11),
    },
    "kinetic": {
        **_GRID_FIELDS,
        "T1": _Field("float", required=True),
        "T2": _Field("float", required=True),
        "A1": _Field("float", 0.0),
        "A2": _Field("float", 0.0),
        "R": _Field("float", 1.0),
        "n_x": _Field("int", 9),
        "tol": _Field("float", 1e-9),
        "refinement_cycles": _Field("int", 2),
    },
    "langevin": {
        "N": _Field("int", 16),
        "d": _Field("int", 1),
        "transverse": _Field("int", 1),
        "m_sq": _Field("float", 1.0),
        "lam": _Field("float", 0.0),
        "gamma": _Field("float", 1.0),
        "T1": _Field("float", 1.0),
        "T2": _Field("float", 1.0),
        "dt": _Field("opt_float", None),
        "total_steps": _Field("int", 200_000),
        "burn_in": _Field("int", 40_000),
        "n_batches": _Field("int", 32),
        "seed": _Field("int", 0),
    },
    "oracle": {
        "N": _Field("int", 16),
        "d": _Field("int", 1),
        "transverse": _Field("int", 1),
        "m_sq": _Field("float", 1.0),
        "gamma": _Field("float", 1.0),
        "T1": _Field("float", 1.0),
        "T2": _Field("float", 1.0),
    },
    "compare": {
        "csv_a": _Field("str", required=True),
        "csv_b": _Field("str", required=True),
    },
}


def _coerce(name: str, field: _Field, value):
    kind = field.kind
    try:
        if kind == "int":
            if isinstance(value, bool) or int(value) != value:
                raise ValueError
            return int(value)
        if kind == "float":
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        if kind == "opt_float":
            return None if value is None else float(value)
        if kind == "str":
            if not isinstance(value, str):
                raise ValueError
            return value
        if kind == "bool":
            if not isinstance(value, bool):
                raise ValueError
            return value
        if kind == "float_list":
            vals = [float(v) for v in value]
            if not vals:
                raise ValueError
            return tuple(vals)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {name!r} has invalid value {value!r} "
                          f"(expected {kind})") from None
    raise ConfigError(f"unhandled schema kind {kind!r} for {name!r}")


def load_config(command: str, path: str | None, seed_override: int | None) -> dict:
    """Defaults overlaid with the JSON file; strict key checking."""
    schema = _SCHEMAS[command]
    raw = {}
    if path is not None:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config document must be a JSON object")
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {unknown}")
    cfg = {}
    for name, field in schema.items():
        if name in raw:
            cfg[name] = _coerce(name, field, raw[name])
        elif field.required:
            raise ConfigError(f"config key {name!r} is required for {command}")
        else:
            cfg[name] = field.default
    if seed_override is not None:
        if "seed" not in schema:
            raise ConfigError(f"--seed does not apply to {command}")
        cfg["seed"] = int(seed_override)
    return cfg


# ---------------------------------------------------------------------------
# artifact helpers


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return "%.17g" % float(value)


def write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_json(path: str, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _jsonable(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value]
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    return value


def write_manifest(outdir: str, command: str, config: dict,
                   artifacts: list[str], t_start: float,
                   status: str = "ok") -> None:
    manifest = {
        "command": command,
        "config": _jsonable(config),
        "status": status,
        "versions": {
            "phonheat": __version__,
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "scipy": __import__("scipy").__version__,
        },
        "wall_time_s": round(time.time() - t_start, 3),
        "artifacts": {name: _sha256(os.path.join(outdir, name))
                      for name in artifacts},
    }
    write_json(os.path.join(outdir, "manifest.json"), manifest)


def _collision_setup(cfg: dict) -> CollisionConfig:
    M = cfg["M"]
    slow = M // 4 if M % 4 == 0 else None
    grid = build_grid(cfg["d"], M, slow)
    disp = Dispersion(grid, cfg["m_sq"])
    reg = Regularization.from_dispersion(disp, c_eps=cfg["c_eps"])
    return CollisionConfig(grid=grid, dispersion=disp, regularization=reg)


# ---------------------------------------------------------------------------
# subcommands


def cmd_dispersion(cfg: dict, outdir: str) -> list[str]:
    ccfg = _collision_setup(cfg)
    grid, disp = ccfg.grid, ccfg.dispersion
    header = ["index"] + [f"k{a + 1}" for a in range(grid.d)] + ["omega", "v1"]
    rows = ([i] + list(grid.k[i]) + [disp.omega[i], disp.v1[i]]
            for i in range(grid.n_points))
    write_csv(os.path.join(outdir, "dispersion.csv"), header, rows)
    return ["dispersion.csv"]


def cmd_collision_check(cfg: dict, outdir: str) -> list[str]:
    ccfg = _collision_setup(cfg)
    disp = ccfg.dispersion
    veq = equilibrium_v(disp, cfg["T"], cfg["A"])
    const = np.ones(ccfg.grid.n_points)
    rng = np.random.default_rng(cfg["seed"])
    randoms = 0.5 + rng.random((cfg["n_random"], ccfg.grid.n_points))
    rows = []
    current = ccfg
    for level in range(cfg["halvings"] + 1):
        eq_res = float(np.abs(kinetic_collision(current, veq)).max())
        const_res = float(np.abs(kinetic_collision(current, const)).max())
        worst_num = worst_en = 0.0
        for v in randoms:
            nnum, nen = conservation_defects(current, kinetic_collision(current, v))
            worst_num = max(worst_num, nnum)
            worst_en = max(worst_en, nen)
        rows.append([current.regularization.epsilon, eq_res, const_res,
                     worst_num, worst_en])
        current = current.with_epsilon(current.regularization.epsilon / 2.0)
    write_csv(os.path.join(outdir, "collision_check.csv"),
              ["epsilon", "equilibrium_residual", "constant_residual",
               "number_defect", "energy_defect"], rows)
    ratios = [rows[i][1] / rows[i + 1][1] for i in range(len(rows) - 1)]
    write_json(os.path.join(outdir, "collision_check.json"), _jsonable({
        "epsilon_ladder": [r[0] for r in rows],
        "equilibrium_residuals": [r[1] for r in rows],
        "halving_ratios": ratios,
    }))
    return ["collision_check.csv", "collision_check.json"]


def cmd_zero_modes(cfg: dict, outdir: str) -> list[str]:
    ccfg = _collision_setup(cfg)
    report_levels = []
    current = ccfg
    op = None
    for level in range(cfg["halvings"] + 1):
        op = linearize(current, cfg["T"], cfg["A"])
        right = op.right_null_defect()
        report_levels.append({
            "epsilon": current.regularization.epsilon,
            "right_null_defects": list(right),
            "left_null_defect": op.left_null_defect(),
            "l12_over_l_norm": op.parity_defect(),
        })
        current = current.with_epsilon(current.regularization.epsilon / 2.0)
    ratios = [[report_levels[i]["right_null_defects"][j]
               / report_levels[i + 1]["right_null_defects"][j]
               for j in range(2)] for i in range(len(report_levels) - 1)]
    base = linearize(ccfg, cfg["T"], cfg["A"])
    sig_full, sig_restricted = base.sigma_min_l11()
    eigs = np.sort_complex(base.spectrum_l22())
    write_csv(os.path.join(outdir, "spectrum.csv"), ["re", "im"],
              ([z.real, z.imag] for z in eigs))
    write_json(os.path.join(outdir, "zero_modes.json"), _jsonable({
        "levels": report_levels,
        "right_null_halving_ratios": ratios,
        "sigma_min_l11_full": sig_full,
        "sigma_min_l11_restricted": sig_restricted,
        "symmetry_defect": base.symmetry_defect(),
        "dissipativity": base.dissipativity_report(),
    }))
    return ["spectrum.csv", "zero_modes.json"]


def cmd_diffusion(cfg: dict, outdir: str) -> list[str]:
    ccfg = _collision_setup(cfg)
    rows = []
    for T in cfg["T_values"]:
        for A in cfg["A_values"]:
            d = diffusion_matrix(ccfg, T, A, R=cfg["R"])
            rows.append([T, A,
                         d.matrix[0, 0], d.matrix[0, 1],
                         d.matrix[1, 0], d.matrix[1, 1],
                         d.kappa, d.onsager_defect, d.positive_definite,
                         d.condition])
    write_csv(os.path.join(outdir, "diffusion.csv"),
              ["T", "A", "D_heat_dT", "D_heat_dA", "D_number_dT",
               "D_number_dA", "kappa", "onsager_defect", "positive_definite",
               "condition"], rows)
    return ["diffusion.csv"]


def _profile_rows(result):
    prof = result.profile
    for i in range(prof.x.size):
        yield [prof.x[i], prof.T[i], prof.A[i], 1.0 / prof.T[i],
               result.J_heat, result.J_number]


_PROFILE_HEADER = ["x", "T", "A", "beta", "J_heat", "J_number"]


def _transport_summary(cfg: dict, ccfg: CollisionConfig, result) -> dict:
    summary = {
        "residuals": {k: v for k, v in result.residuals.items()
                      if k != "newton_history"},
        "iterations": result.iterations,
        "J_heat": result.J_heat,
        "J_number": result.J_number,
        "grid": {"d": cfg["d"], "M": cfg["M"]},
        "epsilon": ccfg.regularization.epsilon,
    }
    if cfg["T1"] != cfg["T2"]:
        # kappa is undefined at zero gradient; omit rather than emit 0/0
        t_mid = 0.5 * (cfg["T1"] + cfg["T2"])
        summary["kappa"] = result.kappa
        summary["c_constant"] = result.kappa * cfg["R"] * t_mid**2
    return summary


def cmd_hydro(cfg: dict, outdir: str) -> list[str]:
    ccfg = _collision_setup(cfg)
    bc = BoundaryConditions(cfg["T1"], cfg["T2"], cfg["A1"], cfg["A2"])
    result = solve_hydro(ccfg, bc, R=cfg["R"], n_x=cfg["n_x"], tol=cfg["tol"])
    write_csv(os.path.join(outdir, "profiles.csv"), _PROFILE_HEADER,
              _profile_rows(result))
    write_json(os.path.join(outdir, "hydro.json"),
               _jsonable(_transport_summary(cfg, ccfg, result)))
    return ["profiles.csv", "hydro.json"]


def cmd_kinetic(cfg: dict, outdir: str) -> list[str]:
    ccfg = _collision_setup(cfg)
    bc = BoundaryConditions(cfg["T1"], cfg["T2"], cfg["A1"], cfg["A2"])
    result = solve_kinetic_bvp(ccfg, bc, R=cfg["R"], n_x=cfg["n_x"],
                               tol=cfg["tol"],
                               refinement_cycles=cfg["refinement_cycles"])
    write_csv(os.path.join(outdir, "profiles.csv"), _PROFILE_HEADER,
              _profile_rows(result))
    summary = _transport_summary(cfg, ccfg, result)
    summary["residual_floor"] = result.residual_floor
    write_json(os.path.join(outdir, "kinetic.json"), _jsonable(summary))
    return ["profiles.csv", "kinetic.json"]


_LANGEVIN_HEADER = ["x", "T_hat", "T_se", "j_hat", "j_se"]


def cmd_langevin(cfg: dict, outdir: str) -> list[str]:
    chain = ChainConfig(N=cfg["N"], d=cfg["d"], transverse=cfg["transverse"],
                        m_sq=cfg["m_sq"], lam=cfg["lam"], gamma=cfg["gamma"],
                        T1=cfg["T1"], T2=cfg["T2"], dt=cfg["dt"],
                        total_steps=cfg["total_steps"],
                        burn_in=cfg["burn_in"], n_batches=cfg["n_batches"],
                        seed=cfg["seed"])
    stats = run_experiment(chain)
    rows = ([stats.x[i], stats.T_hat[i], stats.T_se[i],
             stats.j_hat[i], stats.j_se[i]] for i in range(stats.x.size))
    write_csv(os.path.join(outdir, "langevin.csv"), _LANGEVIN_HEADER, rows)
    write_json(os.path.join(outdir, "langevin.json"), _jsonable({
        "mean_current": float(stats.cut_j_hat.mean()),
        "cut_constancy_se": float(np.abs(stats.cut_j_hat
                                         - stats.cut_j_hat.mean()).max()
                                  / max(stats.cut_j_se.max(), 1e-300)),
        "n_samples": stats.n_samples,
        "n_batches": stats.n_batches,
        "dt": chain.dt,
        "valid": stats.valid,
    }))
    return ["langevin.csv", "langevin.json"]


def cmd_oracle(cfg: dict, outdir: str) -> list[str]:
    chain = ChainConfig(N=cfg["N"], d=cfg["d"], transverse=cfg["transverse"],
                        m_sq=cfg["m_sq"], lam=0.0, gamma=cfg["gamma"],
                        T1=cfg["T1"], T2=cfg["T2"])
    orc = lyapunov_oracle(chain)
    rows = ([orc.x[i], orc.T[i], 0.0, orc.j[i], 0.0]
            for i in range(orc.x.size))
    write_csv(os.path.join(outdir, "oracle.csv"), _LANGEVIN_HEADER, rows)
    write_json(os.path.join(outdir, "oracle.json"), _jsonable({
        "mean_current": float(orc.cut_j.mean()),
        "n_sites": orc.n_sites,
    }))
    return ["oracle.csv", "oracle.json"]


def _read_csv(path: str) -> tuple[list[str], list[list[float]]]:
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [[float(v) for v in row] for row in reader]
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except (StopIteration, ValueError):
        raise ConfigError(f"{path} is not a numeric CSV with a header") from None
    return header, rows


def cmd_compare(cfg: dict, outdir: str) -> list[str]:
    """Join two result CSVs on x and report deviations in SE units."""
    head_a, rows_a = _read_csv(cfg["csv_a"])
    head_b, rows_b = _read_csv(cfg["csv_b"])
    if "x" not in head_a or "x" not in head_b:
        raise ConfigError("both inputs need an x column to join on")
    col_a = {name: i for i, name in enumerate(head_a)}
    col_b = {name: i for i, name in enumerate(head_b)}
    by_x = {row[col_b["x"]]: row for row in rows_b}
    shared = [c for c in head_a
              if c in col_b and c != "x" and not c.endswith("_se")]
    report = {}
    n_joined = 0
    for row in rows_a:
        x = row[col_a["x"]]
        other = by_x.get(x)
        if other is None:
            continue
        n_joined += 1
        for c in shared:
            dev = abs(row[col_a[c]] - other[col_b[c]])
            se_sq = 0.0
            # estimator columns pair as Y_hat / Y_se
            se_name = c[:-4] + "_se" if c.endswith("_hat") else c + "_se"
            if se_name in col_a and se_name in col_b:
                se_sq = row[col_a[se_name]]**2 + other[col_b[se_name]]**2
            if se_sq > 0:
                units = dev / se_sq**0.5
            else:
                units = 0.0 if dev == 0.0 else float("inf")
            entry = report.setdefault(c, {"max_abs": 0.0, "max_se_units": 0.0})
            entry["max_abs"] = max(entry["max_abs"], dev)
            entry["max_se_units"] = max(entry["max_se_units"], units)
    if n_joined == 0:
        raise ConfigError("no shared x values to compare")
    write_json(os.path.join(outdir, "compare.json"), _jsonable({
        "columns": report,
        "n_joined": n_joined,
        "csv_a": cfg["csv_a"],
        "csv_b": cfg["csv_b"],
    }))
    return ["compare.json"]


_DISPATCH = {
    "dispersion": cmd_dispersion,
    "collision-check": cmd_collision_check,
    "zero-modes": cmd_zero_modes,
    "diffusion": cmd_diffusion,
    "hydro": cmd_hydro,
    "kinetic": cmd_kinetic,
    "langevin": cmd_langevin,
    "oracle": cmd_oracle,
    "compare": cmd_compare,
}


# ---------------------------------------------------------------------------
# entry point


def _emit_error(exc: Exception, code: int, outdir: str | None) -> None:
    payload = {"error": type(exc).__name__, "message": str(exc),
               "exit_code": code}
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
    if outdir is not None and os.path.isdir(outdir):
        try:
            write_json(os.path.join(outdir, "error.json"), payload)
        except OSError:
            pass


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="phonheat",
        description="Phonon kinetic transport runs (CSV/JSON artifacts)")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _DISPATCH:
        p = sub.add_parser(name, help=f"run the {name} computation")
        p.add_argument("--config", default=None,
                       help="JSON config file (defaults apply when omitted)")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config RNG seed")
        p.add_argument("--threads", type=int, default=None,
                       help="BLAS thread cap (exported to the environment)")
    args = parser.parse_args(argv)

    if args.threads is not None:
        if args.threads < 1:
            _emit_error(ConfigError("--threads must be >= 1"), 2, None)
            return 2
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)

    t0 = time.time()
    outdir = args.out
    try:
        cfg = load_config(args.command, args.config, args.seed)
        os.makedirs(outdir, exist_ok=True)
        artifacts = _DISPATCH[args.command](cfg, outdir)
        write_manifest(outdir, args.command, cfg, artifacts, t0)
        return 0
    except ConfigError as exc:
        _emit_error(exc, 2, outdir)
        return 2
    except DivergenceError as exc:
        _emit_error(exc, 4, outdir)
        return 4
    except NumericsError as exc:
        _emit_error(exc, 3, outdir)
        return 3


if __name__ == "__main__":
    sys.exit(main())
