"""Batch front door: INI-like scenario configs, subcommand orchestration,
and plot-ready artifact emission (CSV and gnuplot .dat).

The config dialect is deliberately minimal: ``[section]`` headers and
``key = value`` lines, ``#``/``;`` comments, UTF-8.  Parsing validates every
scenario invariant up front and reports the first offense with its line
number; unknown sections and keys are rejected.  Every run writes
``manifest.ini`` echoing the fully-resolved config (defaults included), and
the same config yields byte-identical artifacts on the same platform.

Initial data policy: runs start from rest with the temperature deviation set
to the linear wall interpolant T0(x, z) = Theta_B_bottom(x) (1 - z) +
Theta_B_top(x) z, which keeps the trace compatible with any wall spec.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .diagnostics import compare_modified_vs_naive, sweep
from .errors import (
    AlignmentError,
    ClosureError,
    CompatibilityError,
    ConfigError,
    DivergenceError,
    DomainError,
    ShapeError,
    StabilityError,
)
from .grid import Grid, ScalarField, save_profile_csv
from .nsf import (
    NsfScenario,
    discrete_hydrostatic_reference,
    hydrostatic_stationary_1d,
    run_nsf,
)
from .ob import ObScenario, gravity_potential, run_ob
from .thermo import EosParams, check_hypotheses, check_limit_identities, gibbs_residual

__all__ = ["ScenarioConfig", "parse_config", "main"]

COMMANDS = ("thermo-check", "run-ob", "run-nsf", "sweep", "compare", "hydrostatic")

# section -> key -> (type tag, default); schema order is echo order.
_SCHEMA = {
    "eos": {
        "p_inf": ("float", 0.0),
        "a": ("float", 0.0),
        "mu0": ("float", 1e-2),
        "eta0": ("float", 0.0),
        "kappa0": ("float", 1e-2),
        "beta": ("float", 6.5),
        "s0": ("float", 0.0),
    },
    "grid": {"nx": ("int", 32), "nz": ("int", 16), "Lx": ("float", 1.0)},
    "reference": {"rho_bar": ("float", 1.0), "theta_bar": ("float", 1.0)},
    "forcing": {
        "g": ("float", 0.0),
        "theta_b_bottom": ("float", 0.0),
        "theta_b_top": ("float", 0.0),
        "theta_b_cos": ("float", 0.0),
    },
    "nsf": {
        "eps": ("float", 0.1),
        "eps_list": ("floats", None),
        "cfl": ("float", 0.4),
        "t_end": ("float", 0.25),
    },
    "ob": {"frame": ("str", "T"), "dt": ("float", 1e-3), "t_end": ("float", 0.25)},
    "output": {
        "directory": ("str", "out"),
        "cadence": ("float", 0.05),
        "formats": ("str", "csv"),
    },
}


@dataclass(frozen=True)
class ScenarioConfig:
    """Fully-resolved scenario: every schema key with defaults applied."""

    eos: EosParams
    nx: int
    nz: int
    lx: float
    rho_bar: float
    theta_bar: float
    g: float
    theta_b_bottom: float
    theta_b_top: float
    theta_b_cos: float
    eps: float
    eps_list: tuple | None
    cfl: float
    nsf_t_end: float
    frame: str
    ob_dt: float
    ob_t_end: float
    directory: str
    cadence: float
    formats: tuple

    def echo(self):
        """Canonical config text; parsing it reproduces this config."""
        eos = self.eos
        lines = ["[eos]"]
        for key in _SCHEMA["eos"]:
            lines.append(f"{key} = {getattr(eos, key):.17g}")
        lines += [
            "",
            "[grid]",
            f"nx = {self.nx}",
            f"nz = {self.nz}",
            f"Lx = {self.lx:.17g}",
            "",
            "[reference]",
            f"rho_bar = {self.rho_bar:.17g}",
            f"theta_bar = {self.theta_bar:.17g}",
            "",
            "[forcing]",
            f"g = {self.g:.17g}",
            f"theta_b_bottom = {self.theta_b_bottom:.17g}",
            f"theta_b_top = {self.theta_b_top:.17g}",
            f"theta_b_cos = {self.theta_b_cos:.17g}",
            "",
            "[nsf]",
            f"eps = {self.eps:.17g}",
        ]
        if self.eps_list is not None:
            lines.append("eps_list = " + ", ".join(f"{e:.17g}" for e in self.eps_list))
        lines += [
            f"cfl = {self.cfl:.17g}",
            f"t_end = {self.nsf_t_end:.17g}",
            "",
            "[ob]",
            f"frame = {self.frame}",
            f"dt = {self.ob_dt:.17g}",
            f"t_end = {self.ob_t_end:.17g}",
            "",
            "[output]",
            f"directory = {self.directory}",
            f"cadence = {self.cadence:.17g}",
            "formats = " + ", ".join(self.formats),
        ]
        return "\n".join(lines) + "\n"

    def grid(self):
        return Grid(self.nx, self.nz, self.lx)

    def wall_arrays(self, grid):
        wave = self.theta_b_cos * np.cos(2 * np.pi * grid.x_centers / self.lx)
        return self.theta_b_bottom + wave, self.theta_b_top + wave

    def _initial_temperature(self, grid):
        wb, wt = self.wall_arrays(grid)
        T0 = ScalarField.zeros(grid)
        z = grid.z_centers[None, :]
        T0.values[:] = wb[:, None] * (1.0 - z) + wt[:, None] * z
        return T0

    def ob_scenario(self):
        grid = self.grid()
        wb, wt = self.wall_arrays(grid)
        return ObScenario(
            grid,
            self.eos,
            rho_bar=self.rho_bar,
            theta_bar=self.theta_bar,
            G=gravity_potential(grid, self.g),
            theta_b_bottom=wb,
            theta_b_top=wt,
            dt=self.ob_dt,
            t_end=self.ob_t_end,
            T0=self._initial_temperature(grid),
        )

    def nsf_scenario(self, eps=None):
        grid = self.grid()
        wb, wt = self.wall_arrays(grid)
        return NsfScenario(
            grid,
            self.eos,
            self.eps if eps is None else eps,
            rho_bar=self.rho_bar,
            theta_bar=self.theta_bar,
            G=gravity_potential(grid, self.g),
            theta_b_bottom=wb,
            theta_b_top=wt,
            cfl=self.cfl,
            t_end=self.nsf_t_end,
            T0=self._initial_temperature(grid),
        )


def _convert(kind, key, val, lineno):
    try:
        if kind == "float":
            return float(val)
        if kind == "int":
            return int(val)
        if kind == "floats":
            parts = [tok.strip() for tok in val.split(",")]
            return tuple(float(tok) for tok in parts if tok)
        return val
    except ValueError:
        raise ConfigError(f"expected {kind} for '{key}', got '{val}'", line=lineno) from None


def _scan(text):
    values, lines = {}, {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith(("#", ";")):
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError("malformed section header", line=lineno)
            section = line[1:-1].strip()
            if section not in _SCHEMA:
                raise ConfigError(f"unknown section [{section}]", line=lineno)
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line=lineno)
        if section is None:
            raise ConfigError("key outside any [section]", line=lineno)
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _SCHEMA[section]:
            raise ConfigError(f"unknown key '{key}' in [{section}]", line=lineno)
        if (section, key) in values:
            raise ConfigError(f"duplicate key '{key}' in [{section}]", line=lineno)
        values[(section, key)] = _convert(_SCHEMA[section][key][0], key, val, lineno)
        lines[(section, key)] = lineno
    return values, lines


def parse_config(text):
    """Parse and validate a scenario config; the first offense raises
    ConfigError carrying the offending line number."""
    values, lines = _scan(text)

    def get(section, key):
        return values.get((section, key), _SCHEMA[section][key][1])

    def where(section, key):
        return lines.get((section, key))

    def demand(ok, section, key, message):
        if not ok:
            raise ConfigError(message, line=where(section, key))

    for key in _SCHEMA["eos"]:
        val = get("eos", key)
        if key in ("mu0", "kappa0"):
            demand(val > 0, "eos", key, f"{key} must be positive")
        elif key != "s0":
            demand(val >= 0, "eos", key, f"{key} must be non-negative")
    eos = EosParams(**{key: get("eos", key) for key in _SCHEMA["eos"]})

    demand(get("grid", "nx") >= 4, "grid", "nx", "nx must be at least 4")
    demand(get("grid", "nz") >= 4, "grid", "nz", "nz must be at least 4")
    demand(get("grid", "Lx") > 0, "grid", "Lx", "Lx must be positive")
    demand(get("reference", "rho_bar") > 0, "reference", "rho_bar", "rho_bar must be positive")
    demand(get("reference", "theta_bar") > 0, "reference", "theta_bar", "theta_bar must be positive")

    eps = get("nsf", "eps")
    demand(0.0 < eps <= 1.0, "nsf", "eps", "eps must lie in (0, 1]")
    eps_list = get("nsf", "eps_list")
    if eps_list is not None:
        demand(len(eps_list) > 0, "nsf", "eps_list", "eps_list must not be empty")
        demand(
            all(0.0 < e <= 1.0 for e in eps_list),
            "nsf", "eps_list", "every eps in eps_list must lie in (0, 1]",
        )
        demand(
            all(b < a for a, b in zip(eps_list, eps_list[1:])),
            "nsf", "eps_list", "eps_list must be strictly descending",
        )
    demand(0.0 < get("nsf", "cfl") <= 1.0, "nsf", "cfl", "cfl must lie in (0, 1]")
    demand(get("nsf", "t_end") > 0, "nsf", "t_end", "t_end must be positive")

    frame = get("ob", "frame")
    demand(frame in ("T", "Theta"), "ob", "frame", "frame must be 'T' or 'Theta'")
    ob_dt = get("ob", "dt")
    demand(ob_dt > 0, "ob", "dt", "dt must be positive")
    ob_t_end = get("ob", "t_end")
    demand(ob_t_end > 0, "ob", "t_end", "t_end must be positive")
    steps = round(ob_t_end / ob_dt)
    demand(
        steps >= 1 and abs(steps * ob_dt - ob_t_end) <= 1e-9 * ob_t_end,
        "ob", "t_end", "t_end must be an integer multiple of dt",
    )

    cadence = get("output", "cadence")
    demand(cadence > 0, "output", "cadence", "cadence must be positive")
    every = round(cadence / ob_dt)
    demand(
        every >= 1 and abs(every * ob_dt - cadence) <= 1e-9 * cadence,
        "output", "cadence", "cadence must be a positive multiple of the ob dt",
    )
    formats = tuple(tok.strip() for tok in get("output", "formats").split(",") if tok.strip())
    demand(
        len(formats) > 0 and all(fmt in ("csv", "dat") for fmt in formats),
        "output", "formats", "formats must be a comma list drawn from {csv, dat}",
    )

    cfg = ScenarioConfig(
        eos=eos,
        nx=get("grid", "nx"),
        nz=get("grid", "nz"),
        lx=get("grid", "Lx"),
        rho_bar=get("reference", "rho_bar"),
        theta_bar=get("reference", "theta_bar"),
        g=get("forcing", "g"),
        theta_b_bottom=get("forcing", "theta_b_bottom"),
        theta_b_top=get("forcing", "theta_b_top"),
        theta_b_cos=get("forcing", "theta_b_cos"),
        eps=eps,
        eps_list=eps_list,
        cfl=get("nsf", "cfl"),
        nsf_t_end=get("nsf", "t_end"),
        frame=frame,
        ob_dt=ob_dt,
        ob_t_end=ob_t_end,
        directory=get("output", "directory"),
        cadence=cadence,
        formats=formats,
    )

    # Wall positivity across every eps the config can run at.
    worst = max([cfg.eps, *(cfg.eps_list or ())])
    floor = cfg.theta_bar + worst * (
        min(cfg.theta_b_bottom, cfg.theta_b_top) - abs(cfg.theta_b_cos)
    )
    if floor <= 0:
        raise ConfigError(
            f"eps={worst:g} with the configured Theta_B drives the wall "
            "temperature non-positive",
            line=where("nsf", "eps_list") or where("nsf", "eps"),
        )
    return cfg


def _resolve_threads(flag):
    if flag is not None:
        if flag < 1:
            raise ConfigError("--threads must be at least 1")
        return flag
    env = os.environ.get("BLL_THREADS")
    if env is None:
        return None
    try:
        val = int(env)
    except ValueError:
        raise ConfigError(f"BLL_THREADS must be an integer, got '{env}'") from None
    if val < 1:
        raise ConfigError("BLL_THREADS must be at least 1")
    return val


def _write_columns(outdir, name, header, columns, formats):
    cols = [np.asarray(c, dtype=float) for c in columns]
    if "csv" in formats:
        save_profile_csv(outdir / f"{name}.csv", cols, header)
    if "dat" in formats:
        with open(outdir / f"{name}.dat", "w", encoding="utf-8") as fh:
            fh.write("# " + " ".join(header) + "\n")
            for i in range(len(cols[0])):
                fh.write(" ".join(format(c[i], ".17g") for c in cols) + "\n")


def _cmd_thermo_check(cfg, outdir, threads, say):
    report = check_hypotheses(cfg.eos)
    (outdir / "hypothesis_report.txt").write_text("\n".join(report.lines()) + "\n", encoding="utf-8")
    r26, r27, r29 = check_limit_identities(cfg.rho_bar, cfg.theta_bar, cfg.eos)
    rng = np.logspace(-1, 1, 10)
    rho, theta = np.meshgrid(rng, rng, indexing="ij")
    gibbs = gibbs_residual(rho, theta, cfg.eos)
    with open(outdir / "limit_identities.csv", "w", encoding="utf-8") as fh:
        fh.write("identity,residual\n")
        for name, val in (("r26", r26), ("r27", r27), ("r29", r29), ("gibbs_fd", gibbs)):
            fh.write(f"{name},{val:.17g}\n")
    say(f"hypotheses: {'all passed' if report.all_passed else 'some FAILED (see report)'}")
    say(f"limit identities: r26={r26:.3e} r27={r27:.3e} r29={r29:.3e} gibbs_fd={gibbs:.3e}")
    return 0


def _cmd_run_ob(cfg, outdir, threads, say):
    traj = run_ob(cfg.ob_scenario(), cfg.frame, snapshot_dt=cfg.cadence)
    tr = traj.trace
    _write_columns(
        outdir, "ob_trace",
        ["t", "mean_T", "Lambda", "flux", "s24_residual"],
        [tr.t, tr.mean_T, tr.Lambda, tr.flux, tr.s24_residual],
        cfg.formats,
    )
    final = traj.states[-1]
    _write_columns(
        outdir, "ob_final_profile",
        ["z", "temp_mean"],
        [traj.scenario.grid.z_centers, final.temp.values.mean(axis=0)],
        cfg.formats,
    )
    say(f"ob run: {len(tr.t)} steps to t={traj.times[-1]:g}, mean_T={tr.mean_T[-1]:.6g}")
    return 0


def _cmd_run_nsf(cfg, outdir, threads, say):
    traj = run_nsf(cfg.nsf_scenario(), snapshot_dt=cfg.cadence)
    if "csv" in cfg.formats:
        traj.log.write_csv(outdir / "nsf_log.csv")
    if "dat" in cfg.formats:
        log = traj.log
        _write_columns(
            outdir, "nsf_log",
            ["t", "mass", "ballistic_energy", "entropy_proxy", "dt"],
            [log.t, log.mass, log.ballistic_energy, log.entropy_proxy, log.dt],
            ("dat",),
        )
    final = traj.states[-1]
    _write_columns(
        outdir, "nsf_final_profile",
        ["z", "rho_mean", "theta_mean"],
        [
            traj.scenario.grid.z_centers,
            final.rho.values.mean(axis=0),
            final.theta.values.mean(axis=0),
        ],
        cfg.formats,
    )
    drift = float(np.max(np.abs(traj.log.mass - traj.log.mass[0]))) / traj.log.mass[0]
    say(
        f"nsf run: {traj.steps} steps in {traj.wall_seconds:.2f}s, "
        f"relative mass drift {drift:.3e}"
    )
    return 0


def _cmd_sweep(cfg, outdir, threads, say):
    eps_seq = list(cfg.eps_list) if cfg.eps_list is not None else [cfg.eps]
    table = sweep(
        cfg.ob_scenario(), eps_seq, frame=cfg.frame, snapshot_dt=cfg.cadence, threads=threads
    )
    if "csv" in cfg.formats:
        table.write_csv(outdir / "sweep.csv")
    if "dat" in cfg.formats:
        with open(outdir / "sweep.dat", "w", encoding="utf-8") as fh:
            fh.write("# eps err_rho err_theta err_mom\n")
            for row in table.rows:
                fh.write(
                    f"{row.eps:.17g} {row.err_rho:.17g} "
                    f"{row.err_theta:.17g} {row.err_mom:.17g}\n"
                )
            if table.rates is not None:
                fh.write(
                    f"# fitted_rate {table.rates[0]:.6g} "
                    f"{table.rates[1]:.6g} {table.rates[2]:.6g}\n"
                )
    for row in table.rows:
        say(
            f"eps={row.eps:g}: err_rho={row.err_rho:.6g} "
            f"err_theta={row.err_theta:.6g} err_mom={row.err_mom:.6g}"
        )
    if table.rates is not None:
        say(f"fitted rates: {table.rates[0]:.3g} {table.rates[1]:.3g} {table.rates[2]:.3g}")
    for eps, msg in table.failures:
        say(f"failed eps={eps:g}: {msg}")
    return 0


def _cmd_compare(cfg, outdir, threads, say):
    report = compare_modified_vs_naive(cfg.ob_scenario(), cfg.eps, snapshot_dt=cfg.cadence)
    if "csv" in cfg.formats:
        report.write_csv(outdir / "compare.csv")
    (outdir / "compare.txt").write_text(report.format_text(), encoding="utf-8")
    say(report.format_text().rstrip())
    return 0


def _cmd_hydrostatic(cfg, outdir, threads, say):
    scenario = cfg.nsf_scenario()
    rho, theta = hydrostatic_stationary_1d(scenario)
    header = ["z", "rho", "theta"]
    columns = [scenario.grid.z_centers, rho, theta]
    try:
        rho_hat, theta_hat = discrete_hydrostatic_reference(scenario)
        header += ["rho_hat", "theta_hat"]
        columns += [rho_hat, theta_hat]
    except ShapeError:
        pass
    _write_columns(outdir, "hydrostatic_profile", header, columns, cfg.formats)
    say(f"hydrostatic profile: rho in [{rho.min():.6g}, {rho.max():.6g}]")
    return 0


_HANDLERS = {
    "thermo-check": _cmd_thermo_check,
    "run-ob": _cmd_run_ob,
    "run-nsf": _cmd_run_nsf,
    "sweep": _cmd_sweep,
    "compare": _cmd_compare,
    "hydrostatic": _cmd_hydrostatic,
}


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="bll",
        description="Compressible convection runs, their incompressible limit, "
        "and the diagnostics tying the two together.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="scenario config path")
    parser.add_argument("--out", default=None, help="override [output] directory")
    parser.add_argument("--threads", type=int, default=None, help="sweep parallelism")
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")
    args = parser.parse_args(argv)

    def say(msg):
        if not args.quiet:
            print(msg)

    try:
        text = Path(args.config).read_text(encoding="utf-8")
        cfg = parse_config(text)
        threads = _resolve_threads(args.threads)
        outdir = Path(args.out) if args.out is not None else Path(cfg.directory)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "manifest.ini").write_text(cfg.echo(), encoding="utf-8")
        return _HANDLERS[args.command](cfg, outdir, threads, say)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 10
    except (DomainError, ShapeError, CompatibilityError, AlignmentError, ClosureError) as exc:
        print(f"error: validation: {exc}", file=sys.stderr)
        return 11
    except (StabilityError, DivergenceError) as exc:
        print(f"error: solver: {exc}", file=sys.stderr)
        return 12
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 13


if __name__ == "__main__":
    sys.exit(main())
