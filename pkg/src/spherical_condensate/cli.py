"""Command-line driver: energy tables, splits, samples and experiments.

Every command writes ``<out>/<command>.<format>`` plus ``<out>/<command>.meta.json``
holding the effective configuration and a timestamp.  The data file itself
depends only on the configuration and seed.
"""
import argparse
import csv
import datetime as _dt
import io
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .dispersion import (
    CustomTable,
    NonSmoothDispersionError,
    dispersion_from_dict,
    energy_table,
    rho_infinity,
)
from .estimators import (
    MomentSpec,
    check_against_oracle,
    compare_mu0_mu1_moments,
    critical_gff_covariance,
    estimate_w2_upper_main,
    normal_fluid_covariance_exact,
)
from .lattice import build_lattice
from .measures import SamplerStats, sample_mu0, sample_mu1, sample_mu1prime, sample_normal_fluid
from .oracle import SmallSystem
from .split import (
    LemmaPreconditionError,
    bound_report,
    check_assumptions,
    construct_split_lemma,
    construct_split_threshold,
)
from .streams import default_workers, make_rng, resolve_seed

COMMANDS = ("table", "split", "sample", "moments", "w2", "gff", "oracle-check", "sweep")

DEFAULTS = {
    "dispersion": {"kind": "nearest_neighbour"},
    "d": 3,
    "L": 8,
    "L_values": [8, 16],
    "rho": None,
    "rho_excess": 1.0,
    "kappa": None,
    "split": "auto",
    "cut": None,
    "enforce_l0": False,
    "n_samples": 10_000,
    "seed": None,
    "workers": None,
    "out": "spherical_out",
    "format": "csv",
    "tol": 1e-7,
    "n_shifts": 16,
    "chunk": 500,
    "n_pilot": 20_000,
    "measure": "mu0",
    "moments": None,
    "r_values": None,
    "systems": None,
}

_DEFAULT_SYSTEMS = [
    {"energies": e, "V": V, "rho": r}
    for e in ([0, 1], [0, 0.1, 1]) for V in (2, 3) for r in (0.5, 2.0)
] + [{"energies": [0, 1], "V": 2, "rho": 1.0}]


class ConfigError(ValueError):
    pass


def _is_int(x):
    return isinstance(x, int) and not isinstance(x, bool)


def _is_num(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def validate_config(cfg):
    """Fill defaults and check types; unknown keys are rejected."""
    unknown = sorted(set(cfg) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    out = {**DEFAULTS, **{k: v for k, v in cfg.items() if v is not None}}
    if not isinstance(out["dispersion"], dict) or "kind" not in out["dispersion"]:
        raise ConfigError("dispersion must be an object with a 'kind'")
    for key in ("d", "L", "n_samples", "n_shifts", "chunk", "n_pilot"):
        if not _is_int(out[key]) or out[key] < 1:
            raise ConfigError(f"{key} must be a positive integer")
    if out["seed"] is not None and (not _is_int(out["seed"]) or not 0 <= out["seed"] < 2**64):
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if out["workers"] is not None and (not _is_int(out["workers"]) or out["workers"] < 1):
        raise ConfigError("workers must be a positive integer")
    if not isinstance(out["L_values"], list) or not all(_is_int(v) and v >= 1 for v in out["L_values"]):
        raise ConfigError("L_values must be a list of positive integers")
    for key in ("rho", "kappa", "cut"):
        if out[key] is not None and not _is_num(out[key]):
            raise ConfigError(f"{key} must be a number")
    if out["rho"] is not None and not out["rho"] > 0:
        raise ConfigError("rho must be positive")
    if not _is_num(out["rho_excess"]) or not _is_num(out["tol"]) or not out["tol"] > 0:
        raise ConfigError("rho_excess and tol must be numbers, tol > 0")
    if out["split"] not in ("auto", "lemma", "threshold"):
        raise ConfigError("split must be 'auto', 'lemma' or 'threshold'")
    if not isinstance(out["enforce_l0"], bool):
        raise ConfigError("enforce_l0 must be a boolean")
    if out["format"] not in ("csv", "json"):
        raise ConfigError("format must be 'csv' or 'json'")
    if out["measure"] not in ("mu0", "mu1", "mu1prime", "mu_plus"):
        raise ConfigError("measure must be one of mu0, mu1, mu1prime, mu_plus")
    if out["moments"] is not None:
        try:
            [MomentSpec(tuple((tuple(x), t) for x, t in m)) for m in out["moments"]]
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad moments entry: {exc}") from None
    if out["r_values"] is not None and not all(
            isinstance(r, list) and len(r) == out["d"] and all(_is_int(c) for c in r)
            for r in out["r_values"]):
        raise ConfigError("r_values must be a list of integer vectors of length d")
    if out["systems"] is not None:
        try:
            [SmallSystem(tuple(s["energies"]), s["V"], s["rho"]) for s in out["systems"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad systems entry: {exc}") from None
    return out


# ---------------------------------------------------------------------------
# output


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return repr(v) if math.isfinite(v) else ("nan" if v != v else ("inf" if v > 0 else "-inf"))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    return v


def rows_to_csv(rows):
    """CSV text with a header from the union of keys in first-seen order."""
    cols = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in cols])
    return buf.getvalue()


def write_result(out_dir, name, fmt, rows, meta, document=None):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{name}.{fmt}")
    if fmt == "csv":
        text = rows_to_csv(rows)
    else:
        text = json.dumps(_jsonable(document if document is not None else rows), indent=2,
                          sort_keys=True) + "\n"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    meta = dict(meta, created=_dt.datetime.now(_dt.timezone.utc).isoformat(), data_file=path)
    with open(os.path.join(out_dir, f"{name}.meta.json"), "w", encoding="utf-8") as fh:
        json.dump(_jsonable(meta), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


# ---------------------------------------------------------------------------
# shared construction


def _spec(cfg):
    return dispersion_from_dict(cfg["dispersion"])


def _table(cfg, L=None):
    spec = _spec(cfg)
    if isinstance(spec, CustomTable):
        lat = spec.lattice
    else:
        lat = build_lattice(cfg["d"], cfg["L"] if L is None else L)
    return spec, energy_table(spec, lat)


def _split(cfg, spec, table):
    """Returns the split and a note when the construction fell back."""
    cut = 0.0 if cfg["cut"] is None else cfg["cut"]
    if cfg["split"] == "threshold":
        return construct_split_threshold(table, cut), None
    try:
        return construct_split_lemma(table, spec, cfg["kappa"], cfg["enforce_l0"]), None
    except (LemmaPreconditionError, NonSmoothDispersionError) as exc:
        if cfg["split"] == "lemma":
            raise
        return construct_split_threshold(table, cut), f"threshold split used: {exc}"


def _rho(cfg, spec, table):
    if cfg["rho"] is not None:
        return float(cfg["rho"])
    if isinstance(spec, CustomTable):
        raise ConfigError("custom dispersions need an explicit rho")
    return rho_infinity(spec, table.lattice.d) + cfg["rho_excess"]


def _acceptance(table, split, rho, seed, n=2000):
    """Pilot acceptance rates of the mu1 condensate and mu0 rejection steps."""
    try:
        s0 = SamplerStats()
        sample_mu0(table, split, rho, make_rng(seed, 99), size=n, stats=s0)
        s1 = SamplerStats()
        sample_mu1(table, split, rho, make_rng(seed, 98), size=n, stats=s1)
    except ValueError:
        return {"acceptance_mu0": None, "acceptance_mu1": None}
    r1 = s1.acceptance_rate if s1.proposed else 1.0
    return {"acceptance_mu0": s0.acceptance_rate, "acceptance_mu1": r1}


# ---------------------------------------------------------------------------
# commands; each returns (rows, document or None, violations)


def cmd_table(cfg, seed):
    spec, table = _table(cfg)
    lat = table.lattice
    rows = []
    for i, n in enumerate(lat.modes):
        r = {f"n_{j + 1}": int(c) for j, c in enumerate(n)}
        r.update({f"k_{j + 1}": float(c) for j, c in enumerate(lat.k[i])})
        r["omega"] = float(table.omega[i])
        r["e"] = float(table.e[i])
        rows.append(r)
    return rows, None, 0


def cmd_split(cfg, seed):
    spec, table = _table(cfg)
    split, note = _split(cfg, spec, table)
    rho = _rho(cfg, spec, table)
    rep = check_assumptions(table, split, rho)
    bounds = bound_report(table, split, rho)
    doc = {
        "L": table.lattice.L, "d": table.lattice.d, "rho": rho,
        "split": split.to_dict(table.lattice),
        "assumptions": rep.to_dict(),
        "bounds": bounds.to_dict(),
        "note": note,
    }
    row = {"L": table.lattice.L, "d": table.lattice.d, "rho": rho, "V0": split.V0,
           "rho_c": split.rho_c, "delta": split.delta, "epsilon": split.epsilon,
           "tilde_delta": split.tilde_delta, "Delta": rep.Delta, "supercritical": rep.supercritical,
           "assumptions_hold": rep.ok, "C2": rep.C2, "w2_bound": bounds.w2_bound,
           "p_prime": bounds.p_prime, "vacuous": bounds.vacuous}
    return [row], doc, 0


_SAMPLE_FNS = {"mu0": sample_mu0, "mu1": sample_mu1, "mu1prime": sample_mu1prime}


def cmd_sample(cfg, seed):
    spec, table = _table(cfg)
    split, _ = _split(cfg, spec, table)
    rng = make_rng(seed, 0)
    if cfg["measure"] == "mu_plus":
        phi = sample_normal_fluid(table, split, rng, size=cfg["n_samples"])
    else:
        rho = _rho(cfg, spec, table)
        phi = _SAMPLE_FNS[cfg["measure"]](table, split, rho, rng, size=cfg["n_samples"])
    modes = table.lattice.modes
    rows = []
    for i, draw in enumerate(phi):
        for j, z in enumerate(draw):
            r = {"draw": i, "mode": j}
            r.update({f"n_{a + 1}": int(c) for a, c in enumerate(modes[j])})
            r["re"] = float(z.real)
            r["im"] = float(z.imag)
            rows.append(r)
    return rows, None, 0


def _moment_specs(cfg):
    if cfg["moments"] is not None:
        return [MomentSpec(tuple((tuple(x), t) for x, t in m)) for m in cfg["moments"]]
    o = (0,) * cfg["d"]
    return [MomentSpec(((o, 1),)), MomentSpec.power(o, 1), MomentSpec.power(o, 2)]


def cmd_moments(cfg, seed):
    rows, bad = [], 0
    for L in cfg["L_values"]:
        spec, table = _table(cfg, L)
        split, _ = _split(cfg, spec, table)
        rho = _rho(cfg, spec, table)
        res = compare_mu0_mu1_moments(table, split, rho, _moment_specs(cfg), cfg["n_samples"],
                                      seed, cfg["n_shifts"], cfg["chunk"], cfg["workers"])
        acc = _acceptance(table, split, rho, seed)
        for r in res:
            bad += r.violation
            rows.append({"L": L, "seed": seed, "n_samples": cfg["n_samples"],
                         "n_shifts": cfg["n_shifts"], **acc, **r.to_row()})
    return rows, None, bad


def cmd_w2(cfg, seed):
    rows, bad = [], 0
    for L in cfg["L_values"]:
        spec, table = _table(cfg, L)
        split, _ = _split(cfg, spec, table)
        rho = _rho(cfg, spec, table)
        est = estimate_w2_upper_main(table, split, rho, cfg["n_samples"], seed, cfg["n_pilot"],
                                     cfg["chunk"], cfg["workers"])
        above = bool(est.assumptions_hold and est.value - 3 * est.std_error > est.analytic_bound)
        bad += above
        d = est.to_dict()
        extra = d.pop("extra")
        rows.append({"L": L, "seed": seed, **_acceptance(table, split, rho, seed), "V0": split.V0,
                     **d, **extra, "norm": "(1/V) sum |Phi_k|^2", "exceeds_bound": above})
    return rows, None, bad


def cmd_gff(cfg, seed):
    spec, table = _table(cfg)
    split, _ = _split(cfg, spec, table)
    d = table.lattice.d
    rs = cfg["r_values"] or [[0] * d, [1] + [0] * (d - 1), [2] + [0] * (d - 1)]
    rows = []
    for r in rs:
        lat_val = normal_fluid_covariance_exact(table, split, np.array(r))
        cont = critical_gff_covariance(spec, d, np.array(r), cfg["tol"])
        rows.append({"L": table.lattice.L, "r": " ".join(map(str, r)),
                     "lattice_re": lat_val.real, "lattice_im": lat_val.imag,
                     "continuum_re": cont.real, "continuum_im": cont.imag,
                     "relative_difference": abs(lat_val - cont) / abs(cont)})
    return rows, None, 0


def cmd_oracle_check(cfg, seed):
    systems = cfg["systems"] or _DEFAULT_SYSTEMS
    rows, bad = [], 0
    for i, s in enumerate(systems):
        sys_ = SmallSystem(tuple(s["energies"]), s["V"], s["rho"])
        base = {"system": i, "energies": " ".join(repr(float(x)) for x in sys_.energies),
                "V": sys_.V, "rho": sys_.rho, "seed": seed, "n_samples": cfg["n_samples"]}
        for measure in ("mu0", "mu1", "mu1prime"):
            res = check_against_oracle(sys_, measure, cfg["n_samples"], make_rng(seed, 20, i).integers(2**63),
                                       workers=cfg["workers"])
            if res is None:
                rows.append({**base, "measure": measure, "status": "not_supercritical"})
                continue
            for r in res:
                bad += not r.passed
                rows.append({**base, **r.to_row(), "status": "pass" if r.passed else "fail"})
    return rows, None, bad


def cmd_sweep(cfg, seed):
    spec = _spec(cfg)
    rinf = rho_infinity(spec, cfg["d"], tol=cfg["tol"])
    rows = []
    for L in cfg["L_values"]:
        _, table = _table(cfg, L)
        split, _ = _split(cfg, spec, table)
        rows.append({"L": L, "V0": split.V0, "rho_c": split.rho_c, "rho_infinity": rinf,
                     "abs_error": abs(split.rho_c - rinf)})
    errs = [r["abs_error"] for r in rows]
    for r, prev in zip(rows[1:], errs):
        r["decreased"] = r["abs_error"] < prev
    return rows, None, 0


HANDLERS = {
    "table": cmd_table, "split": cmd_split, "sample": cmd_sample, "moments": cmd_moments,
    "w2": cmd_w2, "gff": cmd_gff, "oracle-check": cmd_oracle_check, "sweep": cmd_sweep,
}


def build_parser():
    p = argparse.ArgumentParser(prog="spherical", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--samples", type=int, dest="n_samples")
        sp.add_argument("--workers", type=int)
        sp.add_argument("--out")
        sp.add_argument("--format", choices=("csv", "json"))
        sp.add_argument("--L", type=int)
        sp.add_argument("--rho", type=float)
    return p


def load_config(args):
    cfg = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            cfg = json.load(fh)
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
    for key in ("seed", "n_samples", "workers", "out", "format", "L", "rho"):
        v = getattr(args, key)
        if v is not None:
            cfg[key] = v
    return validate_config(cfg)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        seed = resolve_seed(cfg["seed"])
        cfg["seed"] = seed
        if cfg["workers"] is None:
            cfg["workers"] = default_workers()
        rows, doc, bad = HANDLERS[args.command](cfg, seed)
        path = write_result(cfg["out"], args.command, cfg["format"], rows,
                            {"command": args.command, "config": cfg, "version": __version__,
                             "violations": bad}, doc)
    except Exception as exc:  # noqa: BLE001 - reported with a nonzero status
        print(f"spherical {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(path)
    if bad:
        print(f"{bad} invariant violation(s) reported", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
