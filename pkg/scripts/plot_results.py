"""Quick plots of CLI output: ``python3 scripts/plot_results.py spherical_out``.

Needs matplotlib, which the package itself does not depend on.
"""
import csv
import sys
from pathlib import Path


def _rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    out = Path(argv[0] if argv else "spherical_out")
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        sys.exit("matplotlib is required for plotting")

    sweep = out / "sweep.csv"
    if sweep.exists():
        rows = _rows(sweep)
        L = [int(r["L"]) for r in rows]
        err = [float(r["abs_error"]) for r in rows]
        fig, ax = plt.subplots()
        ax.loglog(L, err, "o-")
        ax.set_xlabel("L")
        ax.set_ylabel("|rho_c(L) - rho_inf|")
        fig.savefig(out / "sweep.png", dpi=120)

    w2 = out / "w2.csv"
    if w2.exists():
        rows = _rows(w2)
        L = [int(r["L"]) for r in rows]
        fig, ax = plt.subplots()
        ax.errorbar(L, [float(r["value"]) for r in rows], [float(r["std_error"]) for r in rows],
                    fmt="o", label="estimate")
        ax.plot(L, [float(r["analytic_bound"] or "nan") for r in rows], "s--", label="bound")
        ax.set_yscale("log")
        ax.set_xlabel("L")
        ax.legend()
        fig.savefig(out / "w2.png", dpi=120)


if __name__ == "__main__":
    main()
