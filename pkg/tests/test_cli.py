import csv
import json

import pytest

from spherical_condensate import cli
from spherical_condensate.dispersion import CustomTable, NearestNeighbour, energy_table
from spherical_condensate.lattice import build_lattice


def run(tmp_path, *args, config=None):
    argv = list(args) + ["--out", str(tmp_path)]
    if config is not None:
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps(config))
        argv += ["--config", str(p)]
    return cli.main(argv)


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def test_table_nn(tmp_path):
    assert run(tmp_path, "table", "--L", "4") == 0
    rows = read_csv(tmp_path / "table.csv")
    assert len(rows) == 64 and list(rows[0])[:3] == ["n_1", "n_2", "n_3"]
    meta = json.loads((tmp_path / "table.meta.json").read_text())
    assert meta["config"]["L"] == 4 and "created" in meta


def test_table_doubled_sine(tmp_path):
    assert run(tmp_path, "table", config={"dispersion": {"kind": "doubled_sine"}, "L": 8}) == 0
    rows = read_csv(tmp_path / "table.csv")
    assert sum(float(r["e"]) == 0.0 for r in rows) == 8


def test_table_custom_roundtrip(tmp_path):
    lat = build_lattice(3, 4)
    src = tmp_path / "omega.csv"
    CustomTable(lat, energy_table(NearestNeighbour(), lat).omega * 1.5).write_csv(src)
    assert run(tmp_path, "table", config={"dispersion": {"kind": "custom", "path": str(src)}}) == 0
    rows = read_csv(tmp_path / "table.csv")
    back = tmp_path / "back.csv"
    with open(back, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n_1", "n_2", "n_3", "omega"])
        for r in rows:
            w.writerow([r["n_1"], r["n_2"], r["n_3"], r["omega"]])
    assert back.read_bytes() == src.read_bytes()


def test_split_nn16(tmp_path):
    assert run(tmp_path, "split", "--L", "16", "--format", "json") == 0
    doc = json.loads((tmp_path / "split.json").read_text())
    assert doc["assumptions"]["supercritical"] and doc["split"]["delta"] == 0.0
    for key in ("V0", "rho_c", "epsilon"):
        assert key in doc["split"]
    assert doc["assumptions"]["C2"] > 0 and doc["bounds"]["w2_bound"] > 0 and doc["bounds"]["p_prime"] > 0


def test_split_doubled_sine(tmp_path):
    v0 = {}
    for L in (8, 9):
        assert run(tmp_path, "split", "--L", str(L), config={"dispersion": {"kind": "doubled_sine"}}) == 0
        v0[L] = int(read_csv(tmp_path / "split.csv")[0]["V0"])
    assert v0 == {8: 8, 9: 1}


def test_split_subcritical(tmp_path):
    assert run(tmp_path, "split", "--rho", "0.45") == 0
    row = read_csv(tmp_path / "split.csv")[0]
    assert row["supercritical"] == "false" and row["vacuous"] == "true" and row["C2"] == "inf"


def test_bad_config(tmp_path, capsys):
    assert run(tmp_path, "table", config={"bogus": 1}) == 1
    assert "unknown config keys" in capsys.readouterr().err
    assert run(tmp_path, "table", config={"L": 1}) == 1
    assert run(tmp_path, "table", config={"split": "nope"}) == 1
    assert run(tmp_path, "sample", "--rho", "0.1") == 1  # subcritical sampling refused


def test_seed_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("SPHERICAL_SEED", "77")
    assert run(tmp_path, "sample", "--samples", "2", "--L", "4") == 0
    a = (tmp_path / "sample.csv").read_bytes()
    assert json.loads((tmp_path / "sample.meta.json").read_text())["config"]["seed"] == 77
    assert run(tmp_path, "sample", "--samples", "2", "--L", "4", "--seed", "77") == 0
    assert (tmp_path / "sample.csv").read_bytes() == a
    assert run(tmp_path, "sample", "--samples", "2", "--L", "4", "--seed", "78") == 0
    assert (tmp_path / "sample.csv").read_bytes() != a
    rows = read_csv(tmp_path / "sample.csv")
    assert len(rows) == 2 * 64 and list(rows[0]) == ["draw", "mode", "n_1", "n_2", "n_3", "re", "im"]


def test_sweep(tmp_path):
    assert run(tmp_path, "sweep", config={"L_values": [8, 16, 32]}) == 0
    rows = read_csv(tmp_path / "sweep.csv")
    errs = [float(r["abs_error"]) for r in rows]
    assert errs == sorted(errs, reverse=True)


def test_oracle_check(tmp_path):
    cfg = {"systems": [{"energies": [0, 1], "V": 2, "rho": 1.0}, {"energies": [0, 1], "V": 2, "rho": 0.5}],
           "n_samples": 20000, "seed": 3}
    assert run(tmp_path, "oracle-check", config=cfg) == 0
    rows = read_csv(tmp_path / "oracle-check.csv")
    assert {r["status"] for r in rows} == {"pass", "not_supercritical"}


def test_moments_and_w2_deterministic(tmp_path):
    cfg = {"n_samples": 1000, "seed": 11, "L_values": [4, 6], "rho": 2.0, "n_pilot": 2000, "workers": 1}
    for cmd in ("moments", "w2"):
        assert run(tmp_path, cmd, config=cfg) == 0
        a = (tmp_path / f"{cmd}.csv").read_bytes()
        assert run(tmp_path, cmd, config={**cfg, "workers": 2}) == 0
        assert (tmp_path / f"{cmd}.csv").read_bytes() == a
        rows = read_csv(tmp_path / f"{cmd}.csv")
        assert all(r["seed"] == "11" for r in rows) and "acceptance_mu0" in rows[0]


def test_gff(tmp_path):
    assert run(tmp_path, "gff", "--L", "8", config={"tol": 1e-6}) == 0
    rows = read_csv(tmp_path / "gff.csv")
    assert [r["r"] for r in rows] == ["0 0 0", "1 0 0", "2 0 0"]


def test_rows_to_csv_union_of_keys():
    text = cli.rows_to_csv([{"a": 1, "b": 0.1}, {"a": 2, "c": True}])
    assert text == "a,b,c\n1,0.1,\n2,,true\n"
