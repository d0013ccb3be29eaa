import os

import numpy as np
import pytest

from febe.cli import main
from febe.config import ConfigError, parse_config
from febe.export import read_fields_csv


BASE = """
problem = scalar
material.p = 2.0
mesh.preset = square
mesh.n = 2
mesh.refine = 1
data.preset = quadratic
"""


def write_cfg(tmp_path, extra="", name="run.cfg"):
    path = tmp_path / name
    path.write_text(BASE + extra)
    return str(path)


def test_solve_smoke(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "out.dir = %s\n" % (tmp_path / "out"))
    assert main(["solve", "--config", cfg]) == 0
    out = tmp_path / "out"
    for f in ("manifest.txt", "solution.vtk", "fields.csv", "indicators.csv"):
        assert (out / f).exists()
    assert "scale_factor" in (out / "manifest.txt").read_text()


def test_invalid_p_names_key(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "material.p = 0.5\n")
    assert main(["solve", "--config", cfg]) == 2
    err = capsys.readouterr().err
    assert "material.p" in err


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown config key"):
        parse_config("nonsense.key = 1\n")


def test_comments_and_defaults():
    cfg = parse_config("# comment only\nmaterial.p = 3.0  # trailing\n")
    assert cfg["material.p"] == 3.0
    assert cfg["mesh.preset"] == "square"


def test_check_compat_warning(tmp_path, capsys):
    # file-borne constant traction with nonzero mean: incompatible data
    datafile = tmp_path / "data.csv"
    rows = ["kind,index,comp,value"]
    for l in range(8):
        rows.append("t0_panel,%d,0,1.0" % l)
    datafile.write_text("\n".join(rows) + "\n")
    cfg = write_cfg(tmp_path, "data.file = %s\nout.dir = %s\n"
                    % (datafile, tmp_path / "o2"))
    assert main(["solve", "--config", cfg, "--check-compat"]) == 0
    outtxt = capsys.readouterr().out
    assert "warning" in outtxt and "compatibility" in outtxt


def test_study_single_level(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "out.dir = %s\n" % (tmp_path / "out_study"))
    assert main(["study", "--config", cfg, "--levels", "1"]) == 0
    table = (tmp_path / "out_study" / "convergence_uniform.csv").read_text()
    lines = table.strip().split("\n")
    assert len(lines) == 2                 # header + one row
    assert lines[1].split(",")[-1] == "nan"


def test_oracle_command(tmp_path):
    cfg = write_cfg(tmp_path, "mesh.refine = 0\nmesh.preset = square-slip\n"
                              "data.preset = transition\nout.dir = %s\n"
                              % (tmp_path / "out_o"))
    assert main(["oracle", "--config", cfg]) == 0


def test_export_zero_solution_parses(tmp_path):
    datafile = tmp_path / "zero.csv"
    datafile.write_text("kind,index,comp,value\nu0_node,0,0,0.0\n")
    cfg = write_cfg(tmp_path, "data.file = %s\n" % datafile)
    dest = tmp_path / "exp"
    assert main(["export", "--config", cfg, "--dest", str(dest)]) == 0
    txt = (dest / "solution.vtk").read_text().split("\n")
    # minimal legacy VTK structure check
    assert txt[0].startswith("# vtk DataFile")
    assert txt[3] == "DATASET UNSTRUCTURED_GRID"
    npoints = int(txt[4].split()[1])
    k = 5 + npoints
    ncells = int(txt[k].split()[1])
    assert txt[k + ncells + 1].startswith("CELL_TYPES")
    fields = read_fields_csv(dest / "fields.csv")
    assert np.all(fields["u0"] == 0.0)
    assert len(fields["u0"]) == npoints


def test_csv_round_trip_bitwise(tmp_path):
    cfg = write_cfg(tmp_path, "out.dir = %s\n" % (tmp_path / "rt"))
    main(["solve", "--config", cfg])
    fields = read_fields_csv(tmp_path / "rt" / "fields.csv")
    # rewrite with the same format and reload: bitwise identical
    vals = np.column_stack([fields[k] for k in fields])
    text = "\n".join(",".join("%.17g" % x for x in row) for row in vals)
    vals2 = np.loadtxt(text.split("\n"), delimiter=",")
    assert np.array_equal(vals, vals2)


def test_reproducibility(tmp_path):
    cfg1 = write_cfg(tmp_path, "out.dir = %s\n" % (tmp_path / "r1"), "a.cfg")
    cfg2 = write_cfg(tmp_path, "out.dir = %s\n" % (tmp_path / "r2"), "b.cfg")
    main(["solve", "--config", cfg1])
    main(["solve", "--config", cfg2])
    f1 = read_fields_csv(tmp_path / "r1" / "fields.csv")
    f2 = read_fields_csv(tmp_path / "r2" / "fields.csv")
    for k in f1:
        assert np.array_equal(f1[k], f2[k]), k


def test_env_out_override(tmp_path, monkeypatch):
    monkeypatch.setenv("FEBE_OUT", str(tmp_path / "root"))
    cfg = write_cfg(tmp_path, "out.dir = sub\n")
    assert main(["solve", "--config", cfg]) == 0
    assert (tmp_path / "root" / "sub" / "manifest.txt").exists()


def test_solve_layerpotential_formulation(tmp_path):
    cfg = write_cfg(tmp_path,
                    "solver.formulation = layerpotential\n"
                    "mesh.preset = square-slip\ndata.preset = transition\n"
                    "mesh.refine = 0\nout.dir = %s\n" % (tmp_path / "lp"))
    assert main(["solve", "--config", cfg]) == 0
    assert (tmp_path / "lp" / "manifest.txt").exists()


def test_solve_vector_problem(tmp_path):
    body = """
problem = vector
material.p = 2.0
exterior.lambda = 1.3
mesh.preset = square-slip
mesh.n = 2
mesh.refine = 1
data.preset = stick-vec
"""
    p = tmp_path / "vec.cfg"
    p.write_text(body + "out.dir = %s\n" % (tmp_path / "vec_out"))
    assert main(["solve", "--config", str(p)]) == 0
    fields = read_fields_csv(tmp_path / "vec_out" / "fields.csv")
    assert "u1" in fields


def test_mesh_path_override(tmp_path):
    from febe import presets
    meshfile = tmp_path / "m.txt"
    meshfile.write_text(presets.square_text(3))
    cfg = write_cfg(tmp_path, "out.dir = %s\n" % (tmp_path / "ovr"))
    assert main(["solve", "--config", cfg, "--mesh", str(meshfile)]) == 0
    man = (tmp_path / "ovr" / "manifest.txt").read_text()
    assert str(meshfile) in man


def test_slip_side_without_slip_nodes(tmp_path):
    # a single S edge has no interior slip nodes: solve degenerates smoothly
    body = BASE.replace("mesh.n = 2", "mesh.n = 1").replace(
        "mesh.preset = square", "mesh.preset = square-slip").replace(
        "data.preset = quadratic", "data.preset = transition").replace(
        "mesh.refine = 1", "mesh.refine = 0")
    p = tmp_path / "tiny.cfg"
    p.write_text(body + "out.dir = %s\n" % (tmp_path / "tiny"))
    assert main(["solve", "--config", str(p)]) == 0


def test_problem_name_aliases(tmp_path):
    cfg = write_cfg(tmp_path, "problem = scalar-appendix\nout.dir = %s\n"
                    % (tmp_path / "alias"))
    assert main(["solve", "--config", cfg]) == 0


def test_bem_dump_flag(tmp_path):
    cfg = write_cfg(tmp_path, "bem.dump = true\nout.dir = %s\n"
                    % (tmp_path / "dump"))
    assert main(["solve", "--config", cfg]) == 0
    V = np.loadtxt(tmp_path / "dump" / "operators" / "V.csv", delimiter=",")
    assert V.shape[0] == V.shape[1]
