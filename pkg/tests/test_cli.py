import csv
import math

import numpy as np
import pytest

from pilepinn import cli
from pilepinn.config import ConfigError, bundled_configs, dump_config, load_config, parse_config
from pilepinn.oracle import fd_solve
from pilepinn.trainer import InversionParam, TrainRecord

FORWARD = """\
mode = "forward"
coordinate_system = "plane_strain"

[geometry]
pile_diameter = 1.0
pile_length = 5.0
width = 10.0
depth = 10.0

[materials.P]
E = 5.0e9
nu = 0.25

[materials.S1]
E = 5.0e8
nu = {nu}

[load]
rule = "pile_head"
Q = 1.0e7

[network]
hidden_layers = 2
width = 8

[sampling]
points_per_region = 60

[training]
learning_rate = {lr}
epochs = 5
ntk_period = 0

[output]
grid = [5, 4]
"""


def write(tmp_path, text, name="case.toml"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


def test_config_round_trip():
    cfg = parse_config(FORWARD.format(nu=0.25, lr=0.003))
    again = parse_config(dump_config(cfg))
    assert again == cfg
    assert cfg.problem().region_set.names == ("P", "S1")


def test_invalid_poisson_ratio_reports_line(tmp_path, capsys):
    text = FORWARD.format(nu=0.6, lr=0.003)
    line = text.splitlines().index("nu = 0.6") + 1
    path = write(tmp_path, text)
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert info.value.line == line
    assert cli.main(["solve", str(path), "--out-dir", str(tmp_path / "out")]) == cli.EXIT_CONFIG
    assert f":{line}:" in capsys.readouterr().err


@pytest.mark.parametrize("text, fragment", [
    ('mode = "sideways"\n', "mode"),
    ("mode = \"forward\"\ncoordinate_system = \"plane_strain\"\n", "geometry"),
    ("mode = [\n", "syntax"),
])
def test_malformed_configs(text, fragment):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert fragment in str(info.value)


def test_forward_run_writes_field_and_history(tmp_path):
    path = write(tmp_path, FORWARD.format(nu=0.25, lr=0.003))
    out = tmp_path / "out"
    assert cli.main(["solve", str(path), "--out-dir", str(out), "--epochs", "3", "--seed", "2"]) == 0
    rows = read_csv(out / "field.csv")
    assert tuple(rows[0]) == cli.FIELD_COLUMNS + cli.NORMALIZED_COLUMNS
    assert len(rows) == 1 + 5 * 4
    for row in rows[1:]:
        assert float(row[11]) == float(row[3]) / 10.0
        assert float(row[12]) == float(row[4]) / 10.0
    assert (out / "field.csv").read_bytes().count(b"\r") == 0
    history = read_csv(out / "loss_history.csv")
    assert history[0][:3] == ["epoch", "total", "pde_x:P"]
    assert "lambda_cont_t:P|S1" in history[0]
    assert len(history) == 1 + 3


def test_oracle_and_model_exports_share_schema(tmp_path):
    cfg = parse_config(FORWARD.format(nu=0.25, lr=0.003))
    field = fd_solve(cfg.problem())
    cli.export_field(field, tmp_path / "fd.csv", (5, 4), vtk_path=tmp_path / "fd.vtk")
    rows = read_csv(tmp_path / "fd.csv")
    assert tuple(rows[0]) == cli.FIELD_COLUMNS + cli.NORMALIZED_COLUMNS
    pile_head = [r for r in rows[1:] if float(r[0]) == 0.0 and float(r[1]) == 0.0][0]
    assert pile_head[2] == "P" and float(pile_head[4]) > 0
    assert (tmp_path / "fd.vtk").read_text().startswith("# vtk DataFile")


def test_inversion_report_rows_and_blank_error(tmp_path):
    record = TrainRecord(("data_szz:P",), ("S1", "S2"))
    record.append(0, 1.0, 1.0, [1.0], [1.0], [2e8, 1e8], 0.0)
    record.append(1, 0.5, 0.5, [0.5], [1.0], [1.1e8, 3e7], 0.1)
    unknowns = [InversionParam("S1", truth=1e8), InversionParam("S2")]
    report, traj = cli.report_inversion(record, unknowns, tmp_path / "inversion_report.csv")
    rows = read_csv(report)
    assert rows[0] == ["region", "identified_E", "truth_E", "relative_error_percent", "epochs"]
    assert rows[1][0] == "S1" and math.isclose(float(rows[1][3]), 10.0, rel_tol=1e-12)
    assert rows[2][2] == "" and rows[2][3] == ""
    assert read_csv(traj)[0] == ["epoch", "E_S1", "E_S2"] and len(read_csv(traj)) == 3


def test_profile_round_trip(tmp_path):
    from pilepinn.loss import DataSet
    data = DataSet(np.array([[0.0, 0.0], [0.0, 2.5]]), np.array([-1e7, -4e6]))
    path = cli.write_profile(data, tmp_path / "profile.csv")
    back = cli.read_profile(path)
    assert np.array_equal(back.points, data.points) and np.array_equal(back.values, data.values)


def test_divergence_exit_code(tmp_path):
    path = write(tmp_path, FORWARD.format(nu=0.25, lr=50.0))
    out = tmp_path / "out"
    code = cli.main(["solve", str(path), "--out-dir", str(out), "--epochs", "60"])
    assert code == cli.EXIT_DIVERGED
    assert (out / "loss_history.csv").exists()


def test_bad_flags(tmp_path):
    path = write(tmp_path, FORWARD.format(nu=0.25, lr=0.003))
    assert cli.main(["solve", str(path), "--epochs", "0", "--out-dir", str(tmp_path)]) == cli.EXIT_CONFIG
    assert cli.main(["solve", str(tmp_path / "missing.toml")]) == cli.EXIT_CONFIG


@pytest.mark.parametrize("name", ["axisym_eta50", "plane_eta10_inverse"])
def test_bundled_configs_run(name, tmp_path):
    assert name in bundled_configs()
    out = tmp_path / name
    assert cli.main(["solve", name, "--epochs", "2", "--out-dir", str(out), "--threads", "1"]) == 0
    assert (out / "field.csv").exists() and (out / "loss_history.csv").exists()
    if "inverse" in name:
        rows = read_csv(out / "inversion_report.csv")
        assert rows[1][0] == "S1" and rows[1][2] != ""


def test_schedule_and_term_weights_reach_the_trainer():
    text = FORWARD.format(nu=0.25, lr=0.003).replace(
        "ntk_period = 0\n",
        "ntk_period = 0\nlr_decay = 0.5\nlr_decay_every = 200\n\n[training.term_weights]\ncont_u = 10.0\npde_z = 100\n")
    cfg = parse_config(text)
    assert parse_config(dump_config(cfg)) == cfg
    tc = cfg.train_config()
    assert tc.learning_rate_at(450) == 0.003 * 0.25
    assert dict(tc.term_weights) == {"cont_u": 10.0, "pde_z": 100}
    bad = text.replace("cont_u = 10.0", "cont_u = -1.0")
    with pytest.raises(ConfigError) as info:
        parse_config(bad)
    assert info.value.line == bad.splitlines().index("cont_u = -1.0") + 1
