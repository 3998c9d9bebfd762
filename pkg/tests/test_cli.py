import json

import numpy as np
import pytest

from levykr import cli
from levykr.measure import DiscreteMeasure
from levykr.rng import seed_ladder


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def test_parser_requires_subcommand():
    with pytest.raises(SystemExit):
        cli.build_parser().parse_args([])


def test_simulate(tmp_path, capsys):
    cfg = write_json(tmp_path / "c.json", {"particles": 5, "dt": 0.1, "record_times": [0, 1]})
    assert cli.main(["simulate", "--config", cfg, "--seed", "3", "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "trajectory.csv").read_text().splitlines()
    assert lines[0] == "time,particle_id,x_1" and len(lines) == 11
    assert "escaped particles: 0" in capsys.readouterr().out


def test_distance_weighted_and_bare(tmp_path, capsys):
    DiscreteMeasure(np.array([[0.0], [2.0]]), [0.5, 0.5]).to_csv(tmp_path / "a.csv")
    (tmp_path / "b.csv").write_text("x_1\n1.0\n3.0\n")
    assert cli.main(["distance", str(tmp_path / "a.csv"), str(tmp_path / "b.csv"),
                     "--exact"]) == 0
    head, row = capsys.readouterr().out.strip().splitlines()
    assert head == "value,solver,gap,wall_time"
    assert float(row.split(",")[0]) == pytest.approx(np.log(2), abs=1e-12)
    assert row.split(",")[1] == "exact"


def test_distance_entropic(tmp_path, capsys):
    DiscreteMeasure(np.array([[0.0], [2.0]]), [0.5, 0.5]).to_csv(tmp_path / "a.csv")
    assert cli.main(["distance", str(tmp_path / "a.csv"), str(tmp_path / "a.csv"),
                     "--entropic", "--reg", "0.05", "--cost", "plain"]) == 0
    assert capsys.readouterr().out.splitlines()[1].split(",")[1] == "entropic"


def test_distance_bad_file(tmp_path, capsys):
    (tmp_path / "a.csv").write_text("y\n1\n")
    assert cli.main(["distance", str(tmp_path / "a.csv"), str(tmp_path / "a.csv")]) == 2
    assert "error" in capsys.readouterr().err


def test_fpe(tmp_path):
    cfg = write_json(tmp_path / "c.json", {"h": 0.125, "dt": 0.01, "record_times": [0.5, 1.0]})
    assert cli.main(["fpe", "--config", cfg, "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "density.csv").read_text().splitlines()
    assert lines[0] == "time,center,mass" and len(lines) == 1 + 2 * 64


def test_mollify(tmp_path):
    cfg = write_json(tmp_path / "c.json", {"h": 1 / 64, "levels": [4, 8]})
    assert cli.main(["mollify", "--config", cfg, "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "mollify.csv").read_text().splitlines()
    assert lines[0] == "level,eps,delta_n,drift_gap,jump_gap2,jump_gap4" and len(lines) == 3


def test_terms(tmp_path):
    cfg = write_json(tmp_path / "c.json", {"h": 1 / 64, "drift_amp": 0.2})
    assert cli.main(["terms", "--config", cfg, "--out", str(tmp_path)]) == 0
    head, row = (tmp_path / "terms.csv").read_text().splitlines()
    assert float(row.split(",")[4]) > 0


def test_validate_exit_codes(tmp_path, capsys):
    good = write_json(tmp_path / "g.json", {"experiments": [
        {"kind": "relations-check", "relation_pairs": 3, "relation_points": 6,
         "particles": 16}]})
    assert cli.main(["validate", "--config", good, "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "verdicts.csv").exists()
    assert "PASS relations-check" in capsys.readouterr().out
    bad = write_json(tmp_path / "b.json", {"kind": "validate-scaling", "coefficients": "additive",
                                           "seeds": [0], "particles": 8})
    assert cli.main(["validate", "--config", bad, "--out", str(tmp_path / "o2")]) == 1


def test_validate_seed_override(tmp_path):
    cfg = write_json(tmp_path / "m.json", {"kind": "moment-check", "particles": 50,
                                           "seeds": [0, 1], "dt_ladder": [0.1, 0.05]})
    cli.main(["validate", "--config", cfg, "--seed", "7", "--out", str(tmp_path)])
    line = next(ln for ln in (tmp_path / "moment-check.csv").read_text().splitlines()
                if ln.startswith("# provenance: "))
    prov = json.loads(line[len("# provenance: "):])
    assert prov["seeds"] == [int(s) for s in seed_ladder(7, 2)]


def test_validate_requires_config():
    with pytest.raises(SystemExit):
        cli.main(["validate"])


def test_unknown_preset(tmp_path):
    cfg = write_json(tmp_path / "c.json", {"jump_measure": "nope"})
    assert cli.main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == 2
