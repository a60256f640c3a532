import csv
import io
import json
import math

import pytest

from qbcharge import cli, thermo

from conftest import P1

FAST = {"restarts": 2, "max_iters": 800}


def write_config(tmp_path, name="cfg.json", **overrides):
    cfg = {
        "beta": 1.0,
        "extension": {"kind": "qubit-family", "alpha": [1, 0]},
        "battery": {"kind": "pure", "amplitudes": [2 ** -0.5, 2 ** -0.5]},
        "optimizer": dict(FAST),
    }
    cfg.update(overrides)
    path = tmp_path / name
    path.write_text(json.dumps(cfg, indent=2))
    return path


def run(args, capsys):
    code = cli.main([str(a) for a in args])
    out, err = capsys.readouterr()
    return code, out, err


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_compute_alpha_one_record(tmp_path, capsys):
    code, out, _ = run(["compute", "--config", write_config(tmp_path)], capsys)
    assert code == 0
    assert out.splitlines()[0].split(",") == cli.COLUMNS
    (r,) = rows(out)
    assert float(r["w_weak_raw"]) == pytest.approx(0.5, abs=1e-4)
    assert float(r["w_strong_raw"]) == pytest.approx(0.5, abs=1e-4)
    assert abs(float(r["gap"])) <= 1e-4
    assert r["converged_weak"] in ("true", "false") and r["version"]


def test_compute_thermal_map_record(tmp_path, capsys):
    path = write_config(tmp_path, extension={"kind": "qubit-family", "alpha": 0},
                        battery={"kind": "random", "purity": "mixed", "seed": 3})
    code, out, _ = run(["compute", "--config", path], capsys)
    (r,) = rows(out)
    assert code == 0
    assert float(r["w_weak_clamped"]) <= 1e-6
    assert float(r["w_strong_raw"]) == pytest.approx(P1, abs=1e-6)
    assert float(r["w_strong_raw"]) == pytest.approx(0.268941, abs=1e-6)


def test_compute_is_byte_reproducible_and_lf_terminated(tmp_path, capsys):
    path = write_config(tmp_path, battery={"kind": "random", "purity": 0.8, "seed": 1})
    outs = []
    for k in range(2):
        out = tmp_path / f"o{k}.csv"
        assert run(["compute", "--config", path, "--out", out], capsys)[0] == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    assert b"\r" not in outs[0] and outs[0].endswith(b"\n")


def test_compute_json_format(tmp_path, capsys):
    code, out, _ = run(["compute", "--config", write_config(tmp_path), "--format", "json"], capsys)
    (rec,) = json.loads(out)
    assert code == 0 and list(rec) == cli.COLUMNS
    assert rec["alpha"] == [1.0, 0.0]


def test_seed_flag_overrides_config(tmp_path, capsys):
    _, out, _ = run(["compute", "--config", write_config(tmp_path), "--seed", 17], capsys)
    assert rows(out)[0]["seed"] == "17"


def test_malformed_amplitudes_exit_two_without_output(tmp_path, capsys):
    path = write_config(tmp_path, battery={"kind": "pure", "amplitudes": [1, 1]})
    out = tmp_path / "never.csv"
    code, _, err = run(["compute", "--config", path, "--out", out], capsys)
    assert code == 2 and not out.exists()
    assert "battery.amplitudes" in err and "line" in err


@pytest.mark.parametrize("patch,needle", [
    ({"beta": 0}, "beta"),
    ({"beta": "warm"}, "beta"),
    ({"extension": {"kind": "qubit-family", "alpha": [0.9, 0.9]}}, "extension.alpha"),
    ({"extension": {"kind": "swap"}}, "extension.kind"),
    ({"battery": {"kind": "mixed", "eigenvalues": [0.5, 0.6], "eigenvectors": [[1, 0], [0, 1]]}},
     "battery.eigenvalues"),
    ({"battery": {"kind": "mixed", "eigenvalues": [0.5, 0.5], "eigenvectors": [[1, 0], [1, 0]]}},
     "battery.eigenvectors"),
    ({"optimizer": {"restarts": 0}}, "optimizer.restarts"),
    ({"hamiltonian_s": [1, 0]}, "hamiltonian_s"),
    ({"colour": "blue"}, "colour"),
])
def test_invalid_configs_exit_two(tmp_path, capsys, patch, needle):
    code, _, err = run(["compute", "--config", write_config(tmp_path, **patch)], capsys)
    assert code == 2
    assert needle in err


def test_json_syntax_error_reports_line(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text('{\n  "beta": 1.0,\n  "battery": {,}\n}\n')
    code, _, err = run(["compute", "--config", path], capsys)
    assert code == 2 and "line 3" in err


def test_capability_errors_exit_three(tmp_path, capsys):
    big = write_config(tmp_path, "big.json", hamiltonian_s=[0, 1, 2, 3, 4], hamiltonian_b=[0, 1, 2, 3, 4],
                       extension={"kind": "random-block", "seed": 1},
                       battery={"kind": "random", "purity": "pure", "seed": 1})
    assert run(["compute", "--config", big], capsys)[0] == 3
    cold = write_config(tmp_path, "cold.json", beta="inf", hamiltonian_s=[0, 1], hamiltonian_b=[0, 0],
                        extension={"kind": "random-block", "seed": 1})
    assert run(["compute", "--config", cold], capsys)[0] == 3


def test_random_block_extension_compute(tmp_path, capsys):
    path = write_config(tmp_path, hamiltonian_s=[0, 1], hamiltonian_b=[0, 1],
                        extension={"kind": "random-block", "seed": 4},
                        battery={"kind": "random", "purity": "pure", "seed": 2})
    code, out, _ = run(["compute", "--config", path], capsys)
    (r,) = rows(out)
    assert code == 0 and r["alpha"] == ""
    assert float(r["w_strong_raw"]) == pytest.approx(float(r["e_sigma"]), abs=1e-6)


def test_sweep_alpha_gap_closes_at_one(tmp_path, capsys):
    code, out, _ = run(["sweep", "--config", write_config(tmp_path), "--sweep", "alpha", "0,0.25,0.5,0.75,1"],
                       capsys)
    recs = rows(out)
    assert code == 0 and [r["alpha"] for r in recs] == ["0.0", "0.25", "0.5", "0.75", "1.0"]
    gaps = [float(r["gap"]) for r in recs]
    assert all(b <= a + 1e-9 for a, b in zip(gaps, gaps[1:]))
    assert abs(gaps[-1]) <= 1e-4


def test_sweep_beta_gap_vanishes_when_cold(tmp_path, capsys):
    path = write_config(tmp_path, extension={"kind": "qubit-family", "alpha": 0.5})
    code, out, _ = run(["sweep", "--config", path, "--sweep", "beta", "0.5,1,2,5,50"], capsys)
    gaps = [float(r["gap"]) for r in rows(out)]
    assert code == 0 and len(gaps) == 5
    assert gaps[0] > gaps[-1] and abs(gaps[-1]) <= 1e-6


def test_sweep_angle_and_mixing(tmp_path, capsys):
    code, out, _ = run(["sweep", "--config", write_config(tmp_path), "--sweep", "angle", "0.3,1.2"], capsys)
    recs = rows(out)
    assert code == 0
    for theta, r in zip((0.3, 1.2), recs):
        assert float(r["w_weak_raw"]) == pytest.approx(math.sin(theta) ** 2, abs=1e-4)
    code, out, _ = run(["sweep", "--config", write_config(tmp_path), "--sweep", "p", "0.75"], capsys)
    (r,) = rows(out)
    h = -0.75 * math.log(0.75) - 0.25 * math.log(0.25)
    assert code == 0
    assert float(r["w_weak_closed_form"]) == pytest.approx(float(r["e_sigma"]) - h, abs=1e-6)


@pytest.mark.parametrize("sweep", [["alpha", ""], ["gamma", "1,2"], ["beta", "cold"]])
def test_bad_sweeps_exit_two(tmp_path, capsys, sweep):
    assert run(["sweep", "--config", write_config(tmp_path), "--sweep", *sweep], capsys)[0] == 2


def test_verify_single_check(tmp_path, capsys):
    out = tmp_path / "v.csv"
    code, text, _ = run(["verify", "--suite", "case1", "--instances", 3, "--seed", 7, "--out", out], capsys)
    assert code == 0 and "case1" in text
    recs = rows(out.read_text())
    assert len(recs) == 1 and recs[0]["check_name"] == "case1" and recs[0]["passed"] == "true"


def test_verify_json_carries_details(tmp_path, capsys):
    out = tmp_path / "v.json"
    run(["verify", "--suite", "thm2", "--instances", 2, "--out", out, "--format", "json"], capsys)
    (rep,) = json.loads(out.read_text())
    assert len(rep["details"]) == 2 and "inputs" in rep["details"][0]


def test_verify_unknown_check_and_usage_errors(capsys):
    assert run(["verify", "--suite", "lemma7"], capsys)[0] == 2
    assert run(["verify", "--instances", 0], capsys)[0] == 2
    assert run(["explode"], capsys)[0] == 2
    assert run(["verify", "--workers", 0], capsys)[0] == 2


def test_worker_env_default(monkeypatch):
    monkeypatch.setenv(cli.WORKERS_ENV, "3")
    assert cli._default_workers() == 3
    monkeypatch.setenv(cli.WORKERS_ENV, "many")
    with pytest.raises(cli.ConfigError):
        cli._default_workers()


def test_sign_flipped_free_energy_is_caught(monkeypatch, capsys):
    original = thermo.free_energy

    def flipped(rho, h, beta, rescaled=False):
        return -original(rho, h, beta, rescaled)

    monkeypatch.setattr(thermo, "free_energy", flipped)
    code, out, _ = run(["verify", "--suite", "prop1", "--instances", 4, "--workers", 1], capsys)
    assert code == 1 and "FAIL" in out
