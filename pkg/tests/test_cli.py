import json
import textwrap

import pytest

from mfbsde import ConfigError
from mfbsde.cli import main
from mfbsde.config import parse_config

MINIMAL_PICARD = textwrap.dedent("""
    [run]
    mode = picard

    [grid]
    horizon = 1.0
    steps = 100

    [levy]
    atoms =

    [mc]
    paths = 2000
    seed = 7

    [driver]
    name = zero

    [terminal]
    kind = constant
    c = 1.0
""")


class TestParseConfig:
    def test_minimal_scenario_valid(self):
        cfg = parse_config(MINIMAL_PICARD)
        assert cfg.mode == "picard"
        assert cfg.grid.steps == 100
        assert cfg.levy.n_atoms == 0
        assert cfg.terminal.kind == "constant"

    def test_eta_below_floor_named(self):
        text = MINIMAL_PICARD.replace("name = zero", "name = linear") + \
            "\n[linear_coeffs]\neta1 = -1.5\n"
        with pytest.raises(ConfigError, match="eta1"):
            parse_config(text)

    def test_duplicate_atoms_rejected(self):
        text = MINIMAL_PICARD.replace("atoms =", "atoms = 1.0:0.5, 1.0:0.2")
        with pytest.raises(ConfigError, match="distinct"):
            parse_config(text)

    def test_all_errors_collected(self):
        text = textwrap.dedent("""
            [run]
            mode = nosuchmode

            [grid]
            horizon = -1.0
            steps = ten

            [mc]
            paths = 0

            [mystery]
            key = 1
        """)
        with pytest.raises(ConfigError) as err:
            parse_config(text)
        msg = str(err.value)
        for frag in ("run.mode", "grid.steps", "mc.paths", "mystery"):
            assert frag in msg

    def test_unknown_key_has_path(self):
        text = MINIMAL_PICARD + "\n[solver]\nmystery_knob = 3\n"
        with pytest.raises(ConfigError, match="solver.mystery_knob"):
            parse_config(text)


@pytest.fixture()
def picard_ini(tmp_path):
    path = tmp_path / "scenario.ini"
    path.write_text(MINIMAL_PICARD)
    return path


class TestCli:
    def test_validate(self, picard_ini, capsys):
        assert main(["validate", "--config", str(picard_ini)]) == 0
        assert "valid" in capsys.readouterr().out

    def test_validate_rejects_bad(self, tmp_path, capsys):
        bad = tmp_path / "bad.ini"
        bad.write_text("[run]\nmode = warp\n")
        assert main(["validate", "--config", str(bad)]) == 2

    def test_picard_trivial_run(self, picard_ini, tmp_path, capsys):
        out = tmp_path / "out"
        assert main(["picard", "--config", str(picard_ini),
                     "--out", str(out)]) == 0
        body = (out / "picard_solution.csv").read_text().splitlines()
        assert body[1] == "node,time,statistic,value,se"
        y0 = [ln for ln in body if ",y0," in ln]
        assert y0 and float(y0[0].split(",")[3]) == pytest.approx(1.0)
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["diagnostics"]["picard"]["converged"]

    def test_mode_mismatch(self, picard_ini, tmp_path):
        assert main(["linear", "--config", str(picard_ini),
                     "--out", str(tmp_path / "o")]) == 2

    def test_byte_identical_reruns(self, picard_ini, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert main(["picard", "--config", str(picard_ini),
                         "--out", str(out)]) == 0
            outs.append((out / "picard_solution.csv").read_bytes())
        assert outs[0] == outs[1]

    def test_seed_override_changes_noise(self, tmp_path):
        text = MINIMAL_PICARD.replace("kind = constant\nc = 1.0",
                                      "kind = brownian_linear\na = 1.0")
        ini = tmp_path / "s.ini"
        ini.write_text(text)
        vals = []
        for seed in ("1", "2"):
            out = tmp_path / f"s{seed}"
            assert main(["picard", "--config", str(ini), "--seed", seed,
                         "--out", str(out)]) == 0
            body = (out / "picard_solution.csv").read_text()
            vals.append(body)
        assert vals[0] != vals[1]

    def test_compare_violation_exits_4(self, tmp_path, capsys):
        text = textwrap.dedent("""
            [run]
            mode = compare

            [grid]
            horizon = 1.0
            steps = 50

            [levy]
            atoms = 1.0:0.5

            [mc]
            paths = 2000
            seed = 3

            [driver]
            name = zero

            [terminal]
            kind = constant
            c = 0.0

            [driver2]
            name = zero

            [terminal2]
            kind = constant
            c = 1.0

            [compare]
            n_probes = 50
        """)
        ini = tmp_path / "c.ini"
        ini.write_text(text)
        code = main(["compare", "--config", str(ini),
                     "--out", str(tmp_path / "out")])
        assert code == 4
        err = capsys.readouterr().err
        assert "terminal" in err and "xi1" in err

    def test_linear_mode_roundtrip(self, tmp_path):
        text = textwrap.dedent("""
            [run]
            mode = linear

            [grid]
            horizon = 1.0
            steps = 100

            [levy]
            atoms = 1.0:0.5

            [mc]
            paths = 2000
            seed = 5

            [terminal]
            kind = constant
            c = 2.0

            [linear_coeffs]
            alpha1 = 0.1
            alpha2 = 0.2
        """)
        ini = tmp_path / "l.ini"
        ini.write_text(text)
        out = tmp_path / "out"
        assert main(["linear", "--config", str(ini), "--out",
                     str(out)]) == 0
        body = (out / "linear_solution.csv").read_text().splitlines()
        y0 = [ln for ln in body if ",y0," in ln][0]
        assert float(y0.split(",")[3]) == pytest.approx(2.69972, abs=1e-3)

    def test_utility_and_qcheck_modes(self, tmp_path):
        utext = textwrap.dedent("""
            [run]
            mode = utility

            [grid]
            horizon = 1.0
            steps = 50

            [levy]
            atoms = 1.0:0.5

            [mc]
            paths = 3000
            seed = 9

            [wealth]
            x0 = 1.0
            b0 = 0.05
            sigma0 = 0.2
            gamma0 = 0.1

            [utility_coeffs]
            alpha0 = 0.05
            alpha1 = 0.03
            beta0 = 0.15
            eta0 = 0.2

            [theta]
            kind = constant
            c = 2.0

            [control]
            optimal = true
        """)
        ini = tmp_path / "u.ini"
        ini.write_text(utext)
        assert main(["utility", "--config", str(ini),
                     "--out", str(tmp_path / "uo")]) == 0
        man = json.loads((tmp_path / "uo" / "manifest.json").read_text())
        assert "J" in man["diagnostics"]["utility"]

        qtext = textwrap.dedent("""
            [run]
            mode = qcheck

            [grid]
            horizon = 1.0
            steps = 50

            [levy]
            atoms = 1.0:0.5

            [mc]
            paths = 3000
            seed = 9

            [qcheck]
            alpha1 = 0.1
            alpha2 = 0.15
            beta1 = 0.3
            eta1 = 0.4
            gamma = 0.05

            [terminal]
            kind = brownian_linear
            a = 0.5
            b = 1.0
        """)
        qini = tmp_path / "q.ini"
        qini.write_text(qtext)
        assert main(["qcheck", "--config", str(qini),
                     "--out", str(tmp_path / "qo")]) == 0
        man = json.loads((tmp_path / "qo" / "manifest.json").read_text())
        assert man["diagnostics"]["qcheck"]["agree"]
