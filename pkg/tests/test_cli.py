import csv

import pytest

from stickyspde.cli import COLUMNS, EXIT_CONFIG, EXIT_OK, SUBCOMMANDS, main

SMALL = {
    "simulate-spde": ["--replicates", "4", "--L", "4", "--n-cells", "64", "--t-end", "0.2"],
    "couple": ["--replicates", "6", "--L", "5", "--n-cells", "160"],
    "signed-excursions": ["--replicates", "4", "--L", "5", "--n-cells", "160", "--horizon", "4"],
    "sde-sticky": ["--replicates", "20"],
    "girsanov-survival": ["--replicates", "200", "--T", "1,4"],
    "lemma-check": ["--seeds", "5"],
}


def run(tmp_path, name, *extra, workers=1):
    out = tmp_path / f"w{workers}"
    code = main([name, "--seed", "3", "--out", str(out), "--workers", str(workers), *SMALL[name], *extra])
    return code, out


@pytest.mark.parametrize("name", SUBCOMMANDS)
def test_headers_are_stable(tmp_path, name):
    code, out = run(tmp_path, name)
    assert code in (0, 3)
    stem = name.replace("-", "_")
    with open(out / f"{stem}.csv") as fh:
        assert next(csv.reader(fh)) == COLUMNS[name]
    man = (out / f"{stem}_manifest.csv").read_text()
    assert "build_id," in man and "config.seed,3" in man and "p_prime,0.45" in man


def test_lemma_check_summary(tmp_path):
    code, out = run(tmp_path, "lemma-check")
    assert code == EXIT_OK
    assert "violations,0" in (out / "lemma_check_summary.csv").read_text().splitlines()


def test_couple_rejects_small_x0(tmp_path, capsys):
    code = main(["couple", "--eps", "0.2", "--x0", "0.3", "--out", str(tmp_path)])
    assert code == EXIT_CONFIG
    assert "2*b*eps < x0 < 1" in capsys.readouterr().err


def test_bad_settings_exit_2(tmp_path):
    assert main(["simulate-spde", "--ratio", "0.9", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["lemma-check", "--set", "nonsense=1", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["sde-sticky", "--mode", "other", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# small run\nreplicates = 3\nseed = 9\n")
    out = tmp_path / "o"
    assert main(["lemma-check", "--config", str(cfg), "--replicates", "2", "--out", str(out)]) == EXIT_OK
    man = (out / "lemma_check_manifest.csv").read_text()
    assert "config.seed,9" in man and "config.replicates,2" in man


def test_same_seed_twice_is_byte_identical(tmp_path):
    _, a = run(tmp_path / "a", "girsanov-survival")
    _, b = run(tmp_path / "b", "girsanov-survival")
    assert (a / "girsanov_survival.csv").read_bytes() == (b / "girsanov_survival.csv").read_bytes()
