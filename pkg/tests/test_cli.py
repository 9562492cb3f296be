"""End-to-end command-line pipeline and exit-code mapping."""

import pytest

from clonedyn.cli import (
    EXIT_IDENTIFIABILITY,
    EXIT_IO,
    EXIT_OK,
    EXIT_OPTIMIZER,
    EXIT_VALIDATION,
    main,
    read_calls,
    read_keyvalues,
    read_responsibilities,
    write_keyvalues,
)


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """simulate -> fit -> classify on a small cohort, shared across tests."""
    root = tmp_path_factory.mktemp("pipeline")
    sim_dir = root / "sim"
    fit_dir = root / "fit"
    cls_dir = root / "cls"
    assert (
        run(
            "simulate",
            "--n-clones", 1500,
            "--n-persons", 6,
            "--alpha", 1.0,
            "--beta", 150.0,
            "--pi", 0.25,
            "--seed", 42,
            "--output-dir", sim_dir,
        )
        == EXIT_OK
    )
    assert (
        run(
            "fit",
            "--input", sim_dir / "cohort.tsv",
            "--offsets", sim_dir / "offsets.tsv",
            "--min-total-reads", 0,
            "--seed", 7,
            "--output-dir", fit_dir,
        )
        == EXIT_OK
    )
    assert (
        run(
            "classify",
            "--input", sim_dir / "cohort.tsv",
            "--offsets", sim_dir / "offsets.tsv",
            "--responsibilities", fit_dir / "responsibilities.tsv",
            "--truth", sim_dir / "truth.tsv",
            "--min-total-reads", 0,
            "--threshold", 0.75,
            "--output-dir", cls_dir,
        )
        == EXIT_OK
    )
    return root


class TestPipeline:
    def test_simulate_outputs(self, pipeline):
        sim_dir = pipeline / "sim"
        for name in ("cohort.tsv", "offsets.tsv", "truth.tsv"):
            assert (sim_dir / name).stat().st_size > 0

    def test_fit_outputs(self, pipeline):
        fit_dir = pipeline / "fit"
        doc = read_keyvalues(fit_dir / "hyperparams.txt")
        assert 0.5 < float(doc["alpha"]) < 2.0
        assert 75.0 < float(doc["beta"]) < 300.0
        assert 0.1 < float(doc["pi"]) < 0.45
        assert doc["converged"] == "true"
        responsibilities = read_responsibilities(fit_dir / "responsibilities.tsv")
        assert len(responsibilities) == int(doc["n_clones"]) == 1500
        trace = (fit_dir / "fit_trace.tsv").read_text().strip().splitlines()
        assert len(trace) == int(doc["iterations"]) + 1
        logliks = [float(line.split("\t")[1]) for line in trace[1:]]
        assert all(b - a >= -1e-6 for a, b in zip(logliks, logliks[1:]))

    def test_classify_outputs(self, pipeline):
        cls_dir = pipeline / "cls"
        calls = read_calls(cls_dir / "calls.tsv")
        assert len(calls) == 1500
        oc = read_keyvalues(cls_dir / "operating_characteristics.txt")
        assert 0.0 <= float(oc["sensitivity"]) <= 1.0
        assert float(oc["specificity"]) > 0.9
        assert int(oc["tp"]) + int(oc["fp"]) + int(oc["tn"]) + int(oc["fn"]) == 1500

        per_person = (cls_dir / "per_person.tsv").read_text().strip().splitlines()
        assert per_person[0] == "person_id\tn_dynamic\tn_expanding\tn_contracting"
        assert len(per_person) == 1 + 6

        points = (cls_dir / "membership_points.tsv").read_text().strip().splitlines()
        assert len(points) == 1 + 1500
        assert points[0].endswith("truth_dynamic")

        trajectories = (cls_dir / "trajectories.tsv").read_text().strip().splitlines()
        assert len(trajectories) == 1 + sum(1 for _ in calls) * 3  # 3 follow-ups each

    def test_summarize_outputs(self, pipeline, tmp_path):
        cls_dir = pipeline / "cls"
        strata_path = tmp_path / "strata.tsv"
        lines = ["person_id\tstratum"] + [
            f"p{i:03d}\t{i % 2}" for i in range(6)
        ]
        strata_path.write_text("\n".join(lines) + "\n")
        out = tmp_path / "sum"
        assert (
            run(
                "summarize",
                "--input", cls_dir / "calls.tsv",
                "--strata", strata_path,
                "--cutoff-dynamic", 50,
                "--cutoff-direction", 25,
                "--output-dir", out,
            )
            == EXIT_OK
        )
        rows = (out / "association.tsv").read_text().strip().splitlines()
        assert rows[0].startswith("metric\tcutoff")
        metrics = {line.split("\t")[0] for line in rows[1:]}
        assert metrics == {"dynamic", "expanding", "contracting"}
        per_person = (out / "per_person.tsv").read_text().strip().splitlines()
        assert len(per_person) == 1 + 6

    def test_determinism_across_reruns(self, pipeline, tmp_path):
        sim_dir = pipeline / "sim"
        fit_dir = pipeline / "fit"
        out = tmp_path / "refit"
        assert (
            run(
                "fit",
                "--input", sim_dir / "cohort.tsv",
                "--offsets", sim_dir / "offsets.tsv",
                "--min-total-reads", 0,
                "--seed", 7,
                "--output-dir", out,
            )
            == EXIT_OK
        )
        for name in ("hyperparams.txt", "responsibilities.tsv", "fit_trace.tsv"):
            assert (out / name).read_bytes() == (fit_dir / name).read_bytes()


class TestConfigHandling:
    def test_config_file_with_flag_override(self, tmp_path):
        config = tmp_path / "sim.cfg"
        config.write_text(
            "# simulation settings\n"
            "n_clones = 300\n"
            "n_persons = 3\n"
            "alpha = 1.0\n"
            "beta = 120.0\n"
            "pi = 0.2\n"
            "seed = 5\n"
        )
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        assert run("simulate", "--config", config, "--output-dir", out_a) == EXIT_OK
        # flag overrides the config seed; different draw
        assert run("simulate", "--config", config, "--seed", 6, "--output-dir", out_b) == EXIT_OK
        assert (out_a / "cohort.tsv").read_bytes() != (out_b / "cohort.tsv").read_bytes()

    def test_missing_required_option(self, tmp_path):
        assert run("fit", "--output-dir", tmp_path / "x") == EXIT_VALIDATION

    def test_malformed_config(self, tmp_path):
        config = tmp_path / "bad.cfg"
        config.write_text("this is not a key value line\n")
        assert run("simulate", "--config", config, "--output-dir", tmp_path / "y") == EXIT_VALIDATION


class TestExitCodes:
    def test_parse_failure(self, tmp_path):
        bad = tmp_path / "bad.tsv"
        bad.write_text("person_id\ttime_index\tclone_id\tcount\np1\t0\ta\tnotanumber\n")
        assert (
            run("fit", "--input", bad, "--output-dir", tmp_path / "out") == EXIT_VALIDATION
        )

    def test_identifiability_failure(self, tmp_path):
        single = tmp_path / "single.tsv"
        single.write_text(
            "person_id\ttime_index\tclone_id\tcount\n"
            "p1\t0\ta\t10\n"
            "p1\t0\tb\t20\n"
            "p1\t0\tc\t30\n"
        )
        assert (
            run(
                "fit",
                "--input", single,
                "--min-total-reads", 0,
                "--output-dir", tmp_path / "out",
            )
            == EXIT_IDENTIFIABILITY
        )

    def test_missing_input_file(self, tmp_path):
        assert (
            run("fit", "--input", tmp_path / "nope.tsv", "--output-dir", tmp_path / "out")
            == EXIT_IO
        )

    def test_optimizer_failure(self, tmp_path, monkeypatch):
        import clonedyn.cli
        from clonedyn import OptimizerError

        def explode(*args, **kwargs):
            raise OptimizerError("no ascent step and no evaluable incumbent")

        monkeypatch.setattr(clonedyn.cli, "fit_em", explode)
        cohort = tmp_path / "cohort.tsv"
        cohort.write_text(
            "person_id\ttime_index\tclone_id\tcount\n"
            "p1\t0\ta\t10\np1\t1\ta\t20\np1\t0\tb\t5\np1\t1\tb\t6\n"
        )
        assert (
            run(
                "fit",
                "--input", cohort,
                "--min-total-reads", 0,
                "--output-dir", tmp_path / "out",
            )
            == EXIT_OPTIMIZER
        )


def test_keyvalue_round_trip(tmp_path):
    path = tmp_path / "doc.txt"
    write_keyvalues(path, {"alpha": 1.25, "converged": True, "iterations": 12, "name": "x"})
    values = read_keyvalues(path)
    assert values == {"alpha": "1.25", "converged": "true", "iterations": "12", "name": "x"}
