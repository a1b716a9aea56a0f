"""Command line interface: exit codes, output text, artifact files."""

import json

import pytest

from corpus import corpus_doc, corpus_path
from authprop.cli import (
    EXIT_BROKEN_TRACE,
    EXIT_DENIED,
    EXIT_INVALID,
    EXIT_OK,
    EXIT_VIOLATIONS,
    corpus_names,
    entrypoint,
    resolve_scenario_path,
)


def run_cli(*argv):
    return entrypoint(list(argv))


class TestCorpusResolution:
    def test_bundled_names(self):
        assert set(corpus_names()) == {
            "aggregation_xy",
            "attestation_gap",
            "due_diligence",
            "fault_nominal_delegation",
            "fault_scope_widening",
            "revocation_race",
        }

    def test_prefix_resolves_with_and_without_extension(self):
        a = resolve_scenario_path("corpus:due_diligence")
        b = resolve_scenario_path("corpus:due_diligence.json")
        assert a == b and a.exists()

    def test_plain_paths_pass_through(self, tmp_path):
        p = tmp_path / "s.json"
        assert resolve_scenario_path(str(p)) == p


class TestValidate:
    def test_valid_scenario(self, capsys):
        assert run_cli("validate", "corpus:due_diligence") == EXIT_OK
        assert "scenario ok" in capsys.readouterr().out

    def test_invalid_scenario(self, tmp_path, capsys):
        doc = corpus_doc("due_diligence")
        doc["graph"]["vertices"][0]["agent"] = "ghost"
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(doc), encoding="utf-8")
        assert run_cli("validate", str(path)) == EXIT_INVALID
        assert "unknown agent" in capsys.readouterr().err

    def test_unreadable_file(self, tmp_path, capsys):
        assert run_cli("validate", str(tmp_path / "missing.json")) == EXIT_INVALID


class TestRun:
    def test_completed_run_exits_zero(self, capsys):
        code = run_cli("run", "corpus:revocation_race", "--policy", "initiation")
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert "status: completed" in out
        assert "disclosure: complete" in out

    def test_denied_run_exits_one(self, capsys):
        code = run_cli("run", "corpus:revocation_race", "--policy", "access")
        assert code == EXIT_DENIED
        out = capsys.readouterr().out
        assert "status: denied" in out
        assert "denied at: v2-primary" in out

    def test_partial_run_reports_honestly(self, capsys):
        code = run_cli("run", "corpus:due_diligence", "--policy", "access")
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert "status: completed_partial" in out
        assert "disclosure: PARTIAL" in out
        assert "v3-memo" in out

    def test_missing_policy_is_refused_with_reason(self, capsys):
        assert run_cli("run", "corpus:revocation_race") == EXIT_INVALID
        err = capsys.readouterr().err
        assert "--policy is required" in err
        assert "policy decision" in err

    def test_invalid_scenario_path(self, capsys):
        assert run_cli("run", "/nonexistent.json", "--policy", "access") == EXIT_INVALID

    def test_trace_written_and_deterministic(self, tmp_path):
        out1 = tmp_path / "a.trace"
        out2 = tmp_path / "b.trace"
        for out in (out1, out2):
            assert (
                run_cli(
                    "run", "corpus:due_diligence", "--policy", "access", "--out", str(out)
                )
                == EXIT_OK
            )
        assert out1.read_bytes() == out2.read_bytes()

    def test_legacy_mode_completes_on_fault_fixture(self, capsys):
        compliant = run_cli("run", "corpus:fault_scope_widening", "--policy", "access")
        assert compliant == EXIT_DENIED
        legacy = run_cli(
            "run", "corpus:fault_scope_widening", "--policy", "access", "--mode", "legacy"
        )
        assert legacy == EXIT_OK


class TestAuditAndTaint:
    @pytest.fixture()
    def clean_trace(self, tmp_path):
        path = tmp_path / "clean.trace"
        assert run_cli("run", "corpus:due_diligence", "--policy", "access", "--out", str(path)) == EXIT_OK
        return path

    @pytest.fixture()
    def legacy_trace(self, tmp_path):
        path = tmp_path / "legacy.trace"
        code = run_cli(
            "run", "corpus:fault_nominal_delegation", "--policy", "access",
            "--mode", "legacy", "--out", str(path),
        )
        assert code == EXIT_OK
        return path

    def test_clean_trace_audits_clean(self, clean_trace, capsys):
        capsys.readouterr()
        assert run_cli("audit", str(clean_trace)) == EXIT_OK
        out = capsys.readouterr().out
        for sub in ("access", "chain", "aggregation", "delivery"):
            assert f"{sub}: clean" in out

    def test_violations_exit_four_and_name_the_record(self, legacy_trace, capsys):
        capsys.readouterr()
        assert run_cli("audit", str(legacy_trace)) == EXIT_VIOLATIONS
        out = capsys.readouterr().out
        assert "holder_mismatch" in out
        assert "record " in out

    def test_corrupted_trace_exits_three(self, clean_trace, capsys):
        blob = bytearray(clean_trace.read_bytes())
        blob[len(blob) // 2] ^= 0xFF
        clean_trace.write_bytes(bytes(blob))
        capsys.readouterr()
        assert run_cli("audit", str(clean_trace)) == EXIT_BROKEN_TRACE
        assert "trace integrity failure" in capsys.readouterr().err

    def test_missing_trace_file_exits_two(self):
        assert run_cli("audit", "/no/such.trace") == EXIT_INVALID

    def test_taint_reports_the_closure(self, clean_trace, capsys):
        capsys.readouterr()
        # Find an access record to use as the origin.
        from authprop.trace import TraceEvent, read_trace

        trace = read_trace(clean_trace)
        origin = next(
            r.seq for r in trace.records if r.event is TraceEvent.ACCESS_DECIDED
        )
        assert run_cli("taint", str(clean_trace), "--origin", str(origin)) == EXIT_OK
        out = capsys.readouterr().out
        assert f"origin: record {origin}" in out
        assert "tainted vertices:" in out
        assert "tainted artifacts:" in out

    def test_taint_rejects_non_access_origin(self, clean_trace, capsys):
        assert run_cli("taint", str(clean_trace), "--origin", "0") == EXIT_INVALID
        assert "not an access decision" in capsys.readouterr().err


class TestRace:
    def test_single_point_table(self, capsys):
        code = run_cli(
            "race", "--velocity", "1", "--ttl", "10", "--exec-count", "5",
            "--revoke-at", "1", "--horizon", "13",
        )
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert "velocity" in out
        assert "9" in out and "4" in out

    def test_csv_to_stdout(self, capsys):
        code = run_cli(
            "race", "--velocity", "120", "--ttl", "7", "--exec-count", "7",
            "--horizon", "10", "--csv",
        )
        assert code == EXIT_OK
        lines = capsys.readouterr().out.strip().split("\n")
        assert lines[0].startswith("velocity,ttl,exec_count")
        assert lines[1].split(",")[8] == "120.0"  # the ratio column

    def test_csv_to_file(self, tmp_path, capsys):
        target = tmp_path / "rows.csv"
        code = run_cli(
            "race", "--velocity", "2", "--ttl", "4", "--exec-count", "3",
            "--csv", str(target),
        )
        assert code == EXIT_OK
        assert target.exists()
        assert target.read_text(encoding="utf-8").startswith("velocity,")

    def test_sweep_grid_file(self, tmp_path, capsys):
        grid = tmp_path / "grid.json"
        grid.write_text(
            json.dumps(
                [
                    {"velocity": v, "ttl": 10, "exec_count": 5, "revoke_at": 1, "horizon": 13}
                    for v in (1, 10, 100)
                ]
            ),
            encoding="utf-8",
        )
        code = run_cli("race", "--sweep", str(grid), "--csv")
        assert code == EXIT_OK
        lines = capsys.readouterr().out.strip().split("\n")
        assert len(lines) == 4
        assert [row.split(",")[0] for row in lines[1:]] == ["1", "10", "100"]

    def test_plot_renders_a_figure_file(self, tmp_path, capsys):
        target = tmp_path / "race.png"
        code = run_cli(
            "race", "--velocity", "1", "--ttl", "10", "--exec-count", "5",
            "--plot", str(target),
        )
        assert code == EXIT_OK
        assert target.exists()
        assert target.stat().st_size > 1000
        assert target.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    def test_missing_parameters_exit_two(self, capsys):
        assert run_cli("race", "--velocity", "3") == EXIT_INVALID
        assert "--ttl" in capsys.readouterr().err

    def test_invalid_parameters_exit_two(self, capsys):
        code = run_cli("race", "--velocity", "0", "--ttl", "5", "--exec-count", "5")
        assert code == EXIT_INVALID
        assert "invalid race parameters" in capsys.readouterr().err

    def test_bad_sweep_grid_exits_two(self, tmp_path):
        grid = tmp_path / "grid.json"
        grid.write_text("{}", encoding="utf-8")
        assert run_cli("race", "--sweep", str(grid)) == EXIT_INVALID


class TestParser:
    def test_no_command_is_an_argparse_error(self):
        assert run_cli() == 2

    def test_unknown_command_is_an_argparse_error(self):
        assert run_cli("frobnicate") == 2
