"""Config files, snapshots, CSV output, subcommand dispatch and the CLI."""

import csv
import json

import numpy as np
import pytest

from moistpe import cli
from moistpe.cli_io import snapshot
from moistpe.cli_io.config_file import apply_overrides, echo_config, parse_config
from moistpe.cli_io.dispatch import dispatch
from moistpe.cli_io.timeseries import read_timeseries, write_records, write_timeseries
from moistpe.core.errors import ConfigError, SnapshotFormatError
from moistpe.models.fields import Grids
from moistpe.schemas.config import Config
from moistpe.schemas.reports import TIMESERIES_COLUMNS


@pytest.mark.unit
class TestConfigFile:
    """Parsing, validation errors and the effective-config echo."""

    def test_small_config(self, small_config):
        """Given keys are parsed; the rest keep their defaults."""
        assert small_config.resolution.L == 5
        assert small_config.resolution.K == 4
        assert small_config.stepper.dt == 0.02
        assert small_config.ensemble.gamma_scales == [1e-4, 1e-5]
        assert small_config.model == Config().model

    def test_empty_text_gives_defaults(self):
        """Comments and blank lines only: every section at its default."""
        assert parse_config("# nothing here\n\n") == Config()

    @pytest.mark.parametrize(
        "text,key,line",
        [
            ("[model]\nP = 1.0\np0 = 2.0\n", "model", 1),
            ("[stepper]\ndt = 0.1\nbogus = 3\n", "stepper.bogus", 3),
            ("[run]\nseed = 1\n\n[nope]\n", "nope", 4),
            ("[resolution]\nL = five\n", "resolution.L", 2),
            ("[stepper]\ndt = 0.1\ndt = 0.2\n", "stepper.dt", 3),
            ("dt = 0.1\n", "dt", 1),
            ("[resolution]\nL = 15\nn_lat = 10\n", "resolution", 1),
        ],
    )
    def test_errors_name_key_and_line(self, text, key, line):
        """Every rejected entry reports where it came from."""
        with pytest.raises(ConfigError) as info:
            parse_config(text)
        assert info.value.key == key
        assert info.value.line == line
        assert info.value.exit_code == 2

    def test_duplicate_section(self):
        """A section may appear once."""
        with pytest.raises(ConfigError):
            parse_config("[run]\n[run]\n")

    def test_echo_reproduces_config(self, small_config):
        """Parsing the echoed effective config gives the same config."""
        text = echo_config(small_config)
        assert "[dimbound]" in text and "advection = true" in text
        assert parse_config(text) == small_config

    def test_overrides(self, small_config):
        """section.key=value entries replace single values."""
        config = apply_overrides(small_config, ["stepper.dt=0.01", "model.advection = false"])
        assert config.stepper.dt == 0.01
        assert config.model.advection is False
        assert config.resolution == small_config.resolution

    @pytest.mark.parametrize("override", ["dt=0.1", "nope.x=1", "stepper.bogus=1", "stepper.dt=-1"])
    def test_bad_overrides(self, small_config, override):
        """Malformed, unknown or invalid overrides are config errors."""
        with pytest.raises(ConfigError):
            apply_overrides(small_config, [override])


@pytest.mark.unit
class TestSnapshot:
    """Binary snapshot format."""

    def test_round_trip_is_bit_exact(self, grids, state, tmp_path):
        """Every stored value and the time come back unchanged."""
        path = tmp_path / "state.snap"
        snapshot.write_snapshot(state.with_time(1.25), path, grids)
        back = snapshot.read_snapshot(path)
        np.testing.assert_array_equal(back.v.theta, state.v.theta)
        np.testing.assert_array_equal(back.v.phi, state.v.phi)
        np.testing.assert_array_equal(back.T, state.T)
        np.testing.assert_array_equal(back.q, state.q)
        assert back.time == 1.25
        assert not path.with_name("state.snap.tmp").exists()

    def test_failed_write_leaves_no_temporary(self, grids, state, tmp_path, monkeypatch):
        """A write that raises mid-file removes its partial output."""

        def broken_header(*args, **kwargs):
            raise OSError("disk full")

        monkeypatch.setattr(snapshot, "make_header", broken_header)
        path = tmp_path / "state.snap"
        with pytest.raises(OSError, match="disk full"):
            snapshot.write_snapshot(state, path, grids)
        assert not path.with_name("state.snap.tmp").exists()
        assert not path.exists()

    def test_header_fields(self, grids, state, tmp_path):
        """The header alone describes the payload."""
        path = tmp_path / "state.snap"
        snapshot.write_snapshot(state, path, grids)
        header = snapshot.read_snapshot_header(path)
        assert header["magic"] == "MOISTPE" and header["version"] == 1
        assert (header["L"], header["n_lat"], header["n_lon"], header["K"]) == (7, 12, 24, 8)
        assert header["field_order"] == ["v_theta", "v_phi", "T", "q"]
        assert header["payload_elements"] == 4 * 12 * 24 * 8
        size = path.stat().st_size
        assert size == snapshot.HEADER_DTYPE.itemsize + 8 * header["payload_elements"]

    def test_default_resolution_payload(self):
        """Payload length follows from the grid recorded in the header."""
        header = snapshot.make_header(Grids.build(15, 24, 48, 9), 0.0)[0]
        assert snapshot.payload_elements(header) == 4 * 24 * 48 * 9

    def test_truncated_payload(self, grids, state, tmp_path):
        """A short payload is rejected."""
        path = tmp_path / "state.snap"
        snapshot.write_snapshot(state, path, grids)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(SnapshotFormatError) as info:
            snapshot.read_snapshot(path)
        assert info.value.exit_code == 6

    def test_short_file(self, tmp_path):
        """Fewer bytes than a header is a format error."""
        path = tmp_path / "short.snap"
        path.write_bytes(b"MOIST")
        with pytest.raises(SnapshotFormatError):
            snapshot.read_snapshot(path)

    def test_bad_magic(self, grids, state, tmp_path):
        """Files without the tag are rejected."""
        path = tmp_path / "state.snap"
        snapshot.write_snapshot(state, path, grids)
        blob = bytearray(path.read_bytes())
        blob[:7] = b"NOTSNAP"
        path.write_bytes(bytes(blob))
        with pytest.raises(SnapshotFormatError):
            snapshot.read_snapshot_header(path)

    def test_unknown_version(self, grids, state, tmp_path):
        """A newer version number is rejected with the version it found."""
        assert snapshot.HEADER_DTYPE.fields["version"][1] == 8
        path = tmp_path / "state.snap"
        snapshot.write_snapshot(state, path, grids)
        blob = bytearray(path.read_bytes())
        blob[8:12] = (2).to_bytes(4, "little")
        path.write_bytes(bytes(blob))
        with pytest.raises(SnapshotFormatError) as info:
            snapshot.read_snapshot(path)
        assert info.value.detail["version"] == 2

    def test_state_grid_mismatch(self, tiny_grids, state, tmp_path):
        """A state is only written against its own grid."""
        with pytest.raises(SnapshotFormatError):
            snapshot.write_snapshot(state, tmp_path / "x.snap", tiny_grids)


@pytest.mark.unit
class TestTimeseries:
    """CSV writers and reader."""

    def test_header_only(self, tmp_path):
        """No rows still writes the header."""
        path = tmp_path / "ts.csv"
        assert write_timeseries([], path) == 0
        assert path.read_text() == ",".join(TIMESERIES_COLUMNS) + "\n"
        assert read_timeseries(path) == {name: [] for name in TIMESERIES_COLUMNS}

    def test_full_precision(self, tmp_path):
        """Floats survive the text round trip exactly."""
        path = tmp_path / "values.csv"
        values = [0.1 + 0.2, 1.0 / 3.0, 2.0**-40]
        write_records([{"x": v, "y": -v} for v in values], path, ("x", "y"))
        back = read_timeseries(path)
        assert back["x"] == values
        assert back["y"] == [-v for v in values]

    def test_cell_formats(self, tmp_path):
        """Missing values are empty cells and booleans are lower case."""
        path = tmp_path / "cells.csv"
        write_records([{"a": None, "b": True, "c": "T"}], path, ("a", "b", "c"))
        assert path.read_text() == "a,b,c\n,true,T\n"


@pytest.mark.unit
class TestDispatch:
    """Subcommands driven directly from a config."""

    def test_dimbound(self, output_dir, capsys):
        """Default constants print the reference value and write the JSON record."""
        assert dispatch("dimbound", Config(), output_dir) == 0
        assert capsys.readouterr().out.strip().startswith("2.478")
        record = json.loads((output_dir / "dimbound.json").read_text())
        assert record["N"] == 1 and record["value"] == pytest.approx(2.4784, abs=1e-4)
        assert (output_dir / "metrics.prom").exists()

    def test_unknown_subcommand(self, output_dir):
        """Unknown names are configuration errors."""
        with pytest.raises(ConfigError) as info:
            dispatch("explode", Config(), output_dir)
        assert info.value.key == "subcommand"

    def test_spectrum(self, small_config, output_dir):
        """One row per mode of every component."""
        assert dispatch("spectrum", small_config, output_dir) == 0
        with open(output_dir / "spectrum.csv", newline="") as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 144 + 144 + 245
        velocity = [r for r in rows if r["component"] == "v"]
        assert float(velocity[0]["eigenvalue"]) == pytest.approx(2.0)

    def test_verify(self, small_config, output_dir, capsys):
        """Identities and eigenrelations pass on the small grid."""
        assert dispatch("verify", small_config, output_dir) == 0
        assert "checks passed" in capsys.readouterr().out
        summary = json.loads((output_dir / "verify_summary.json").read_text())
        assert summary["status"] == "ok"
        with open(output_dir / "identities.csv", newline="") as f:
            names = [r["name"] for r in csv.DictReader(f)]
        assert "robin_eigen" in names and "vector_advection" in names


@pytest.mark.integration
class TestRunCommand:
    """Full run on the small configuration."""

    def test_artifacts(self, small_config, output_dir):
        """A run writes its effective config, tables, snapshot and monitor summary."""
        assert dispatch("run", small_config, output_dir) == 0
        artifacts = (
            "config_effective.ini",
            "timeseries.csv",
            "budget.csv",
            "final.snap",
            "monitors.json",
        )
        for name in artifacts:
            assert (output_dir / name).exists(), name
        assert parse_config((output_dir / "config_effective.ini").read_text()) == small_config
        series = read_timeseries(output_dir / "timeseries.csv")
        assert series["t"] == pytest.approx([0.0, 0.04, 0.08, 0.12, 0.16, 0.2])
        assert max(series["constraint_residual"]) <= 1e-10
        final = snapshot.read_snapshot_header(output_dir / "final.snap")
        assert final["time"] == pytest.approx(0.2)
        monitors = json.loads((output_dir / "monitors.json").read_text())
        assert monitors["steps"] == 10

    def test_runs_are_reproducible(self, small_config, tmp_path):
        """The same config and seed give byte-identical time series."""
        first, second = tmp_path / "a", tmp_path / "b"
        dispatch("run", small_config, first)
        dispatch("run", small_config, second)
        assert (first / "timeseries.csv").read_bytes() == (second / "timeseries.csv").read_bytes()


@pytest.mark.unit
class TestMain:
    """Command-line entry point and exit codes."""

    def test_dimbound_with_override(self, output_dir, capsys):
        """--set changes one entry; the bound is linear in N."""
        status = cli.main(["dimbound", "--output", str(output_dir), "--set", "dimbound.N=2"])
        assert status == 0
        assert capsys.readouterr().out.strip().startswith("4.956")

    def test_config_file(self, small_config_text, output_dir, tmp_path):
        """--config reads the file."""
        path = tmp_path / "small.ini"
        path.write_text(small_config_text)
        assert cli.main(["spectrum", "--config", str(path), "--output", str(output_dir)]) == 0
        assert (output_dir / "spectrum.csv").exists()

    def test_bad_config_exit_code(self, output_dir, tmp_path, capsys):
        """Config errors exit with status 2 and a JSON failure summary."""
        path = tmp_path / "bad.ini"
        path.write_text("[model]\np0 = 5.0\n")
        assert cli.main(["dimbound", "--config", str(path), "--output", str(output_dir)]) == 2
        summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert summary["command"] == "dimbound"
        assert summary["failures"][0]["error"] == "ConfigError"
        assert summary["failures"][0]["key"] == "model"

    def test_missing_config_file(self, output_dir, tmp_path):
        """An unreadable config file is an I/O failure."""
        missing = tmp_path / "missing.ini"
        assert cli.main(["dimbound", "--config", str(missing), "--output", str(output_dir)]) == 1

    def test_unknown_subcommand_is_usage_error(self):
        """argparse rejects names outside the command table."""
        with pytest.raises(SystemExit) as info:
            cli.main(["bogus"])
        assert info.value.code == 2


@pytest.mark.slow
class TestDefaultResolution:
    """Default grid checks."""

    def test_verify_at_default_resolution(self, output_dir):
        """The verify command passes with every default."""
        assert dispatch("verify", Config(), output_dir) == 0
