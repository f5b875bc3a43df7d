"""CSV/manifest persistence and TOML configuration parsing."""
import json
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

import toml
from speclab.config import (
    STAGES,
    ConfigError,
    default_config,
    default_config_dict,
    load_config,
    parse_config,
    write_default_config,
)
from speclab.io import (
    ChecksumError,
    SchemaError,
    format_value,
    git_describe,
    read_csv,
    read_manifest,
    sha256_file,
    verify_checksum,
    write_csv,
    write_manifest,
)


class TestCellFormat:
    def test_special_values(self):
        assert format_value(None) == ""
        assert format_value(True) == "true"
        assert format_value(False) == "false"
        assert format_value(float("nan")) == ""
        assert format_value(7) == "7"
        assert format_value("x:y") == "x:y"

    def test_seventeen_significant_digits(self):
        assert format_value(1.0 / 3.0) == "0.33333333333333331"
        assert format_value(math.pi) == "3.1415926535897931"

    @given(st.floats(allow_nan=False, allow_infinity=False))
    def test_float_text_round_trips_exactly(self, v):
        assert float(format_value(v)) == v


class TestCsv:
    def test_round_trip_and_crlf(self, tmp_path):
        path = tmp_path / "t.csv"
        rows = [[0, 1.25, "a", None], [1, float("nan"), "b", True]]
        write_csv(path, "demo-v1", ["i", "x", "tag", "flag"], rows)
        raw = path.read_bytes()
        assert b"\r\n" in raw
        cols, got = read_csv(path, "demo-v1")
        assert cols == ["i", "x", "tag", "flag"]
        assert got == [["0", "1.25", "a", ""], ["1", "", "b", "true"]]

    def test_schema_tag_on_every_row(self, tmp_path):
        path = tmp_path / "t.csv"
        write_csv(path, "demo-v1", ["x"], [[1], [2]])
        lines = path.read_text().splitlines()
        assert lines[0].startswith("schema,")
        assert all(line.startswith("demo-v1,") for line in lines[1:])

    def test_unknown_schema_refused(self, tmp_path):
        path = tmp_path / "t.csv"
        write_csv(path, "demo-v2", ["x"], [[1]])
        with pytest.raises(SchemaError, match="carries schema 'demo-v2'"):
            read_csv(path, "demo-v1")

    def test_row_width_checked(self, tmp_path):
        with pytest.raises(SchemaError, match="row width"):
            write_csv(tmp_path / "t.csv", "demo-v1", ["a", "b"], [[1]])

    def test_degenerate_files_refused(self, tmp_path):
        empty = tmp_path / "empty.csv"
        empty.write_text("")
        with pytest.raises(SchemaError, match="is empty"):
            read_csv(empty, "demo-v1")
        headerless = tmp_path / "bad.csv"
        headerless.write_text("x,y\r\n1,2\r\n")
        with pytest.raises(SchemaError, match="lacks the schema column"):
            read_csv(headerless, "demo-v1")


class TestChecksumsAndManifest:
    def test_checksum_verifies_and_detects_edits(self, tmp_path):
        path = tmp_path / "f.bin"
        path.write_bytes(b"payload")
        digest = sha256_file(path)
        verify_checksum(path, digest)  # no raise
        path.write_bytes(b"payload!")
        with pytest.raises(ChecksumError, match="was modified"):
            verify_checksum(path, digest)

    def test_manifest_round_trip_sorted(self, tmp_path):
        path = tmp_path / "m.json"
        write_manifest(path, {"zebra": 1, "alpha": {"b": 2, "a": 3}})
        assert read_manifest(path) == {"zebra": 1, "alpha": {"b": 2, "a": 3}}
        text = path.read_text()
        assert text.index('"alpha"') < text.index('"zebra"')
        assert text.endswith("\n")

    def test_git_describe_returns_text(self):
        assert isinstance(git_describe(), str)
        assert git_describe()


class TestConfigParsing:
    def test_default_config_parses(self):
        cfg = default_config()
        assert cfg.backend == "analytic"
        assert cfg.lambda_max == 50.0
        assert cfg.epsilon == 0.2
        assert cfg.gamma == 0.0
        assert cfg.strategy == "equispaced"
        assert cfg.truncation == 100
        assert cfg.observables == ("constant", "cos-x")
        assert cfg.windows == ((20.0, 24.0), (30.0, 36.0))
        assert cfg.mc_paths == 0
        assert cfg.seed == 20260814
        assert all(st in STAGES for st in cfg.stages)

    def test_hash_ignores_formatting_but_not_values(self):
        base = default_config_dict()
        reordered = json.loads(json.dumps(base))  # same data, fresh objects
        assert parse_config(base).config_hash() == parse_config(reordered).config_hash()
        changed = default_config_dict()
        changed["partition"]["epsilon"] = 0.1
        assert parse_config(base).config_hash() != parse_config(changed).config_hash()

    def test_file_round_trip(self, tmp_path):
        path = tmp_path / "exp.toml"
        write_default_config(path)
        assert load_config(path).config_hash() == default_config().config_hash()

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read config"):
            load_config(tmp_path / "nope.toml")

    def test_broken_toml(self, tmp_path):
        path = tmp_path / "broken.toml"
        path.write_text("[domain\nkind=")
        with pytest.raises(ConfigError, match="cannot read config"):
            load_config(path)

    def test_unknown_section(self):
        data = default_config_dict()
        data["extras"] = {}
        with pytest.raises(ConfigError, match=r"unknown section \[extras\]"):
            parse_config(data)

    @pytest.mark.parametrize(
        "section,key,value,message",
        [
            ("spectrum", "backend", "magic", "spectrum.backend"),
            ("spectrum", "lambda_max", -1.0, "spectrum.lambda_max"),
            ("spectrum", "lambda_max", "big", "spectrum.lambda_max must be float"),
            ("partition", "epsilon", 1.5, "partition.epsilon"),
            ("partition", "epsilon", 0.0, "partition.epsilon"),
            ("partition", "gamma", 2.0, "partition.gamma"),
            ("partition", "strategy", "sorted", "partition.strategy"),
            ("perturb", "truncation", 0, "perturb.truncation"),
            ("concentration", "threshold", -0.5, "concentration.threshold"),
            ("concentration", "replicas", 10, "concentration.replicas"),
            ("concentration", "hw_replicas", 3, "concentration.hw_replicas"),
            ("concentration", "hw_n", 0, "concentration.hw_n"),
            ("concentration", "hw_thresholds", [5.0, -1.0], "hw_thresholds"),
            ("concentration", "block_sizes", [8, 1], "block_sizes"),
            ("heatkernel", "t", 0.0, "heatkernel.t"),
            ("heatkernel", "dt", -1e-3, "heatkernel.dt"),
            ("heatkernel", "n_paths", -5, "heatkernel.n_paths"),
            ("heatkernel", "x", [0.5], "heatkernel.x"),
            ("heatkernel", "convention", "both", "heatkernel.convention"),
            ("heatkernel", "trace_ts", [0.1, 0.0], "trace_ts"),
            ("run", "seed", -1, "run.seed"),
            ("run", "seed", 1 << 64, "run.seed"),
            ("run", "stages", ["spectrum", "mystery"], "unknown stage"),
            ("domain", "kind", "triangle", "domain"),
        ],
    )
    def test_invalid_field_named_in_error(self, section, key, value, message):
        data = default_config_dict()
        data.setdefault(section, {})[key] = value
        with pytest.raises(ConfigError, match=message):
            parse_config(data)

    def test_fd_backend_requires_mesh_size(self):
        data = default_config_dict()
        data["spectrum"]["backend"] = "fd"
        with pytest.raises(ConfigError, match="spectrum.h is required"):
            parse_config(data)
        data["spectrum"]["h"] = 0.05
        data["spectrum"]["count"] = 8
        cfg = parse_config(data)
        assert cfg.backend == "fd"
        assert cfg.fd_h == 0.05
        assert cfg.fd_count == 8

    def test_empty_observables_rejected(self):
        data = default_config_dict()
        data["observables"]["names"] = []
        with pytest.raises(ConfigError, match="observables.names"):
            parse_config(data)

    def test_window_edges_checked(self):
        data = default_config_dict()
        data["windows"]["edges"] = [[24.0, 20.0]]
        with pytest.raises(ConfigError, match=r"windows.edges\[0\]"):
            parse_config(data)

    def test_disk_domain_accepted(self):
        data = default_config_dict()
        data["domain"] = {"kind": "disk", "r": 1.0}
        data["spectrum"] = {"backend": "fd", "lambda_max": 30.0, "h": 0.05}
        cfg = parse_config(data)
        assert cfg.domain.volume() == pytest.approx(math.pi)

    def test_missing_domain_field_named(self):
        data = default_config_dict()
        data["domain"] = {"kind": "disk"}
        with pytest.raises(ConfigError, match="needs a 'r' field"):
            parse_config(data)

    def test_config_hash_is_toml_stable(self, tmp_path):
        # Reformatting the file (comments, key order) keeps the hash.
        a = tmp_path / "a.toml"
        write_default_config(a)
        data = toml.load(a)
        b = tmp_path / "b.toml"
        sections = list(data)
        with open(b, "w") as fh:
            fh.write("# reformatted\n")
            toml.dump({k: data[k] for k in reversed(sections)}, fh)
        assert load_config(a).config_hash() == load_config(b).config_hash()
