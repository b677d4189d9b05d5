import numpy as np
import pytest

from fredholm.fileio import (
    METRICS_HEADER,
    ExperimentConfig,
    parse_config,
    read_image,
    write_image,
    write_manifest,
    write_metrics_csv,
)


class TestParseConfig:
    def test_minimal_file_gets_defaults(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("experiment = mixture\nmethod = smc\nN = 500\n")
        cfg = parse_config(cfg_file)
        assert cfg.M is None and cfg.m_or_n == 500
        assert cfg.epsilon == 1e-3
        assert cfg.n_iterations == 100
        assert cfg.resample_threshold == 0.5

    def test_comments_and_blank_lines(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text(
            "# experiment setup\nexperiment = analytic  # inline comment\n\n"
            "method = em\nN = 100\nB = 50\n")
        cfg = parse_config(cfg_file)
        assert cfg.experiment == "analytic"
        assert cfg.B == 50

    def test_flag_overrides_file(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("experiment = mixture\nmethod = smc\nN = 500\nepsilon = 0.001\n")
        cfg = parse_config(cfg_file, {"epsilon": 0.01})
        assert cfg.epsilon == 0.01

    def test_negative_count_rejected_by_name(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("experiment = mixture\nmethod = smc\nN = -5\n")
        with pytest.raises(ValueError, match="N"):
            parse_config(cfg_file)

    def test_unknown_key_rejected(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("experiment = mixture\nmethod = smc\nN = 10\nbogus = 3\n")
        with pytest.raises(ValueError, match="bogus"):
            parse_config(cfg_file)

    def test_type_mismatch_rejected_by_name(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("experiment = mixture\nmethod = smc\nN = many\n")
        with pytest.raises(ValueError, match="N"):
            parse_config(cfg_file)

    def test_missing_required_key(self):
        with pytest.raises(ValueError, match="experiment"):
            parse_config(None, {"method": "smc", "N": 10})

    def test_unknown_method_rejected(self):
        with pytest.raises(ValueError, match="method"):
            parse_config(None, {"experiment": "mixture", "method": "magic", "N": 10})

    def test_bool_parsing(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("experiment = mixture\nmethod = smc\nN = 10\n"
                            "emit_per_iteration = true\n")
        assert parse_config(cfg_file).emit_per_iteration is True


class TestGraymapIO:
    def test_round_trip_within_quantization(self, tmp_path, rng):
        img = rng.random((17, 23))
        img[3, 4] = 1.0  # pin the max so scaling is by 1.0
        path = tmp_path / "img.pgm"
        write_image(img, path)
        back = read_image(path)
        assert back.shape == img.shape
        assert np.max(np.abs(back - img)) <= 1.0 / 65535 + 1e-12

    def test_2x2_header_bytes(self, tmp_path):
        path = tmp_path / "tiny.pgm"
        write_image(np.array([[0.0, 1.0], [0.5, 0.25]]), path)
        blob = path.read_bytes()
        assert blob.startswith(b"P5\n2 2\n65535\n")
        assert len(blob) == len(b"P5\n2 2\n65535\n") + 8

    def test_big_endian_payload(self, tmp_path):
        path = tmp_path / "tiny.pgm"
        write_image(np.array([[1.0, 0.0]]), path)
        payload = path.read_bytes()[len(b"P5\n1 2\n65535\n") - 2:]
        # first sample 65535 -> 0xffff
        assert payload[-4:-2] == b"\xff\xff"
        assert payload[-2:] == b"\x00\x00"

    def test_reads_ascii_p2_variant(self, tmp_path):
        # independent hand-written plain graymap as the oracle
        path = tmp_path / "plain.pgm"
        path.write_text("P2\n# comment\n3 2\n255\n0 128 255\n64 32 16\n")
        img = read_image(path)
        want = np.array([[0, 128, 255], [64, 32, 16]]) / 255.0
        np.testing.assert_allclose(img, want, rtol=1e-12)

    def test_truncated_payload_reports_offset(self, tmp_path):
        path = tmp_path / "bad.pgm"
        path.write_bytes(b"P5\n2 2\n65535\n\x00\x01")
        with pytest.raises(ValueError, match="byte"):
            read_image(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.pgm"
        path.write_bytes(b"P7\n2 2\n255\n" + b"\x00" * 4)
        with pytest.raises(ValueError, match="magic"):
            read_image(path)

    def test_negative_pixels_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            write_image(np.array([[-1.0, 0.0]]), tmp_path / "x.pgm")


class TestMetricsCsv:
    def test_empty_rows_header_only(self, tmp_path):
        path = tmp_path / "m.csv"
        write_metrics_csv([], path)
        assert path.read_text() == METRICS_HEADER + "\n"

    def test_one_row_two_lines(self, tmp_path):
        path = tmp_path / "m.csv"
        write_metrics_csv([{"replicate": 0, "method": "smc", "N": 10, "M": 10,
                            "epsilon": 1e-3, "ise_f": 0.5, "mse_p95": None,
                            "kl": 0.01, "match_distance": None, "mean": 0.4,
                            "variance": 0.01, "runtime_ms": 12.5}], path)
        lines = path.read_text().splitlines()
        assert len(lines) == 2
        assert lines[0] == METRICS_HEADER

    def test_floats_round_trip_bit_exact(self, tmp_path, rng):
        rows = []
        vals = {}
        for r in range(5):
            ise = float(rng.random() * 10.0 ** rng.integers(-8, 8))
            kl = float(rng.standard_normal() ** 2)
            vals[r] = (ise, kl)
            rows.append({"replicate": r, "method": "smc", "N": 3, "M": 3,
                         "epsilon": 0.125, "ise_f": ise, "mse_p95": None,
                         "kl": kl, "match_distance": None, "mean": 0.0,
                         "variance": 0.0, "runtime_ms": 1.0})
        path = tmp_path / "m.csv"
        write_metrics_csv(rows, path)
        lines = path.read_text().splitlines()[1:]
        for r, line in enumerate(lines):
            cells = line.split(",")
            assert float(cells[5]) == vals[r][0]
            assert float(cells[7]) == vals[r][1]

    def test_lf_line_endings(self, tmp_path):
        path = tmp_path / "m.csv"
        write_metrics_csv([], path)
        assert b"\r" not in path.read_bytes()


class TestManifest:
    def test_manifest_echoes_config(self, tmp_path):
        cfg = ExperimentConfig(experiment="mixture", method="smc", N=100)
        path = tmp_path / "manifest"
        write_manifest(cfg, path, extra={"workers": 2})
        text = path.read_text()
        assert "experiment = mixture" in text
        assert "N = 100" in text
        assert "workers = 2" in text
