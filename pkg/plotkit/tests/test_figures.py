"""Figure builders and CLI behavior on synthetic CSVs."""

import json

import pytest

from plotkit.cli import main
from plotkit.figures import MissingColumnsError, NoDataError, read_rows, render


def write_csv(path, header, rows):
    lines = [",".join(header)] + [",".join(str(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


TRAIN_HEADER = ["seed", "iteration", "kind", "loss", "envelope"]


def train_rows(seeds=(0, 1), iters=(0, 1, 2)):
    rows = []
    for s in seeds:
        for k in iters:
            rows.append([s, k, "iteration", 2.0 * 0.5**k, 2.0 * 0.6**k])
        rows.append([s, iters[-1], "summary", "", ""])
    return rows


class TestConvergence:
    def test_series_per_seed_plus_envelope(self, tmp_path):
        csv_path = write_csv(tmp_path / "t.csv", TRAIN_HEADER, train_rows())
        sidecar = render("convergence", read_rows([csv_path]), tmp_path / "f.png")
        names = [s["name"] for s in sidecar["series"]]
        assert names == ["loss seed 0", "loss seed 1", "envelope"]
        assert all(s["points"] == 3 for s in sidecar["series"])
        assert (tmp_path / "f.png").stat().st_size > 0

    def test_axis_ranges(self, tmp_path):
        csv_path = write_csv(tmp_path / "t.csv", TRAIN_HEADER, train_rows())
        sidecar = render("convergence", read_rows([csv_path]), tmp_path / "f.png")
        assert sidecar["x_range"] == [0.0, 2.0]
        assert sidecar["y_range"][1] == 2.0

    def test_missing_columns_named(self, tmp_path):
        csv_path = write_csv(tmp_path / "t.csv", ["seed", "iteration", "kind"],
                             [[0, 0, "iteration"]])
        with pytest.raises(MissingColumnsError) as err:
            render("convergence", read_rows([csv_path]), tmp_path / "f.png")
        assert err.value.columns == ["envelope", "loss"]

    def test_empty_body_raises_no_data(self, tmp_path):
        csv_path = write_csv(tmp_path / "t.csv", TRAIN_HEADER, [])
        with pytest.raises(NoDataError):
            render("convergence", read_rows([csv_path]), tmp_path / "f.png")


class TestScaling:
    HEADER = ["m", "kind", "sup_error", "median_sup_error"]

    def rows(self):
        out = []
        for m, err in ((256, 0.08), (1024, 0.04), (4096, 0.02)):
            out.append([m, "trial", err * 1.1, ""])
            out.append([m, "summary", "", err])
        return out

    def test_reference_slope_series(self, tmp_path):
        csv_path = write_csv(tmp_path / "c.csv", self.HEADER, self.rows())
        sidecar = render("scaling", read_rows([csv_path]), tmp_path / "f.png")
        names = [s["name"] for s in sidecar["series"]]
        assert names == ["median sup error", "reference slope -1/2"]
        assert all(s["points"] == 3 for s in sidecar["series"])

    def test_reference_anchored_at_first_width(self, tmp_path):
        csv_path = write_csv(tmp_path / "c.csv", self.HEADER, self.rows())
        sidecar = render("scaling", read_rows([csv_path]), tmp_path / "f.png")
        # reference starts at the first median and ends at med0 / 4
        assert sidecar["y_range"][0] == pytest.approx(0.08 / 4.0)


class TestDepthScan:
    HEADER = ["arch", "H", "kind", "amplification"]

    def test_one_series_per_arch(self, tmp_path):
        rows = [["fc", 2, "trial", 4.0], ["fc", 4, "trial", 20.0],
                ["resnet", 2, "trial", 1.1], ["resnet", 4, "trial", 1.2]]
        csv_path = write_csv(tmp_path / "d.csv", self.HEADER, rows)
        sidecar = render("depth-scan", read_rows([csv_path]), tmp_path / "f.png")
        names = [s["name"] for s in sidecar["series"]]
        assert names == ["fc amplification", "resnet amplification"]


class TestRender:
    def test_unknown_kind(self, tmp_path):
        with pytest.raises(ValueError, match="unknown figure kind"):
            render("pie", [], tmp_path / "f.png")

    def test_rerun_sidecar_identical(self, tmp_path):
        csv_path = write_csv(tmp_path / "t.csv", TRAIN_HEADER, train_rows())
        rows = read_rows([csv_path])
        render("convergence", rows, tmp_path / "f.png")
        first = (tmp_path / "f.png.json").read_bytes()
        render("convergence", rows, tmp_path / "f.png")
        assert (tmp_path / "f.png.json").read_bytes() == first

    def test_multiple_inputs_concatenate(self, tmp_path):
        a = write_csv(tmp_path / "a.csv", TRAIN_HEADER, train_rows(seeds=(0,)))
        b = write_csv(tmp_path / "b.csv", TRAIN_HEADER, train_rows(seeds=(1,)))
        sidecar = render("convergence", read_rows([a, b]), tmp_path / "f.png")
        assert len(sidecar["series"]) == 3


class TestCli:
    def test_success(self, tmp_path, capsys):
        csv_path = write_csv(tmp_path / "t.csv", TRAIN_HEADER, train_rows())
        out = tmp_path / "f.png"
        code = main(["--kind", "convergence", "--in", str(csv_path),
                     "--out", str(out)])
        assert code == 0
        assert out.exists()
        sidecar = json.loads((tmp_path / "f.png.json").read_text())
        assert sidecar["kind"] == "convergence"

    def test_empty_body_graceful_no_image(self, tmp_path, capsys):
        csv_path = write_csv(tmp_path / "t.csv", TRAIN_HEADER, [])
        out = tmp_path / "f.png"
        code = main(["--kind", "convergence", "--in", str(csv_path),
                     "--out", str(out)])
        assert code == 0
        assert "no data" in capsys.readouterr().err
        assert not out.exists()

    def test_missing_columns_exit_two(self, tmp_path, capsys):
        csv_path = write_csv(tmp_path / "t.csv", ["seed", "kind"], [[0, "x"]])
        code = main(["--kind", "convergence", "--in", str(csv_path),
                     "--out", str(tmp_path / "f.png")])
        assert code == 2
        err = capsys.readouterr().err
        assert "missing columns" in err and "loss" in err

    def test_absent_file_exit_two(self, tmp_path, capsys):
        code = main(["--kind", "scaling", "--in", str(tmp_path / "nope.csv"),
                     "--out", str(tmp_path / "f.png")])
        assert code == 2
