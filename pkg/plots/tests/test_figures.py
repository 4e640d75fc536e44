import csv
import json

import pytest

from maxentlab_plots.cli import main
from maxentlab_plots.figures import (FigureSpec, PlotSchemaError, SCHEMAS,
                                     read_rows, render)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return str(path)


def sweep_csv(tmp_path, num_rows=4, name="summary.csv"):
    header = SCHEMAS["kl-return-scatter"]
    rows = [[1, f"qed-k0.{i+1}", 0.1 * (i + 1), 1.0 + i, 2.0, 1.9, 2.1, 1.0]
            for i in range(num_rows)]
    return write_csv(tmp_path / name, header, rows)


def toy_csv(tmp_path, steps=(0, 100), points=8):
    header = SCHEMAS["toy-panels"]
    rows = [[s, -5 + 10 * (i + 0.5) / points, 0.1, 0.2, 0.1, 0.05, 0.1]
            for s in steps for i in range(points)]
    return write_csv(tmp_path / "snap.csv", header, rows)


def curves_csv(tmp_path, num_series=3, num_steps=5):
    header = SCHEMAS["training-curves"]
    rows = [[1, f"v{j}", 100 * (i + 1), 1.0 + i, 0.9 + i, 1.1 + i]
            for j in range(num_series) for i in range(num_steps)]
    return write_csv(tmp_path / "curves.csv", header, rows)


def scatter_csv(tmp_path, num_rows=12):
    header = SCHEMAS["correlation-scatter"]
    rows = [[i, 0.01 * (i + 1), 0.1 * (i + 1)] for i in range(num_rows)]
    return write_csv(tmp_path / "correlation_scatter.csv", header, rows)


class TestFigureSpec:
    def test_unknown_kind_rejected(self):
        with pytest.raises(PlotSchemaError, match="kind"):
            FigureSpec(kind="nope", inputs=["a.csv"], output="o.png")

    def test_empty_inputs_rejected(self):
        with pytest.raises(PlotSchemaError, match="input"):
            FigureSpec(kind="toy-panels", inputs=[], output="o.png")

    def test_from_json_round_trip(self, tmp_path):
        doc = {"kind": "variance-bars", "inputs": ["a.csv"],
               "output": "o.png", "title": "t"}
        path = tmp_path / "spec.json"
        path.write_text(json.dumps(doc))
        spec = FigureSpec.from_json(str(path))
        assert spec.kind == "variance-bars"
        assert spec.title == "t"

    def test_from_json_unknown_key(self, tmp_path):
        path = tmp_path / "spec.json"
        path.write_text(json.dumps({"kind": "toy-panels", "inputs": ["a"],
                                    "output": "o", "bogus": 1}))
        with pytest.raises(PlotSchemaError, match="bogus"):
            FigureSpec.from_json(str(path))


class TestSchemaChecks:
    def test_missing_file_named(self, tmp_path):
        with pytest.raises(PlotSchemaError, match="does not exist"):
            read_rows(str(tmp_path / "none.csv"), "toy-panels")

    def test_header_mismatch_names_columns(self, tmp_path):
        path = write_csv(tmp_path / "bad.csv", ["step", "bogus"], [[1, 2]])
        with pytest.raises(PlotSchemaError) as err:
            read_rows(path, "toy-panels")
        assert "bogus" in str(err.value)
        assert "grid_point" in str(err.value)

    def test_inputs_never_mutated(self, tmp_path):
        path = sweep_csv(tmp_path)
        before = open(path, "rb").read()
        render(FigureSpec("variance-bars", [path],
                          str(tmp_path / "o.png")))
        assert open(path, "rb").read() == before


class TestRenderCounts:
    def test_kl_return_marker_count(self, tmp_path):
        path = sweep_csv(tmp_path, num_rows=5)
        counts = render(FigureSpec("kl-return-scatter", [path],
                                   str(tmp_path / "o.png")))
        assert counts["markers"] == 5 and counts["rows"] == 5

    def test_variance_bar_count(self, tmp_path):
        path = sweep_csv(tmp_path, num_rows=3)
        counts = render(FigureSpec("variance-bars", [path],
                                   str(tmp_path / "o.png")))
        assert counts["bars"] == 3

    def test_toy_panel_count_equals_step_groups(self, tmp_path):
        path = toy_csv(tmp_path, steps=(0, 50, 100))
        counts = render(FigureSpec("toy-panels", [path],
                                   str(tmp_path / "o.png")))
        assert counts["panels"] == 3

    def test_training_curve_count(self, tmp_path):
        path = curves_csv(tmp_path, num_series=4)
        counts = render(FigureSpec("training-curves", [path],
                                   str(tmp_path / "o.png")))
        assert counts["curves"] == 4

    def test_correlation_marker_count(self, tmp_path):
        path = scatter_csv(tmp_path, num_rows=7)
        counts = render(FigureSpec("correlation-scatter", [path],
                                   str(tmp_path / "o.png")))
        assert counts["markers"] == 7

    def test_multiple_inputs_concatenate(self, tmp_path):
        a = sweep_csv(tmp_path, num_rows=2, name="a.csv")
        b = sweep_csv(tmp_path, num_rows=3, name="b.csv")
        counts = render(FigureSpec("variance-bars", [a, b],
                                   str(tmp_path / "o.png")))
        assert counts["bars"] == 5


class TestRenderBehavior:
    @pytest.mark.parametrize("kind,maker", [
        ("kl-return-scatter", sweep_csv),
        ("variance-bars", sweep_csv),
        ("training-curves", curves_csv),
        ("correlation-scatter", scatter_csv),
    ])
    def test_empty_csv_renders_labeled_axes(self, tmp_path, kind, maker):
        path = write_csv(tmp_path / "empty.csv", SCHEMAS[kind], [])
        out = tmp_path / "o.png"
        counts = render(FigureSpec(kind, [path], str(out)))
        assert out.exists() and out.stat().st_size > 0
        assert counts["rows"] == 0

    def test_empty_toy_csv(self, tmp_path):
        path = write_csv(tmp_path / "empty.csv", SCHEMAS["toy-panels"], [])
        out = tmp_path / "o.png"
        counts = render(FigureSpec("toy-panels", [path], str(out)))
        assert out.exists() and counts["panels"] == 0

    def test_deterministic_output_bytes(self, tmp_path):
        path = toy_csv(tmp_path)
        out_a = tmp_path / "a.png"
        out_b = tmp_path / "b.png"
        render(FigureSpec("toy-panels", [path], str(out_a)))
        render(FigureSpec("toy-panels", [path], str(out_b)))
        assert out_a.read_bytes() == out_b.read_bytes()

    def test_label_overrides_applied(self, tmp_path):
        # SVG output keeps text inspectable.
        path = scatter_csv(tmp_path)
        out = tmp_path / "o.svg"
        render(FigureSpec("correlation-scatter", [path], str(out),
                          title="My Title"))
        assert "My Title" in out.read_text()


class TestCli:
    def test_flags_round_trip(self, tmp_path, capsys):
        path = sweep_csv(tmp_path)
        out = tmp_path / "o.png"
        code = main(["--kind", "variance-bars", "--input", path,
                     "--out", str(out)])
        assert code == 0 and out.exists()
        counts = json.loads(capsys.readouterr().out)
        assert counts["bars"] == 4

    def test_spec_file(self, tmp_path):
        path = scatter_csv(tmp_path)
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps({
            "kind": "correlation-scatter", "inputs": [path],
            "output": str(tmp_path / "o.png")}))
        assert main(["--spec", str(spec)]) == 0

    def test_schema_error_exit_code(self, tmp_path):
        path = write_csv(tmp_path / "bad.csv", ["x"], [[1]])
        assert main(["--kind", "variance-bars", "--input", path,
                     "--out", str(tmp_path / "o.png")]) == 1
