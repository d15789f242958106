"""Figure regeneration from the committed sample sweep output.

The fixture under fixtures/sample_run was produced by the experiment runner
(make_fixture.py regenerates it); these tests read it the way any finished
sweep directory would be read, through the documented file formats only.
"""

import json
import shutil
from pathlib import Path

import matplotlib.pyplot as plt
import numpy as np
import pytest

from gpstps_plots.cli import main
from gpstps_plots.inputs import discover_runs, load_policy_dump, read_curve
from gpstps_plots.render import PlotSpec, plot_learning_curves, plot_policy

FIXTURE = Path(__file__).resolve().parent / "fixtures" / "sample_run"
PRIOR_DUMP = FIXTURE / "gpstps" / "seed000" / "policy_iter000.json"


@pytest.fixture(autouse=True)
def _close_figures():
    yield
    plt.close("all")


# ---------------------------------------------------------------------------
# input readers
# ---------------------------------------------------------------------------


class TestInputs:
    def test_read_curve_values(self):
        series = read_curve(FIXTURE / "gpstps" / "seed000" / "curve.csv")
        assert series.iterations.tolist() == [0, 1, 2, 3, 4, 5]
        assert len(series.mean_return) == 6
        assert np.all(np.isfinite(series.mean_return))

    def test_read_curve_rejects_wrong_header(self, tmp_path):
        bad = tmp_path / "curve.csv"
        bad.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError, match="curve.csv"):
            read_curve(bad)

    def test_discover_runs_orders_methods(self):
        runs = discover_runs(FIXTURE)
        assert list(runs) == ["gpstps", "gpps_fixed_1", "gpps_fixed_3"]
        assert all(len(paths) == 2 for paths in runs.values())
        assert all(p.name == "curve.csv" for paths in runs.values() for p in paths)

    def test_discover_runs_rejects_empty_dir(self, tmp_path):
        with pytest.raises(ValueError, match="no .*runs found"):
            discover_runs(tmp_path)

    def test_load_policy_dump_validates(self):
        doc = load_policy_dump(PRIOR_DUMP)
        assert doc["duration"]["tau_max"] == 6
        assert len(doc["grid"]["state"]) == len(doc["grid"]["action_prob"])

    def test_load_policy_dump_names_missing_key(self, tmp_path):
        broken = tmp_path / "dump.json"
        with open(PRIOR_DUMP, encoding="utf-8") as fh:
            doc = json.load(fh)
        del doc["grid"]["duration_mean"]
        broken.write_text(json.dumps(doc))
        with pytest.raises(ValueError, match="duration_mean"):
            load_policy_dump(broken)

    def test_load_policy_dump_rejects_non_json(self, tmp_path):
        broken = tmp_path / "dump.json"
        broken.write_text("{nope")
        with pytest.raises(ValueError, match="JSON"):
            load_policy_dump(broken)

    def test_plot_spec_checks_existence(self, tmp_path):
        spec = PlotSpec(inputs=(tmp_path / "absent.csv",), output=tmp_path / "o.png")
        with pytest.raises(ValueError, match="absent.csv"):
            spec.validate()
        PlotSpec(inputs=(PRIOR_DUMP,), output=tmp_path / "o.png").validate()


# ---------------------------------------------------------------------------
# learning curves
# ---------------------------------------------------------------------------


class TestCurves:
    def test_regenerates_from_fixture(self, tmp_path):
        out = tmp_path / "curves.png"
        fig = plot_learning_curves(discover_runs(FIXTURE), out)
        assert out.exists() and out.stat().st_size > 0
        ax = fig.axes[0]
        labels = [t.get_text() for t in ax.get_legend().get_texts()]
        assert labels == ["gpstps", "gpps_fixed_1", "gpps_fixed_3"]
        assert len(ax.lines) == 3
        assert len(ax.collections) == 3  # one band per method

    def test_band_is_seed_std(self, tmp_path):
        runs = discover_runs(FIXTURE)
        fig = plot_learning_curves({"gpstps": runs["gpstps"]}, tmp_path / "one.png")
        stack = np.vstack([read_curve(p).mean_return for p in runs["gpstps"]])
        line = fig.axes[0].lines[0]
        assert np.allclose(line.get_ydata(), stack.mean(axis=0))

    def test_single_seed_zero_width_band(self, tmp_path):
        runs = discover_runs(FIXTURE)
        single = {"gpstps": runs["gpstps"][:1]}
        fig = plot_learning_curves(single, tmp_path / "single.png")
        band = fig.axes[0].collections[0]
        verts = band.get_paths()[0].vertices
        curve = read_curve(runs["gpstps"][0])
        # upper and lower band edges collapse onto the data range
        assert verts[:, 1].min() == pytest.approx(curve.mean_return.min())
        assert verts[:, 1].max() == pytest.approx(curve.mean_return.max())

    def test_mismatched_iteration_counts_diagnosed(self, tmp_path):
        short = tmp_path / "short.csv"
        lines = (FIXTURE / "gpstps" / "seed000" / "curve.csv").read_text().splitlines()
        short.write_text("\n".join(lines[:-2]) + "\n")
        runs = {"gpstps": [FIXTURE / "gpstps" / "seed000" / "curve.csv", short]}
        with pytest.raises(ValueError, match="iteration mismatch.*short.csv"):
            plot_learning_curves(runs, tmp_path / "x.png")

    def test_rerun_writes_identical_bytes(self, tmp_path):
        runs = discover_runs(FIXTURE)
        first = tmp_path / "a.png"
        second = tmp_path / "b.png"
        plt.close(plot_learning_curves(runs, first))
        plt.close(plot_learning_curves(runs, second))
        assert first.read_bytes() == second.read_bytes()

    def test_empty_inputs_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="no methods"):
            plot_learning_curves({}, tmp_path / "x.png")
        with pytest.raises(ValueError, match="'gpstps' has no curve files"):
            plot_learning_curves({"gpstps": []}, tmp_path / "x.png")


# ---------------------------------------------------------------------------
# policy figures
# ---------------------------------------------------------------------------


class TestPolicy:
    def test_prior_dump_draws_flat_half_line(self, tmp_path):
        out = tmp_path / "prior.png"
        fig = plot_policy(PRIOR_DUMP, out)
        assert out.exists() and out.stat().st_size > 0
        action_ax, duration_ax = fig.axes
        prob_line = action_ax.lines[0]
        assert np.all(prob_line.get_ydata() == 0.5)
        assert np.all(duration_ax.lines[0].get_ydata() == 0.0)

    def test_duration_levels_marked(self, tmp_path):
        fig = plot_policy(PRIOR_DUMP, tmp_path / "levels.png")
        duration_ax = fig.axes[1]
        # data line first, then one dotted level line per step 1..tau_max
        level_values = [ln.get_ydata()[0] for ln in duration_ax.lines[1:]]
        assert level_values == [1, 2, 3, 4, 5, 6]

    def test_trained_and_pinned_dumps_render(self, tmp_path):
        trained = FIXTURE / "gpstps" / "seed000" / "policy_final.json"
        pinned = FIXTURE / "gpps_fixed_3" / "seed001" / "policy_final.json"
        fig_t = plot_policy(trained, tmp_path / "t.png")
        fig_p = plot_policy(pinned, tmp_path / "p.png")
        assert (tmp_path / "t.png").stat().st_size > 0
        assert np.all(fig_p.axes[1].lines[0].get_ydata() == 3.0)
        assert "pinned to 3" in fig_p.axes[0].get_title()
        assert "pinned" not in fig_t.axes[0].get_title()

    def test_every_fixture_dump_renders(self, tmp_path):
        dumps = sorted(FIXTURE.glob("*/seed*/policy_*.json"))
        assert len(dumps) == 18
        for i, dump in enumerate(dumps):
            plt.close(plot_policy(dump, tmp_path / f"d{i}.png"))


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------


class TestCli:
    def test_curves_command(self, tmp_path, capsys):
        out = tmp_path / "curves.png"
        code = main(["curves", "--in", str(FIXTURE), "--out", str(out)])
        assert code == 0
        assert out.exists()
        assert "3 methods" in capsys.readouterr().out

    def test_curves_method_filter(self, tmp_path, capsys):
        out = tmp_path / "two.png"
        code = main(["curves", "--in", str(FIXTURE), "--out", str(out),
                     "--methods", "gpps_fixed_3,gpstps"])
        assert code == 0
        assert "2 methods" in capsys.readouterr().out

    def test_curves_unknown_method_fails(self, tmp_path, capsys):
        code = main(["curves", "--in", str(FIXTURE), "--out", str(tmp_path / "x.png"),
                     "--methods", "gpps_fixed_9"])
        assert code == 2
        assert "gpps_fixed_9" in capsys.readouterr().err

    def test_policy_command(self, tmp_path, capsys):
        out = tmp_path / "policy.png"
        code = main(["policy", "--in", str(PRIOR_DUMP), "--out", str(out)])
        assert code == 0
        assert out.exists()

    def test_missing_input_reports_error(self, tmp_path, capsys):
        code = main(["policy", "--in", str(tmp_path / "gone.json"),
                     "--out", str(tmp_path / "x.png")])
        assert code == 2
        assert "gone.json" in capsys.readouterr().err

    def test_output_dir_roundtrip_copy(self, tmp_path):
        # a relocated sweep directory plots the same as the original
        copied = tmp_path / "moved"
        shutil.copytree(FIXTURE, copied)
        a = tmp_path / "orig.png"
        b = tmp_path / "moved.png"
        assert main(["curves", "--in", str(FIXTURE), "--out", str(a)]) == 0
        assert main(["curves", "--in", str(copied), "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()
