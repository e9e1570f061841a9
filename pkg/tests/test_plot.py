import re

import pytest

from diffnpo.evaluation import write_ablation_csv
from diffnpo.plotting import PlotInputError, plot


def n_markers(svg_text):
    # each plotted point is one <use> of the marker path inside the series group
    group = svg_text.split('<g id="series">', 1)[1].split("</g>", 1)[0]
    return group.count("<use ")


class TestPlot:
    def test_gap_three_points(self, tmp_path):
        (tmp_path / "g.csv").write_text("iteration,gap\n0,0.1\n1,0.01\n2,0.001\n")
        assert plot("gap", tmp_path / "g.csv", tmp_path / "g.svg") == 3
        assert n_markers((tmp_path / "g.svg").read_text()) == 3

    def test_ablation_one_bar_per_gamma(self, tmp_path):
        rows = [{"gamma": g, "seed": s, "winrate": 0.5 + 0.1 * g, "ci_halfwidth": 0.0, "mean_score_a": 0.0,
                 "mean_score_b": 0.0} for g in (0.0, 0.5, 1.0) for s in range(2)]
        write_ablation_csv(tmp_path / "a.csv", rows)
        assert plot("ablation", tmp_path / "a.csv", tmp_path / "a.svg") == 3
        text = (tmp_path / "a.svg").read_text()
        assert sorted(re.findall(r'<g id="(bar\d+)">', text)) == ["bar0", "bar1", "bar2"]

    def test_loss_from_jsonl(self, tmp_path):
        (tmp_path / "m.jsonl").write_text('{"step": 1, "loss": 0.7}\n{"step": 2, "loss": 0.6}\n')
        assert plot("loss", tmp_path / "m.jsonl", tmp_path / "m.svg") == 2

    def test_byte_reproducible(self, tmp_path):
        (tmp_path / "g.csv").write_text("iteration,gap\n0,0.1\n1,0.01\n")
        plot("gap", tmp_path / "g.csv", tmp_path / "a.svg")
        plot("gap", tmp_path / "g.csv", tmp_path / "b.svg")
        assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()

    def test_errors(self, tmp_path):
        (tmp_path / "e.csv").write_text("")
        with pytest.raises(PlotInputError, match="empty"):
            plot("gap", tmp_path / "e.csv", tmp_path / "x.svg")
        (tmp_path / "h.csv").write_text("iteration,gap\n")
        with pytest.raises(PlotInputError, match="no data"):
            plot("gap", tmp_path / "h.csv", tmp_path / "x.svg")
        (tmp_path / "w.csv").write_text("a,b\n1,2\n")
        with pytest.raises(PlotInputError, match="missing column"):
            plot("gap", tmp_path / "w.csv", tmp_path / "x.svg")
        with pytest.raises(PlotInputError, match="unknown plot kind"):
            plot("pie", tmp_path / "w.csv", tmp_path / "x.svg")
