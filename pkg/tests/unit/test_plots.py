#
# Tests for the length and loss figures
#
import pandas as pd
import plotly.graph_objects as go
import pytest

from lengthlab import plots


@pytest.fixture
def frame():
    return pd.DataFrame({
        "step": [0, 1, 2, 3],
        "mean_len": [4.0, 5.0, 6.0, 6.5],
        "min_len": [2, 2, 3, 3],
        "max_len": [8, 9, 12, 14],
        "policy_loss": [0.3, 0.4, 0.2, 0.1],
    })


class TestPlots():
    def test_length_loss(self, frame):
        fig = plots.plot_length_loss(frame, "PPO")
        assert isinstance(fig, go.Figure)
        assert [t.name for t in fig.data] == ["mean_len", "min_len", "max_len",
                                              "policy_loss"]
        assert fig.layout.title.text == "PPO"

    def test_missing_column(self, frame):
        with pytest.raises(ValueError):
            plots.plot_length_loss(frame.drop(columns=["policy_loss"]))

    def test_phases(self, frame):
        fig = plots.plot_phases([frame, frame])
        assert list(fig.data[0].x) == [0, 1, 2, 3, 4, 5, 6, 7], \
            'The second phase should continue the step axis'
        assert len(fig.layout.shapes) >= 1, 'The phase boundary should be drawn'

    def test_write_figure(self, tmp_path, frame):
        path = plots.write_figure(plots.plot_length_loss(frame), tmp_path, "fig")
        assert path == tmp_path / "fig.html"
        assert "<html>" in path.read_text(encoding="utf-8")
