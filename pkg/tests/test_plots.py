import numpy as np

from lqpoison.controller import ControllerConfig
from lqpoison.harness import EpisodeConfig, NoiseModel, run_episode, with_mode
from lqpoison.lqr import CostWeights, SystemParams
from lqpoison.ofu import OfuConfig
from lqpoison.plots import Series, emit_plots, line_plot

W = CostWeights(np.eye(1), 0.1 * np.eye(1))
STAR = SystemParams.from_ab([[0.001]], [[0.001]])
CFG = EpisodeConfig(STAR, ControllerConfig(W, ofu=OfuConfig(steps=10, restarts=2)), 80, NoiseModel())


def test_single_trace_has_no_band(tmp_path):
    tr = run_episode(CFG, 1)
    emit_plots({"oracle_clean": [tr]}, 0.01, tmp_path, STAR)
    svg = (tmp_path / "regret_oracle_clean.svg").read_text()
    assert svg.count("<polyline") == 1 and "<polygon" not in svg
    assert (tmp_path / "estimate_oracle_clean.svg").exists()
    assert not (tmp_path / "regret_modes.svg").exists()


def test_three_modes_in_one_figure(tmp_path):
    runs = {m: [run_episode(with_mode(CFG, m), s, s) for s in range(2)]
            for m in ("naive", "self_correcting", "oracle_clean")}
    emit_plots(runs, 0.01, tmp_path)
    svg = (tmp_path / "regret_modes.svg").read_text()
    assert svg.count("<polyline") == 3 and svg.count("<polygon") == 3
    for m in runs:
        assert f">{m}</text>" in svg


def test_identical_inputs_give_identical_bytes():
    t = np.arange(1, 2001)
    series = [Series("a", t, np.sqrt(t), np.sqrt(t) - 1, np.sqrt(t) + 1)]
    assert line_plot(series, "x", "t", "y") == line_plot(series, "x", "t", "y")


def test_constant_series_renders():
    svg = line_plot([Series("flat", np.array([0, 1]), np.array([2.0, 2.0]))], "flat", "t", "y")
    assert svg.startswith("<svg") and '"nan' not in svg and ">nan<" not in svg
