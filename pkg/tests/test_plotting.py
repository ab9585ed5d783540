import numpy as np
from PIL import Image

from vmbeauty.bench import bench_scan
from vmbeauty.plotting import plot_bench, plot_loss_curve, plot_saliency_overlay
from vmbeauty.saliency import SaliencyMap


def is_png(path):
    with Image.open(path) as im:
        return im.format == "PNG" and im.size[0] > 100


class TestFigures:
    def test_loss_curve(self, tmp_path):
        hist = [{"epoch": e, "mean_train_loss": 1.0 / e, "val_pc": 0.1, "val_mae": 0.5, "val_rmse": 0.6}
                for e in range(1, 5)]
        assert is_png(plot_loss_curve(hist, tmp_path / "loss.png"))

    def test_bench(self, tmp_path):
        res = bench_scan([16, 32, 64], trials=1, batch=1, inner=4, d_state=2, attn_batch=1, attn_dim=8)
        assert is_png(plot_bench(res, tmp_path / "bench.png"))

    def test_overlay(self, tmp_path, rng):
        smap = SaliencyMap(rng.uniform(size=(4, 4)), "vit", np.zeros((4, 4)), 3.0)
        assert is_png(plot_saliency_overlay(rng.uniform(size=(16, 16, 3)), smap, tmp_path / "o.png"))
