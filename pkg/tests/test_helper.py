import numpy as np
import pandas as pd

from drycss import helper


def test_csv_keeps_full_precision(tmp_path):
    df = pd.DataFrame({"site": [3], "ratio": [1 / 3]})
    path = helper.write_csv(df, tmp_path / "out" / "t.csv")
    assert pd.read_csv(path)["ratio"].item() == 1 / 3
    assert b"\r\n" not in path.read_bytes()


def test_heatmap_is_north_up_with_magenta_nodata(tmp_path):
    values = np.array([[0.0, np.nan], [1.0, 0.5]])  # row 0 is the southern edge
    path = helper.write_heatmap(values, tmp_path / "css", vmin=0.0, vmax=1.0)
    data = path.read_bytes()
    header = b"P6\n2 2\n255\n"
    assert data.startswith(header)
    pixels = np.frombuffer(data[len(header):], dtype=np.uint8).reshape(2, 2, 3)
    assert pixels[0, 0].tolist() == [255, 255, 255]
    assert pixels[0, 1].tolist() == [128, 128, 128]
    assert pixels[1, 0].tolist() == [0, 0, 0]
    assert pixels[1, 1].tolist() == list(helper.NODATA_RGB)


def test_metrics_table_merges_mean_and_std():
    aggregate = pd.DataFrame(
        {"kind": ["blup"], "size": [4], "n_runs": [10], "val_rmse_mean": [0.31], "val_rmse_std": [0.02]}
    )
    text = helper.format_metrics_table(aggregate)
    assert "TRAINING METRICS" in text
    assert "0.310 ± 0.020" in text
    assert "val_rmse_mean" not in text


def test_uplift_summary_lists_exclusions():
    text = helper.format_uplift_summary(
        {"sites": 12, "ratio_of_means": 2.4688, "mean_of_ratios": 2.6662, "excluded_sites": [4]}
    )
    assert "2.4688" in text
    assert "excluded" in text and "[4]" in text


def test_stage_summary():
    text = helper.format_stage_summary("train", {"train/runs.json": "ab", "models/blup-0002-r00.json": "cd"})
    assert text.splitlines() == ["drycss train: wrote 2 artifacts", "  models/blup-0002-r00.json", "  train/runs.json"]
