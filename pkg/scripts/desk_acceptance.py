"""
Desk-scale acceptance numbers.
Reads a finished run (drycss run-all with the default 32x32 config) and the
shipped site tables, and prints the figures the run is judged on:
combined ensemble validation r, BLUP r at 32 vs 64 bins, pixel r against the
planted field, category separation, BLUP-vs-NN IoU, retained candidates and
NDVI uplift.

    python scripts/desk_acceptance.py drycss-run
"""
import json
import os
import sys

import pandas as pd

sys.path.insert(0, os.path.dirname(os.path.dirname(__file__)))

from drycss import helper, opportunity  # noqa: E402
from drycss.flows import DATA_DIR  # noqa: E402

MIN_VAL_R = 0.8
MIN_PIXEL_R = 0.8
MIN_SEPARATION = 0.3
FLAT_AFTER_32 = 0.05
EXPECTED_RETAINED = [3, 4, 5, 7, 9, 14, 15, 16, 18, 19, 21, 22, 24]


def check(label: str, ok: bool, detail: str) -> dict:
    return {"check": label, "result": "PASS" if ok else "FAIL", "detail": detail}


def run_checks(workdir: str) -> list[dict]:
    rows = []

    aggregate = pd.read_csv(os.path.join(workdir, "train", "aggregate.csv"))
    print(helper.format_metrics_table(aggregate))
    ensemble = pd.read_csv(os.path.join(workdir, "train", "ensemble.csv"))
    val_r = float(ensemble["val_r"].mean())
    rows.append(check("combined validation r", val_r >= MIN_VAL_R, f"mean r {val_r:.3f} over {len(ensemble)} repetitions"))

    blup = aggregate[aggregate["kind"] == "blup"].set_index("size")["val_r_mean"]
    if {32, 64} <= set(blup.index):
        gap = abs(float(blup[32] - blup[64]))
        rows.append(check("blup flat after 32", gap <= FLAT_AFTER_32, f"|r(32) - r(64)| = {gap:.4f}"))

    agreement = json.load(open(os.path.join(workdir, "predict", "agreement.json")))
    pixel_r = agreement.get("pixel_r_planted", {}).get("combined", float("nan"))
    rows.append(check("combined pixel r", pixel_r >= MIN_PIXEL_R, f"r {pixel_r:.3f} vs planted suitability"))
    if "iou_blup_nn" in agreement:
        rows.append(check("blup vs nn IoU", True, f"{agreement['iou_blup_nn']:.3f} at CSS {agreement['threshold']}"))

    means = pd.read_csv(os.path.join(workdir, "calibrate", "category_means.csv")).set_index("category")["combined"]
    hi, lo = means["HiSuit-HiVeg"], means["LoSuit-LoVeg"]
    between = all(min(hi, lo) <= means[c] <= max(hi, lo) for c in ("LoSuit-HiVeg", "HiSuit-LoVeg") if c in means)
    rows.append(check("category separation", hi - lo >= MIN_SEPARATION and between, f"HiSuit-HiVeg - LoSuit-LoVeg = {hi - lo:.3f}"))

    table = opportunity.load_attribute_table(DATA_DIR / "table_s4.csv")
    rules = opportunity.load_rules(DATA_DIR / "default.rules")
    retained = [s.rank for s in opportunity.filter_candidates(opportunity.sites_from_table(table), rules)]
    rows.append(check("retained sites", retained == EXPECTED_RETAINED, f"{len(retained)} of {len(table)}"))

    uplift = opportunity.uplift_report(opportunity.matches_from_table(pd.read_csv(DATA_DIR / "table_s5.csv")))
    print()
    print(helper.format_uplift_summary(uplift.summary()))
    rows.append(check("uplift ratio of means", abs(uplift.ratio_of_means - 2.47) <= 0.02, f"{uplift.ratio_of_means:.4f}"))
    return rows


if __name__ == "__main__":
    workdir = sys.argv[1] if len(sys.argv) > 1 else "drycss-run"
    results = run_checks(workdir)
    print()
    print(helper.format_table(pd.DataFrame(results), "DESK ACCEPTANCE"))
    failed = sum(r["result"] == "FAIL" for r in results)
    print(f"\n{len(results) - failed}/{len(results)} checks passed")
    sys.exit(1 if failed else 0)
