"""Published full-scale results, kept for side-by-side display only.

Values are RMSE (mph), MAE (mph) and MAPE (percent) at the 6, 12, 18 and 24
hour horizons.  They come from full METR-LA / PEMS-BAY training runs and are
not reproduced by anything in this package.
"""

from __future__ import annotations

REFERENCE_LABEL = "published reference, not reproduced"
HORIZON_NAMES = ("6h", "12h", "18h", "24h")


def _rows(table: dict[str, list[float]]) -> dict[str, dict[str, dict[str, float]]]:
    out = {}
    for model, flat in table.items():
        if len(flat) != 12:
            raise ValueError(f"{model}: expected 12 values, got {len(flat)}")
        out[model] = {
            h: {"rmse": flat[3 * i], "mae": flat[3 * i + 1], "mape_percent": flat[3 * i + 2]}
            for i, h in enumerate(HORIZON_NAMES)
        }
    return out


RESULTS = {
    "METR-LA": _rows({
        "FNN": [11.46, 6.05, 22.14, 11.52, 6.08, 22.46, 11.54, 6.10, 22.56, 11.46, 6.09, 22.36],
        "Stacked GRU": [10.70, 5.68, 19.72, 10.78, 5.72, 20.03, 10.77, 5.73, 20.05, 10.69, 5.71, 19.78],
        "Seq2Seq LSTM": [9.68, 5.02, 16.83, 9.74, 5.06, 17.09, 9.77, 5.07, 17.17, 9.72, 5.06, 17.05],
        "DCRNN": [8.99, 4.29, 13.20, 9.33, 4.48, 13.61, 9.66, 4.64, 13.98, 9.63, 4.66, 14.29],
        "STGCN": [14.86, 8.76, 21.07, 15.88, 9.31, 22.24, 15.31, 9.12, 21.99, 13.60, 7.83, 21.29],
        "GAMCN": [13.33, 6.30, 16.23, 12.52, 5.85, 15.90, 11.51, 5.35, 15.07, 9.61, 4.60, 13.84],
        "TrafFormer": [8.47, 4.11, 13.25, 8.53, 4.14, 13.39, 8.56, 4.16, 13.50, 8.59, 4.18, 13.57],
    }),
    "PEMS-BAY": _rows({
        "FNN": [8.27, 3.83, 11.21, 8.25, 3.83, 11.17, 8.25, 3.83, 11.17, 8.23, 3.84, 11.12],
        "Stacked GRU": [6.20, 2.82, 7.17, 6.20, 2.84, 7.19, 6.20, 2.84, 7.19, 6.20, 2.86, 7.20],
        "Seq2Seq LSTM": [6.22, 2.83, 7.13, 6.22, 2.83, 7.11, 6.22, 2.83, 7.11, 6.24, 2.85, 7.12],
        "DCRNN": [5.54, 2.45, 6.07, 5.83, 2.54, 6.43, 5.83, 2.54, 6.43, 5.84, 2.58, 6.32],
        "STGCN": [5.76, 2.65, 6.30, 6.18, 2.83, 6.86, 6.18, 2.83, 6.86, 6.81, 3.07, 7.80],
        "GAMCN": [5.16, 2.30, 5.56, 5.18, 2.31, 5.59, 5.18, 2.31, 5.59, 5.22, 2.34, 5.63],
        "TrafFormer": [5.47, 2.59, 6.15, 5.43, 2.58, 6.09, 5.43, 2.58, 6.09, 5.46, 2.59, 6.14],
    }),
}

# input-feature ablations of TrafFormer
ABLATIONS = {
    "METR-LA": _rows({
        "Default": [8.47, 4.11, 13.25, 8.53, 4.14, 13.39, 8.56, 4.16, 13.50, 8.59, 4.18, 13.57],
        "MSE": [8.03, 4.59, 14.05, 8.17, 4.66, 14.38, 8.22, 4.7, 14.47, 8.14, 4.67, 14.19],
        "Hour only": [9.54, 4.81, 15.61, 9.64, 4.87, 15.95, 9.68, 4.89, 16.07, 9.63, 4.88, 15.97],
        "Day only": [12.01, 5.91, 22.59, 12.16, 5.99, 23.06, 12.25, 6.05, 23.33, 12.14, 6.01, 23.05],
        "Cyclical": [11.18, 6.02, 21.04, 11.26, 6.06, 21.35, 11.31, 6.09, 21.49, 11.25, 6.07, 21.32],
        "Speed only": [11.33, 6.00, 20.84, 11.30, 5.98, 20.87, 11.49, 6.13, 21.44, 11.39, 6.06, 21.15],
    }),
    "PEMS-BAY": _rows({
        "Default": [5.47, 2.59, 6.15, 5.43, 2.58, 6.09, 5.43, 2.57, 6.08, 5.46, 2.59, 6.14],
        "MSE": [5.31, 2.76, 6.47, 5.32, 2.78, 6.46, 5.31, 2.77, 6.42, 5.37, 2.81, 6.50],
        "Hour only": [6.21, 2.85, 7.15, 6.22, 2.85, 7.12, 6.24, 2.86, 7.13, 6.27, 2.88, 7.19],
        "Day only": [6.21, 3.13, 7.41, 6.19, 3.13, 7.46, 6.18, 3.12, 7.43, 6.23, 3.16, 7.49],
        "Cyclical": [8.51, 4.28, 11.11, 8.54, 4.29, 11.09, 8.56, 4.31, 11.11, 8.61, 4.34, 11.21],
        "Speed only": [8.57, 4.26, 11.24, 8.50, 4.27, 11.03, 8.66, 4.35, 11.31, 8.48, 4.27, 10.94],
    }),
}


def reference_cell(dataset: str, model: str, horizon: str, table: str = "results") -> dict[str, float]:
    """``{"rmse", "mae", "mape_percent"}`` for one published cell."""
    source = {"results": RESULTS, "ablations": ABLATIONS}[table]
    return dict(source[dataset][model][horizon])
