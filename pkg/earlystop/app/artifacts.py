# earlystop/app/artifacts.py
import csv
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import ConfigurationError
from .schemas import RunManifest

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"

# fixed ids and no timestamp keep SVG output byte-identical across reruns
plt.rcParams.update({
    "svg.hashsalt": "earlystop",
    "svg.fonttype": "path",
    "figure.figsize": (6.0, 4.0),
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.5,
})


# ---------------- CSV ---------------- #

def format_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return format(value, ".17g")
    if hasattr(value, "item"):
        return format_cell(value.item())
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            if len(row) != len(header):
                raise ConfigurationError("CSV row width does not match header", path=str(path))
            writer.writerow([format_cell(v) for v in row])
    logger.debug("Wrote %s", path)
    return path


def read_csv(path: Path) -> Tuple[List[str], List[List[str]]]:
    with Path(path).open(encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


# ---------------- SVG ---------------- #

def line_plot(path: Path, series: Dict[str, Tuple[Sequence[float], Sequence[float]]],
              xlabel: str, ylabel: str, title: Optional[str] = None,
              logx: bool = False, logy: bool = False, markers: bool = False) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots()
    for label, (xs, ys) in series.items():
        ax.plot(xs, ys, marker="o" if markers else None, markersize=3, label=label)
    if logx:
        ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if len(series) > 1:
        ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    logger.debug("Wrote %s", path)
    return path


# ---------------- MANIFEST ---------------- #

def write_manifest(out_dir: Path, manifest: RunManifest) -> Path:
    path = Path(out_dir) / MANIFEST_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest.model_dump(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_manifest(path: Path) -> RunManifest:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.exists():
        raise ConfigurationError("Manifest not found", path=str(path))
    return RunManifest.model_validate_json(path.read_text(encoding="utf-8"))
