"""Render convergence panels from solver trace CSVs.

Consumes the trace format written by the bilevel-agm harness (header
``k,wall_s,f_val,g_val,f_gap,abs_f_gap,g_gap,a_k,A_k``, empty cells for
unknown gaps) and renders one image per distinct output path; panel specs
sharing an output path become subplots of one figure, laid out in a single
row, matching the four-panel infeasibility/suboptimality arrangement of the
benchmark figures.

Rendering is a pure function of (CSV bytes, spec): styling is pinned and
volatile image metadata is stripped, so re-rendering is byte-identical.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

X_AXES = {"iterations": "k", "wall_s": "wall_s"}
Y_METRICS = ("g_gap", "abs_f_gap", "f_val", "g_val")
MAX_POINTS = 2000

_STYLE = {
    "figure.dpi": 100,
    "savefig.dpi": 100,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.4,
    "legend.fontsize": 7,
    "axes.prop_cycle": plt.cycler(color=[
        "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf",
    ]),
}

_AXIS_LABELS = {
    "iterations": "iteration",
    "wall_s": "wall time (s)",
    "g_gap": "infeasibility",
    "abs_f_gap": "absolute suboptimality",
    "f_val": "upper objective",
    "g_val": "lower objective",
}


class RenderError(Exception):
    """Unreadable or malformed trace input; carries the offending file."""

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path


@dataclass(frozen=True)
class TraceRef:
    path: Path
    label: str


@dataclass(frozen=True)
class PanelSpec:
    """One axes definition: traces, axis choices, log flags, output image.

    Specs that share ``output`` are drawn side by side in a single figure.
    """

    traces: Tuple[TraceRef, ...]
    y: str
    x: str = "iterations"
    logx: bool = True
    logy: bool = True
    title: str = ""
    output: Path = Path("panel.png")

    def __post_init__(self):
        if self.x not in X_AXES:
            raise RenderError(f"unknown x axis {self.x!r} (one of {sorted(X_AXES)})")
        if self.y not in Y_METRICS:
            raise RenderError(f"unknown metric {self.y!r} (one of {sorted(Y_METRICS)})")


def spec_from_dict(d: dict, base_dir: Path = Path(".")) -> List[PanelSpec]:
    """Parse the JSON spec layout: {"figures": [{"output", "panels": [...]}]}."""
    specs: List[PanelSpec] = []
    for fig in d.get("figures", []):
        output = base_dir / fig["output"]
        for panel in fig["panels"]:
            traces = tuple(
                TraceRef(path=base_dir / t["path"], label=t.get("label", Path(t["path"]).stem))
                for t in panel["traces"]
            )
            specs.append(PanelSpec(
                traces=traces,
                y=panel["y"],
                x=panel.get("x", "iterations"),
                logx=bool(panel.get("logx", True)),
                logy=bool(panel.get("logy", True)),
                title=panel.get("title", ""),
                output=output,
            ))
    if not specs:
        raise RenderError("spec contains no figures/panels")
    return specs


def read_trace(path) -> Dict[str, np.ndarray]:
    """Read a harness trace CSV into column arrays (NaN for empty cells)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise RenderError(f"cannot read trace {path}: {exc}", path=path)
    lines = [ln for ln in text.split("\n") if ln]
    if not lines:
        raise RenderError(f"empty trace {path}", path=path)
    header = lines[0].split(",")
    if "k" not in header:
        raise RenderError(f"{path} does not look like a trace CSV (no 'k' column)", path=path)
    cols: Dict[str, list] = {h: [] for h in header}
    for ln in lines[1:]:
        cells = ln.split(",")
        if len(cells) != len(header):
            raise RenderError(f"{path}: ragged trace row", path=path)
        for h, cell in zip(header, cells):
            try:
                cols[h].append(float(cell) if cell else math.nan)
            except ValueError:
                raise RenderError(f"{path}: non-numeric cell {cell!r}", path=path)
    return {h: np.array(v, dtype=float) for h, v in cols.items()}


def _stride(n: int) -> int:
    return max(1, int(math.ceil(n / MAX_POINTS)))


def _panel_curves(spec: PanelSpec):
    curves = []
    xcol = X_AXES[spec.x]
    for ref in spec.traces:
        cols = read_trace(ref.path)
        if spec.y not in cols or not np.any(np.isfinite(cols[spec.y])):
            warnings.warn(
                f"trace {ref.path} has no usable {spec.y!r} column; skipping"
            )
            continue
        x = cols[xcol]
        y = cols[spec.y]
        keep = np.isfinite(x) & np.isfinite(y)
        if spec.logx:
            keep &= x > 0
        if spec.logy:
            keep &= y > 0
        x, y = x[keep], y[keep]
        step = _stride(x.shape[0])
        # keep the final point so floors stay visible after striding
        idx = np.unique(np.r_[np.arange(0, x.shape[0], step), max(x.shape[0] - 1, 0)])
        curves.append((ref.label, x[idx], y[idx]))
    return curves


def render_panels(specs: Sequence[PanelSpec]) -> List[Path]:
    """Render every spec; specs sharing an output path share one figure.

    Returns the written image paths (one per distinct output).  Traces
    missing the requested metric are skipped with a warning; unreadable
    trace files raise RenderError.
    """
    by_output: Dict[Path, List[PanelSpec]] = {}
    for spec in specs:
        by_output.setdefault(Path(spec.output), []).append(spec)

    written: List[Path] = []
    with plt.rc_context(_STYLE):
        for output, panels in by_output.items():
            n = len(panels)
            fig, axes = plt.subplots(1, n, figsize=(3.2 * n, 2.8), squeeze=False)
            for ax, spec in zip(axes[0], panels):
                for label, x, y in _panel_curves(spec):
                    ax.plot(x, y, label=label)
                if spec.logx:
                    ax.set_xscale("log")
                if spec.logy:
                    ax.set_yscale("log")
                ax.set_xlabel(_AXIS_LABELS[spec.x])
                ax.set_ylabel(_AXIS_LABELS[spec.y])
                if spec.title:
                    ax.set_title(spec.title)
                if spec.traces:
                    ax.legend(loc="best")
            fig.tight_layout()
            output.parent.mkdir(parents=True, exist_ok=True)
            metadata = _clean_metadata(output.suffix.lower())
            fig.savefig(output, metadata=metadata)
            plt.close(fig)
            written.append(output)
    return written


def _clean_metadata(suffix: str) -> Optional[dict]:
    # strip volatile fields so re-rendering is byte-identical
    if suffix == ".png":
        return {"Software": None}
    if suffix == ".svg":
        return {"Date": None, "Creator": None}
    return None
