"""
SVG Line Plots

F(sigma) curves rendered through matplotlib's object API (no pyplot state,
so plots can be built from worker threads). The SVG hash salt is fixed and
the date stamp dropped, so repeated runs produce identical files.
"""

import io
from dataclasses import dataclass
from typing import List, Sequence

import matplotlib
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

SVG_HASH_SALT = "dicke-dft"
FIGURE_SIZE = (6.4, 4.4)


@dataclass
class Series:
    label: str
    x: Sequence[float]
    y: Sequence[float]


def render_line_plot(series: List[Series], title: str, x_label: str, y_label: str) -> str:
    """
    Self-contained SVG document with one line per series.

    Each line is emitted as an SVG group with id "series_<index>". Non-finite
    points break a line into separate segments.
    """
    figure = Figure(figsize=FIGURE_SIZE)
    FigureCanvasAgg(figure)
    axes = figure.add_subplot()
    for index, s in enumerate(series):
        axes.plot(s.x, s.y, label=s.label, linewidth=1.5, gid=f"series_{index}")
    axes.set_title(title)
    axes.set_xlabel(x_label)
    axes.set_ylabel(y_label)
    axes.grid(True, alpha=0.3)
    if series:
        axes.legend(loc="center left", bbox_to_anchor=(1.02, 0.5), frameon=False)
    figure.tight_layout()

    buffer = io.BytesIO()
    with matplotlib.rc_context({"svg.hashsalt": SVG_HASH_SALT}):
        figure.savefig(buffer, format="svg", metadata={"Date": None})
    return buffer.getvalue().decode("utf-8")
