"""Figure rendering for bilevel-agm trace CSVs."""

__version__ = "0.1.0"

from .render import PanelSpec, RenderError, TraceRef, read_trace, render_panels, spec_from_dict

__all__ = [
    "PanelSpec",
    "RenderError",
    "TraceRef",
    "read_trace",
    "render_panels",
    "spec_from_dict",
]
