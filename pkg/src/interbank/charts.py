"""Static SVG panels rendered from realization series.

Charts are a plain rendering of the series data, never an independent
computation, and the output is byte-deterministic: a fixed hash salt and no
date metadata.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

PANELS = (
    ("rate", "interest rate"),
    ("rel_equity", "total relative equity"),
    ("defaulted_frac", "defaulted fraction"),
    ("gamma", "depricing factor"),
)

_HASHSALT = "interbank-panels"


def render_panels(
    curves: "dict[str, object]", outdir: str | Path, prefix: str = "panel"
) -> list[Path]:
    """Write one SVG per panel, one curve per label.

    ``curves`` maps a curve label (usually the shock policy) to any object
    with ``rate``, ``rel_equity``, ``defaulted_frac`` and ``gamma`` array
    attributes, e.g. a RunRecord.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    with plt.rc_context({"svg.hashsalt": _HASHSALT}):
        for attr, title in PANELS:
            fig, ax = plt.subplots(figsize=(6.0, 4.0))
            for label, record in curves.items():
                series = getattr(record, attr)
                ax.plot(range(len(series)), series, label=label, linewidth=1.2)
            ax.set_xlabel("iteration")
            ax.set_ylabel(title)
            if curves:
                ax.legend(fontsize=8)
            ax.grid(True, alpha=0.3)
            path = outdir / f"{prefix}_{attr}.svg"
            fig.savefig(path, format="svg", metadata={"Date": None})
            plt.close(fig)
            written.append(path)
    return written
