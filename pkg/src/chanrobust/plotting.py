"""PNG renderings of the report CSVs (matplotlib, Agg backend)."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .channel import SpectrumCurve  # noqa: E402
from .metrics import DetBand, DetCurve, Histogram, probit  # noqa: E402

_TICKS = np.array([0.001, 0.01, 0.05, 0.2, 0.5, 0.8, 0.95])


def _probit_axes(ax):
    t = probit(_TICKS)
    labels = [f"{100 * p:g}" for p in _TICKS]
    ax.set_xticks(t, labels)
    ax.set_yticks(t, labels)
    ax.set_xlim(t[0], t[-1])
    ax.set_ylim(t[0], t[-1])
    ax.set_xlabel("false alarm rate (%)")
    ax.set_ylabel("miss rate (%)")
    ax.grid(alpha=0.3)


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def plot_det(curves: Mapping[str, DetCurve], band: DetBand | None, path, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(5, 5))
    for name, c in curves.items():
        pts = c.points
        ax.plot(pts[:, 0], pts[:, 1], lw=0.8, alpha=0.6, label=name)
    if band is not None:
        ax.plot(band.probit_far, band.mean_probit_frr, "k", lw=2, label="seen mean")
        ax.fill_between(band.probit_far, band.mean_probit_frr - band.std_probit_frr,
                        band.mean_probit_frr + band.std_probit_frr, color="k", alpha=0.15)
    _probit_axes(ax)
    ax.set_title(title)
    ax.legend(fontsize=6, ncol=2)
    return _save(fig, path)


def plot_histograms(hists: Mapping[str, Histogram], path, title: str = "") -> Path:
    fig, axes = plt.subplots(len(hists), 1, figsize=(6, 2.2 * len(hists)), squeeze=False)
    for ax, (name, h) in zip(axes[:, 0], hists.items()):
        centres = 0.5 * (h.edges[:-1] + h.edges[1:])
        width = h.edges[1] - h.edges[0]
        ax.bar(centres, h.count_bonafide, width, alpha=0.6, label="bona fide")
        ax.bar(centres, h.count_spoof, width, alpha=0.6, label="spoof")
        ax.set_ylabel(name)
    axes[0, 0].set_title(title)
    axes[0, 0].legend(fontsize=7)
    axes[-1, 0].set_xlabel("score")
    return _save(fig, path)


def plot_spectra(curves: Mapping[str, SpectrumCurve], path, title: str = "",
                 reference: str | None = None) -> Path:
    """Average spectra; with ``reference`` set, curves are drawn relative to it."""
    fig, ax = plt.subplots(figsize=(7, 4))
    ref = curves[reference].magnitude_db if reference else 0.0
    for name, c in curves.items():
        if name == reference:
            continue
        ax.plot(c.bin_freqs_hz, c.magnitude_db - ref, lw=0.9, label=name)
    ax.set_xlabel("frequency (Hz)")
    ax.set_ylabel("dB" if reference is None else f"dB re {reference}")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=6, ncol=3)
    return _save(fig, path)


def plot_eer_bars(eers: Mapping[str, Mapping[str, float]], channels: Sequence[str], path,
                  title: str = "") -> Path:
    """Grouped bars: one group per channel, one bar per strategy (EER in %)."""
    fig, ax = plt.subplots(figsize=(9, 3.5))
    n = len(eers)
    x = np.arange(len(channels))
    w = 0.8 / max(n, 1)
    for i, (strategy, by_ch) in enumerate(eers.items()):
        ax.bar(x + (i - (n - 1) / 2) * w, [100 * by_ch[c] for c in channels], w, label=strategy)
    ax.set_xticks(x, channels, rotation=45)
    ax.set_ylabel("EER (%)")
    ax.set_title(title)
    ax.legend(fontsize=7)
    return _save(fig, path)
