"""Static PNG figures for run directories."""

import io
import logging
from collections import defaultdict
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from fingerprint_app import Fingerprint  # noqa: E402

logger = logging.getLogger(__name__)

# Palette shared by every figure
COLORS = {
    'bg': '#FFFFFF',
    'text': '#23272A',
    'grid': '#99AAB5',
    'cnn3d': '#7289DA',
    'cnn2d': '#43B581',
    'wknn': '#F04747',
}

FIGSIZE_GRAPH = (8, 5)
FIGSIZE_IMAGE = (10, 4)
FONT_SIZE = 12
TITLE_SIZE = 14


def _configure_matplotlib_style() -> None:
    plt.rcParams.update({
        'figure.facecolor': COLORS['bg'],
        'axes.facecolor': COLORS['bg'],
        'text.color': COLORS['text'],
        'axes.labelcolor': COLORS['text'],
        'xtick.color': COLORS['text'],
        'ytick.color': COLORS['text'],
        'font.size': FONT_SIZE,
    })


def _save_figure(path: Path) -> Path:
    """Save the current figure as PNG and close it."""
    buf = io.BytesIO()
    plt.savefig(buf, format='png', bbox_inches='tight')
    plt.close()
    Path(path).write_bytes(buf.getvalue())
    logger.debug("Wrote figure %s", path)
    return Path(path)


def _style_axes(ax) -> None:
    ax.grid(color=COLORS['grid'], linestyle='dashed', linewidth=0.5, alpha=0.5)
    ax.spines['top'].set_visible(False)
    ax.spines['right'].set_visible(False)


def plot_cdfs(tables: Mapping[str, np.ndarray], path: Path, title: str = "Localization error") -> Path:
    """One error CDF curve per label; *tables* maps a label to an (n, 2) array of (error_m, cdf)."""
    _configure_matplotlib_style()
    fig, ax = plt.subplots(figsize=FIGSIZE_GRAPH)
    for label, table in tables.items():
        ax.step(table[:, 0], table[:, 1], where='post', label=label,
                color=COLORS.get(label.split('/')[0]), linewidth=2)
    ax.set_xlabel('Localization error (m)')
    ax.set_ylabel('CDF')
    ax.set_ylim(0, 1.02)
    ax.set_title(title, fontsize=TITLE_SIZE)
    ax.legend()
    _style_axes(ax)
    return _save_figure(path)


def plot_sweep(rows: Sequence[dict], path: Path, x_key: str = "snr_db", y_key: str = "mean_error_m") -> Path:
    """Mean error against the swept value, one curve per method/fingerprint pair."""
    series: dict[str, list[tuple[float, float]]] = defaultdict(list)
    for row in rows:
        series[f"{row['method']}/{row['fingerprint']}"].append((row[x_key], row[y_key]))

    _configure_matplotlib_style()
    fig, ax = plt.subplots(figsize=FIGSIZE_GRAPH)
    for label, points in series.items():
        points.sort()
        xs, ys = zip(*points)
        linestyle = '-' if label.endswith('adcpm') else '--'
        ax.plot(xs, ys, marker='o', linestyle=linestyle, label=label, color=COLORS.get(label.split('/')[0]))
    ax.set_xlabel('SNR (dB)' if x_key == 'snr_db' else x_key)
    ax.set_ylabel('Mean localization error (m)')
    ax.legend()
    _style_axes(ax)
    return _save_figure(path)


def plot_fingerprint(fp: Fingerprint, path: Path, title: str | None = None) -> Path:
    """Angle index against delay (or subcarrier) index."""
    _configure_matplotlib_style()
    fig, ax = plt.subplots(figsize=FIGSIZE_IMAGE)
    image = ax.imshow(fp.omega, aspect='auto', origin='lower', cmap='viridis', interpolation='nearest')
    ax.set_xlabel('delay index' if fp.kind.value == 'adcpm' else 'subcarrier index')
    ax.set_ylabel('angle index' if fp.kind.value == 'adcpm' else 'antenna index')
    ax.set_title(title or f"{fp.kind.value.upper()} ({fp.M}x{fp.N} array)", fontsize=TITLE_SIZE)
    fig.colorbar(image, ax=ax, label='power')
    return _save_figure(path)
