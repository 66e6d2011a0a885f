"""
SVG figures generated from run outputs

Every figure is drawn on its own matplotlib Figure (no pyplot state) with
the Agg backend, and saved as SVG with a fixed hash salt and no date
metadata, so the same data always gives the same bytes.

Usage:
    from torusfit.plots.figures import sweep_contour, section_overlay
    sweep_contour(records, 'output/sweep/sigma.svg')
"""

import logging
from pathlib import Path
from typing import Dict, Mapping, Optional, Sequence, Union

import matplotlib

matplotlib.use('Agg')

import numpy as np  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

from torusfit.verify.sections import SectionSet  # noqa: E402

logger = logging.getLogger('torusfit.plots')

HASH_SALT = 'torusfit'
FAMILY_STYLES = {
    'loop': {'marker': 'o', 'facecolors': 'none', 'edgecolors': 'black'},
    'box': {'marker': 'x', 'color': 'gray'},
}


def _save(fig: Figure, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with matplotlib.rc_context({'svg.hashsalt': HASH_SALT, 'svg.fonttype': 'path'}):
        fig.savefig(path, format='svg', metadata={'Date': None})
    logger.debug(f"Wrote {path}")
    return path


def sweep_contour(records: Sequence[Mapping[str, float]], path: Union[str, Path]) -> Path:
    """log10 sigma over (omega, N); falls back to a scatter when the lattice is too small to contour."""
    omegas = sorted({float(r['omega']) for r in records})
    orders = sorted({int(r['N']) for r in records})
    values = np.full((len(orders), len(omegas)), np.nan)
    for r in records:
        sigma = float(r['sigma'])
        if np.isfinite(sigma) and sigma > 0:
            values[orders.index(int(r['N'])), omegas.index(float(r['omega']))] = np.log10(sigma)
        elif sigma == 0:
            values[orders.index(int(r['N'])), omegas.index(float(r['omega']))] = -16.0

    fig = Figure(figsize=(6, 4.5))
    ax = fig.add_subplot()
    finite = np.isfinite(values)
    if len(omegas) > 1 and len(orders) > 1 and finite.sum() >= 4:
        filled = np.where(finite, values, np.nanmax(values[finite]))
        mesh = ax.contourf(omegas, orders, filled, levels=16, cmap='viridis')
    else:
        w, n = np.meshgrid(omegas, orders)
        mesh = ax.scatter(w[finite], n[finite], c=values[finite], cmap='viridis', s=80)
    fig.colorbar(mesh, ax=ax, label='log10 sigma(H)')
    ax.set_xlabel('omega')
    ax.set_ylabel('N')
    ax.set_title('Isochrone: energy spread of the fitted torus')
    return _save(fig, path)


def probe_scatter(runs: Mapping[str, np.ndarray], path: Union[str, Path], space: str = 'actions') -> Path:
    """
    Accepted lattice points of one or more family runs.

    Args:
        runs: family name -> (K, 2) points (actions or frequencies)
        path: Output SVG
        space: 'actions' or 'frequencies' (axis labels only)
    """
    if space not in ('actions', 'frequencies'):
        raise ValueError(f"space must be 'actions' or 'frequencies', got '{space}'")
    symbol = 'J' if space == 'actions' else 'omega'
    fig = Figure(figsize=(5, 5))
    ax = fig.add_subplot()
    for family, points in sorted(runs.items()):
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        style = FAMILY_STYLES.get(family, {'marker': '.'})
        ax.scatter(points[:, 0], points[:, 1], s=20, label=f"{family} ({len(points)})", **style)
    ax.set_xlabel(f'{symbol}_1')
    ax.set_ylabel(f'{symbol}_2')
    if runs:
        ax.legend(loc='best')
    return _save(fig, path)


def section_overlay(sections: Sequence[SectionSet], path: Union[str, Path],
                    title: Optional[str] = None) -> Path:
    """Poincare section points (x, xdot) of integrated and constructed orbits on one plot."""
    styles: Dict[str, Dict] = {
        'integrated': {'s': 6, 'color': 'gray', 'marker': '.'},
        'constructed': {'s': 14, 'facecolors': 'none', 'edgecolors': 'black', 'marker': 'o', 'linewidths': 0.6},
    }
    fig = Figure(figsize=(5, 5))
    ax = fig.add_subplot()
    for section in sections:
        ax.scatter(section.points[:, 0], section.points[:, 1], label=f"{section.source} ({len(section)})",
                   **styles[section.source])
    ax.set_xlabel('x')
    ax.set_ylabel('xdot')
    if title:
        ax.set_title(title)
    ax.legend(loc='best')
    return _save(fig, path)


def xy_overlay(integrated_q: np.ndarray, constructed_q: np.ndarray, path: Union[str, Path],
               title: Optional[str] = None) -> Path:
    """Configuration-space curves of the integrated orbit and the constructed torus."""
    fig = Figure(figsize=(5, 5))
    ax = fig.add_subplot()
    ax.plot(integrated_q[:, 0], integrated_q[:, 1], color='gray', linewidth=0.5, label='integrated')
    ax.plot(constructed_q[:, 0], constructed_q[:, 1], color='black', linewidth=0.8, linestyle='--',
            label='constructed')
    ax.set_aspect('equal', adjustable='datalim')
    ax.set_xlabel('x')
    ax.set_ylabel('y')
    if title:
        ax.set_title(title)
    ax.legend(loc='best')
    return _save(fig, path)
