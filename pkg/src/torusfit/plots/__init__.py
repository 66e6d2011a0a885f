"""SVG figures for sweeps, probe runs and section overlays."""
