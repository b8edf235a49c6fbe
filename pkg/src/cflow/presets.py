"""Named study configurations for the anisotropic Dirichlet benchmark.

All presets use the H1 seminorm metric, alpha = 25 and eps = 1e-8.  The
``table-*`` presets sweep the 64 x 64 mesh; ``quick`` runs every accelerated
scheme on a 32 x 32 mesh over a step range short enough for a few minutes of
compute.
"""

from __future__ import annotations

from .study import StudyConfig, parse_config_text

__all__ = ["PRESETS", "preset_names", "load_preset"]

_COMMON = """
benchmark = anisotropic_dirichlet
anisotropy = 1, 10
metric = H1
alpha = 25
eps = 1e-8
"""

PRESETS = {
    "table-bdf1": "mesh_n = 64\nschemes = AF_BDF1\ns = 2^-1, 2^-2, 2^-3, 2^-4, 2^-5\n",
    "table-bdf2": "mesh_n = 64\nschemes = AF_BDF2\ns = 2^0, 2^-1, 2^-2, 2^-3, 2^-4, 2^-5, 2^-6\n",
    "table-bdfk": "mesh_n = 64\nschemes = AF_BDFK3, AF_BDFK4\ns = 2^-1, 2^-2, 2^-3, 2^-4, 2^-5, 2^-6\n",
    "gf-bdf1": "mesh_n = 64\nschemes = GF_BDF1\ns = 2^-1, 2^-2, 2^-3, 2^-4, 2^-5\n",
    "gf-bdf2": "mesh_n = 64\nschemes = GF_BDF2\ns = 2^0, 2^-1, 2^-2, 2^-3, 2^-4, 2^-5, 2^-6\n",
    "quick": "mesh_n = 32\nschemes = AF_BDF1, AF_BDF2, AF_BDFK3, AF_BDFK4\ns = 2^-2, 2^-3, 2^-4\n",
}


def preset_names() -> list[str]:
    return sorted(PRESETS)


def load_preset(name: str) -> StudyConfig:
    """Study configuration registered under ``name`` (no output path set)."""
    try:
        body = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(preset_names())}") from None
    return parse_config_text(_COMMON + body, source=f"preset {name}")
