"""Published reference numbers shipped with the package for side-by-side reports.

These values are data, not something the library reproduces: the FLOPs
curves compare transformer blocks of several video inpainting methods at
240p (against temporal length) and at 10 frames (against resolution), and
the EPE table lists flow-completion end-point errors of trained networks.
"""

# GFLOPs of one transformer stack vs. temporal length, 240p input.
FLOPS_VS_LENGTH = {
    "FuseFormer": [(10, 75.1), (20, 256.0), (30, 544.0), (40, 937.0)],
    "FGT": [(10, 70.0), (20, 168.0), (30, 292.0), (40, 443.0), (50, 620.0), (60, 824.0)],
    "E2FGVI": [(10, 37.65), (20, 106.0), (30, 206.0), (40, 336.0), (50, 498.0), (60, 690.0)],
    "Ours": [(10, 25.77), (20, 58.1), (30, 97.0), (40, 143.0), (50, 195.0), (60, 253.0)],
}

# GFLOPs vs. frame height (240p, 480p, ...), 10 frames.
FLOPS_VS_RESOLUTION = {
    "FGT": [(240, 70.0), (480, 463.0), (720, 1880.0)],
    "E2FGVI": [(240, 37.65), (480, 151.0), (720, 339.0), (960, 602.0)],
    "Ours": [(240, 25.77), (480, 95.0), (720, 212.0), (960, 374.0)],
}

# Flow completion end-point error by dataset, and runtime in s/frame.
FLOW_COMPLETION_EPE = {
    "YouTube-VOS": {"DFVI": 0.046, "FGVC": 0.032, "FGT": 0.021, "ISVI": 0.019, "Ours": 0.020},
    "DAVIS": {"DFVI": 0.107, "FGVC": 0.082, "FGT": 0.052, "ISVI": 0.051, "Ours": 0.051},
}
FLOW_COMPLETION_RUNTIME = {"DFVI": 0.130, "FGVC": 1.125, "FGT": 0.312, "ISVI": 0.231, "Ours": 0.005}

_ALIASES = {"e2fgvi": "E2FGVI", "e²fgvi": "E2FGVI", "fgt": "FGT", "fuseformer": "FuseFormer",
            "ours": "Ours", "propainter": "Ours"}


def _method(name: str) -> str:
    try:
        return _ALIASES[name.lower()]
    except KeyError:
        raise KeyError(f"no reference curve for method {name!r}") from None


def reference_curves() -> dict:
    """Both FLOPs curves as ``{"length": {...}, "resolution": {...}}`` (copies)."""
    return {
        "length": {k: list(v) for k, v in FLOPS_VS_LENGTH.items()},
        "resolution": {k: list(v) for k, v in FLOPS_VS_RESOLUTION.items()},
    }


def reference_gflops(method: str, length=None, resolution=None) -> float:
    """Look up one reference point, e.g. ``reference_gflops("Ours", length=10)``.

    ``resolution`` accepts a frame height (480) or a label like ``"480p"``.
    """
    if (length is None) == (resolution is None):
        raise ValueError("give exactly one of length or resolution")
    if length is not None:
        table, x = FLOPS_VS_LENGTH, int(length)
    else:
        table, x = FLOPS_VS_RESOLUTION, int(str(resolution).rstrip("p"))
    points = dict(table[_method(method)])
    if x not in points:
        raise KeyError(f"{method} has no reference point at {x}")
    return points[x]
