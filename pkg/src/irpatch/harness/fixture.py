"""Calibrated default scene, detector and scene suite.

The detector and the scene generator are tuned together: a clean default
scene scores about 0.98, an empty frame about 0.005, and a patch of 15% of
the object area can only pull the top score under 0.3 if it sits on the
core of the template.  The detector uses a stride of 4, and the template's
checker term makes scores depend on pixel parity, so suite scenes shift
the blob by even offsets only.
"""

from __future__ import annotations

import numpy as np

from ..victim import SceneSpec, TemplateDetector, ellipse_box, silhouette_template

DETECTOR_BIAS = -0.6
DETECTOR_STRIDE = 4
COVER_VALUE = 0.2


def default_detector() -> TemplateDetector:
    template = silhouette_template()
    # report the silhouette of a default blob, not the whole window
    box = ellipse_box(*template.shape, SceneSpec().blob_axes)
    return TemplateDetector(template, DETECTOR_BIAS, DETECTOR_STRIDE, box)


def default_scene(seed: int = 0) -> SceneSpec:
    return SceneSpec(seed=seed)


def jittered_scene(
    base: SceneSpec,
    seed: int,
    center: int = 4,
    step: int = 2,
    intensity: float = 0.05,
) -> SceneSpec:
    """Copy of ``base`` with a seeded shift and warmth change.

    The centre moves by multiples of ``step`` up to ``center`` pixels along
    each axis and the blob intensity by up to ``intensity``.  The noise
    seed is ``seed`` as well.
    """
    rng = np.random.default_rng(seed)
    k = center // step if step > 0 else 0
    dr, dc = (step * int(v) for v in rng.integers(-k, k + 1, size=2))
    warmth = base.blob_intensity + (rng.uniform(-intensity, intensity) if intensity else 0.0)
    r0, c0 = base.blob_center
    return SceneSpec(
        height=base.height,
        width=base.width,
        background=base.background,
        blob_center=(r0 + dr, c0 + dc),
        blob_axes=base.blob_axes,
        blob_intensity=float(min(warmth, 1.0)),
        noise_amplitude=base.noise_amplitude,
        seed=seed,
    )


def fixture_suite(n: int, seed: int = 0, base: SceneSpec | None = None, **jitter) -> list[SceneSpec]:
    """``n`` jittered scenes with seeds ``seed, seed + 1, ...``."""
    base = base or default_scene()
    return [jittered_scene(base, seed + i, **jitter) for i in range(n)]
