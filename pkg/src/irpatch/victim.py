"""Victim detectors, the disappearance loss and a synthetic thermal scene.

A victim is anything with ``score(image) -> DetectionSet`` and
``grad_top1(image) -> ndarray``.  :class:`TemplateDetector` is the built-in
differentiable one: a sliding-window linear template squashed by a sigmoid.
:class:`FiniteDifferenceModel` turns any black-box scorer into a victim by
central differences over a support region.
"""

from __future__ import annotations

import logging
import os
import shlex
import subprocess
import tempfile
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import ContractViolation, DimensionError, ParameterError
from .imgcore import GrayImage
from .pnm import write_pgm

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Detection:
    box: tuple[int, int, int, int]  # row, col, height, width
    score: float


class DetectionSet:
    """Scored candidate boxes, stored column-wise.

    ``top1`` is the index of the best box; ties go to the first box in
    row-major window order.
    """

    def __init__(self, boxes, scores):
        self.boxes = np.asarray(boxes, dtype=np.int64).reshape(-1, 4)
        self.scores = np.asarray(scores, dtype=np.float64).ravel()
        if len(self.boxes) != len(self.scores):
            raise DimensionError("boxes and scores differ in length")

    def __len__(self):
        return len(self.scores)

    @property
    def top1(self) -> int:
        if len(self.scores) == 0:
            raise ContractViolation("empty detection set")
        return int(np.argmax(self.scores))

    @property
    def top1_score(self) -> float:
        return float(self.scores[self.top1])

    @property
    def top1_box(self) -> tuple[int, int, int, int]:
        return tuple(int(v) for v in self.boxes[self.top1])

    @property
    def detections(self) -> list[Detection]:
        return [
            Detection(tuple(int(v) for v in b), float(s))
            for b, s in zip(self.boxes, self.scores)
        ]


class VictimModel(Protocol):
    def score(self, image) -> DetectionSet: ...

    def grad_top1(self, image) -> np.ndarray: ...


def loss_attack(model: VictimModel, x_adv) -> tuple[float, np.ndarray]:
    """Highest candidate confidence and its gradient w.r.t. every pixel."""
    dets = model.score(x_adv)
    if len(dets) == 0:
        raise ContractViolation("victim returned no detections")
    return dets.top1_score, np.asarray(model.grad_top1(x_adv), dtype=np.float64)


class TemplateDetector:
    """``s_i = sigmoid(<template, window_i> + bias)`` over a strided grid.

    ``box`` is the object's ``(row, col, height, width)`` inside a window
    and sets the reported detection boxes; by default it is the whole
    window.
    """

    def __init__(self, template, bias: float = 0.0, stride: int = 1, box=None):
        template = np.asarray(template, dtype=np.float64)
        if template.ndim != 2 or template.size == 0:
            raise DimensionError(f"template must be a non-empty 2-D grid, got {template.shape}")
        if stride < 1:
            raise ParameterError(f"stride must be >= 1, got {stride}")
        th, tw = template.shape
        box = (0, 0, th, tw) if box is None else tuple(int(v) for v in box)
        if len(box) != 4 or box[0] < 0 or box[1] < 0 or box[2] < 1 or box[3] < 1 \
                or box[0] + box[2] > th or box[1] + box[3] > tw:
            raise ParameterError(f"box {box} does not fit the {th}x{tw} template")
        self.template = template
        self.template.setflags(write=False)
        self.bias = float(bias)
        self.stride = int(stride)
        self.box = box

    def _windows(self, image) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        th, tw = self.template.shape
        if image.ndim != 2 or image.shape[0] < th or image.shape[1] < tw:
            raise DimensionError(
                f"template {self.template.shape} does not fit image {image.shape}"
            )
        view = sliding_window_view(image, (th, tw))
        return view[:: self.stride, :: self.stride]

    def logits(self, image) -> np.ndarray:
        """Window logits, shape (n_rows, n_cols) in window-grid order."""
        return np.einsum("ijkl,kl->ij", self._windows(image), self.template) + self.bias

    def score(self, image) -> DetectionSet:
        z = self.logits(image)
        nr, nc = z.shape
        br, bc, bh, bw = self.box
        rows, cols = np.meshgrid(
            np.arange(nr) * self.stride + br, np.arange(nc) * self.stride + bc, indexing="ij"
        )
        boxes = np.stack(
            [rows.ravel(), cols.ravel(), np.full(nr * nc, bh), np.full(nr * nc, bw)], axis=1
        )
        return DetectionSet(boxes, expit(z).ravel())

    def top1(self, image) -> tuple[float, tuple[int, int]]:
        """Best score and the top-left corner of its window."""
        z = self.logits(image)
        k = int(np.argmax(z))
        i, j = divmod(k, z.shape[1])
        return float(expit(z[i, j])), (i * self.stride, j * self.stride)

    def grad_top1(self, image) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        s, (r, c) = self.top1(image)
        th, tw = self.template.shape
        g = np.zeros_like(image)
        g[r : r + th, c : c + tw] = s * (1.0 - s) * self.template
        return g


def template_detector(template, bias: float = 0.0, stride: int = 1, box=None) -> TemplateDetector:
    return TemplateDetector(template, bias, stride, box)


def silhouette_template(
    height: int = 48,
    width: int = 40,
    core_axes: tuple[float, float] = (4.5, 3.5),
    silhouette_axes: tuple[float, float] = (20.5, 6.5),
    cap: tuple[float, float] = (3.0, 4.0),
    side: tuple[float, float] = (3.0, 6.0),
    cap_share: float = 0.6,
    side_share: float = 0.3,
    surround: float = 3.0,
    checker: float = 1.1,
    gain: float = 12.0,
) -> np.ndarray:
    """Template for an upright warm ellipse centred in the window.

    A flat elliptic ``core`` sums to ``+gain``.  Outside the silhouette
    ellipse a negative surround sums to ``-surround * gain``; of that mass,
    ``cap_share`` sits in bands of height ``cap[0]`` and half-width
    ``cap[1]`` just beyond the top and bottom of the silhouette,
    ``side_share`` in strips of width ``side[0]`` and half-height ``side[1]``
    beside the core, and the rest is spread evenly.  The template sums to
    ``gain * (1 - surround)`` apart from the checker, so windows off the
    object score low, and shifted windows pay for the warm pixels they put
    in the surround.

    ``checker`` adds ``(-1)**(r+c)`` times that fraction of a core weight.
    It barely changes clean scores but makes the raw pixel gradient
    alternate in sign, so an unregularized attack breaks into a fine
    dither.
    """
    if height < 3 or width < 3:
        raise ParameterError(f"template too small: {height}x{width}")
    r, c = np.indices((height, width))
    dr = r - (height - 1) / 2.0
    dc = c - (width - 1) / 2.0
    (cr, cc), (sr, sc) = core_axes, silhouette_axes
    core = (dr / cr) ** 2 + (dc / cc) ** 2 <= 1.0
    inside = (dr / sr) ** 2 + (dc / sc) ** 2 <= 1.0
    if not core.any() or inside.all():
        raise ParameterError("core or surround region is empty")
    edge_r, edge_c = np.floor(sr), np.floor(sc)
    caps = (np.abs(dr) > edge_r) & (np.abs(dr) <= edge_r + cap[0]) & (np.abs(dc) <= cap[1]) & ~inside
    sides = (np.abs(dc) > edge_c) & (np.abs(dc) <= edge_c + side[0]) & (np.abs(dr) <= side[1]) & ~inside

    def unit(region):
        region = region.astype(np.float64)
        total = region.sum()
        return region / total if total else region

    rest = 1.0 - cap_share - side_share
    if rest < 0:
        raise ParameterError("cap_share + side_share must not exceed 1")
    negative = rest * unit(~inside) + cap_share * unit(caps) + side_share * unit(sides)
    n_core = core.sum()
    t = gain * (unit(core) - surround * negative)
    return t + checker * gain / n_core * np.where((r + c) % 2 == 0, 1.0, -1.0)


def ellipse_box(height: int, width: int, axes: tuple[float, float]) -> tuple[int, int, int, int]:
    """Bounding box of the centred ellipse with semi-axes ``axes``."""
    r, c = np.indices((height, width))
    inside = ((r - (height - 1) / 2.0) / axes[0]) ** 2 + ((c - (width - 1) / 2.0) / axes[1]) ** 2 <= 1.0
    rows, cols = np.nonzero(inside)
    if rows.size == 0:
        raise ParameterError("ellipse covers no pixel")
    return (int(rows.min()), int(cols.min()), int(np.ptp(rows)) + 1, int(np.ptp(cols)) + 1)


class FiniteDifferenceModel:
    """Victim wrapper that differentiates a black-box scorer numerically."""

    def __init__(self, scorer: Callable[[np.ndarray], DetectionSet], step: float = 1e-4, support=None):
        if not step > 0:
            raise ParameterError(f"finite-difference step must be positive, got {step}")
        self.scorer = scorer
        self.step = float(step)
        self.support = None if support is None else np.asarray(support, dtype=bool)

    def score(self, image) -> DetectionSet:
        return self.scorer(np.asarray(image, dtype=np.float64))

    def grad_top1(self, image) -> np.ndarray:
        image = np.array(image, dtype=np.float64, copy=True)
        support = np.ones(image.shape, bool) if self.support is None else self.support
        g = np.zeros_like(image)
        for r, c in zip(*np.nonzero(support)):
            v = image[r, c]
            image[r, c] = v + self.step
            up = self.scorer(image).top1_score
            image[r, c] = v - self.step
            down = self.scorer(image).top1_score
            image[r, c] = v
            g[r, c] = (up - down) / (2.0 * self.step)
        return g


def finite_difference_adapter(scorer, step: float = 1e-4, support=None) -> FiniteDifferenceModel:
    return FiniteDifferenceModel(scorer, step, support)


class CommandScorer:
    """Scores an image by running an external program.

    The image is written to a temporary PGM whose path is appended to
    ``command``.  The program prints one detection per line, either
    ``score`` or ``row col height width score``.
    """

    def __init__(self, command: str, timeout: float = 60.0):
        self.argv = shlex.split(command)
        self.timeout = timeout

    def __call__(self, image) -> DetectionSet:
        image = np.asarray(image, dtype=np.float64)
        h, w = image.shape
        fd, path = tempfile.mkstemp(suffix=".pgm")
        os.close(fd)
        try:
            write_pgm(path, np.clip(image, 0.0, 1.0))
            proc = subprocess.run(
                [*self.argv, path], capture_output=True, text=True, timeout=self.timeout
            )
        finally:
            os.unlink(path)
        if proc.returncode != 0:
            raise ContractViolation(
                f"scorer {self.argv[0]!r} exited {proc.returncode}: {proc.stderr.strip()}"
            )
        return parse_score_lines(proc.stdout, (h, w))


def parse_score_lines(text: str, shape: tuple[int, int]) -> DetectionSet:
    boxes, scores = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) == 1:
            boxes.append((0, 0, shape[0], shape[1]))
        elif len(fields) == 5:
            boxes.append(tuple(int(f) for f in fields[:4]))
        else:
            raise ContractViolation(f"scorer output line {lineno}: expected 1 or 5 fields")
        scores.append(float(fields[-1]))
    if not scores:
        raise ContractViolation("scorer produced no detections")
    return DetectionSet(boxes, scores)


@dataclass(frozen=True)
class SceneSpec:
    height: int = 64
    width: int = 64
    background: float = 0.2
    blob_center: tuple[float, float] = (32.0, 32.0)
    blob_axes: tuple[float, float] = (20.0, 6.0)  # semi-axes: rows, cols
    blob_intensity: float = 0.8
    noise_amplitude: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if not self.background < self.blob_intensity <= 1.0:
            raise ParameterError("blob_intensity must lie in (background, 1]")
        if self.noise_amplitude < 0:
            raise ParameterError("noise_amplitude must be non-negative")
        if self.blob_axes[0] <= 0 or self.blob_axes[1] <= 0:
            raise ParameterError("blob axes must be positive")

    def blob_box(self) -> tuple[int, int, int, int]:
        """Bounding box (row, col, height, width) of the blob pixels."""
        rows, cols = np.nonzero(_ellipse(self))
        return (
            int(rows.min()),
            int(cols.min()),
            int(rows.max() - rows.min() + 1),
            int(cols.max() - cols.min() + 1),
        )


def _ellipse(spec: SceneSpec) -> np.ndarray:
    (cr, cc), (ar, ac) = spec.blob_center, spec.blob_axes
    if cr - ar < 0 or cc - ac < 0 or cr + ar > spec.height - 1 or cc + ac > spec.width - 1:
        raise ParameterError("blob extends outside the frame")
    r = np.arange(spec.height)[:, None]
    c = np.arange(spec.width)[None, :]
    return ((r - cr) / ar) ** 2 + ((c - cc) / ac) ** 2 <= 1.0


def generate_scene(spec: SceneSpec) -> tuple[GrayImage, np.ndarray]:
    """Render a warm ellipse on a flat background.

    Returns the image and the binary object mask (1 exactly on blob pixels).
    Noise is uniform in ``[-noise_amplitude, noise_amplitude]`` and only
    touches blob pixels.
    """
    obj = _ellipse(spec)
    img = np.full((spec.height, spec.width), float(spec.background))
    img[obj] = spec.blob_intensity
    if spec.noise_amplitude > 0:
        rng = np.random.default_rng(spec.seed)
        noise = rng.uniform(-spec.noise_amplitude, spec.noise_amplitude, img.shape)
        img[obj] += noise[obj]
    return GrayImage(np.clip(img, 0.0, 1.0)), obj.astype(np.float64)
