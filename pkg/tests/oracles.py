"""Independent reference implementations used to check the engine.

Everything here is deliberately written the slow, obvious way (loops,
enumeration, O(N^2) transforms) and shares no code with the package.
"""

from __future__ import annotations

import math

import numpy as np


def euclid_naive(a, b) -> float:
    """Sum-of-squares loop, no vectorization."""
    total = 0.0
    for x, y in zip(a, b):
        total += (x - y) ** 2
    return math.sqrt(total)


def min_distance_naive(probe, references) -> float:
    return min(euclid_naive(probe, ref) for ref in references)


def dft_naive(x: np.ndarray) -> np.ndarray:
    """Direct O(N^2) discrete Fourier transform."""
    n = x.shape[0]
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) @ x.astype(np.complex128)


def stft_naive(samples: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    """Frame-by-frame DFT magnitudes, Hann-weighted, bins 0..frame_len/2."""
    window = np.array(
        [0.5 - 0.5 * math.cos(2.0 * math.pi * i / (frame_len - 1)) for i in range(frame_len)]
    )
    rows = []
    start = 0
    while start + frame_len <= samples.shape[0]:
        rows.append(np.abs(dft_naive(samples[start : start + frame_len] * window))[: frame_len // 2 + 1])
        start += hop
    return np.stack(rows)


def spectral_flatness(magnitudes: np.ndarray) -> float:
    """Geometric over arithmetic mean of the power spectrum."""
    power = magnitudes.astype(np.float64) ** 2 + 1e-12
    return float(np.exp(np.mean(np.log(power))) / np.mean(power))


def iou_boxes(a: tuple[float, float, float, float], b: tuple[float, float, float, float]) -> float:
    """Interval-overlap IoU on (x, y, w, h) tuples."""
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    ix = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def iou_pixels(a: tuple[int, int, int, int], b: tuple[int, int, int, int]) -> float:
    """Pixel-counting IoU for integer boxes; exact by enumeration."""
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    cells_a = {(x, y) for x in range(ax, ax + aw) for y in range(ay, ay + ah)}
    cells_b = {(x, y) for x in range(bx, bx + bw) for y in range(by, by + bh)}
    union = len(cells_a | cells_b)
    return len(cells_a & cells_b) / union if union else 0.0


def max_matching(
    gt: list[tuple[str, tuple[float, float, float, float]]],
    pred: list[tuple[str, tuple[float, float, float, float]]],
    thresholds: dict[str, float],
) -> int:
    """Maximum one-to-one matching size by exhaustive recursion.

    An edge exists when classes agree and IoU meets the class threshold.
    """
    edges: list[list[int]] = []
    for p_label, p_box in pred:
        row = []
        for gi, (g_label, g_box) in enumerate(gt):
            if p_label == g_label and iou_boxes(p_box, g_box) >= thresholds[g_label]:
                row.append(gi)
        edges.append(row)

    best = 0

    def recurse(pi: int, used: set[int], count: int) -> None:
        nonlocal best
        best = max(best, count)
        if pi == len(edges) or count + (len(edges) - pi) <= best:
            return
        recurse(pi + 1, used, count)  # leave this prediction unmatched
        for gi in edges[pi]:
            if gi not in used:
                used.add(gi)
                recurse(pi + 1, used, count + 1)
                used.discard(gi)

    recurse(0, set(), 0)
    return best


def blur_shift_accumulate(pixels: np.ndarray, radius: int) -> np.ndarray:
    """Edge-clamped box blur by explicit shifted-copy accumulation."""
    h, w = pixels.shape[:2]
    acc = np.zeros((h, w, pixels.shape[2]), dtype=np.int64)
    ys = np.arange(h)
    xs = np.arange(w)
    for dy in range(-radius, radius + 1):
        yy = np.clip(ys + dy, 0, h - 1)
        for dx in range(-radius, radius + 1):
            xx = np.clip(xs + dx, 0, w - 1)
            acc += pixels[yy][:, xx].astype(np.int64)
    count = (2 * radius + 1) ** 2
    return ((2 * acc + count) // (2 * count)).astype(np.uint8)


def blur_enumerate(pixels: np.ndarray, radius: int) -> np.ndarray:
    """Pure-Python per-pixel window enumeration; only for tiny frames."""
    h, w, c = pixels.shape
    out = np.zeros_like(pixels)
    count = (2 * radius + 1) ** 2
    for y in range(h):
        for x in range(w):
            for ch in range(c):
                s = 0
                for dy in range(-radius, radius + 1):
                    for dx in range(-radius, radius + 1):
                        yy = min(max(y + dy, 0), h - 1)
                        xx = min(max(x + dx, 0), w - 1)
                        s += int(pixels[yy, xx, ch])
                out[y, x, ch] = (2 * s + count) // (2 * count)
    return out


def count_points_in_mask(bitmap: np.ndarray, points) -> int:
    h, w = bitmap.shape
    n = 0
    for x, y in points:
        xi = math.floor(x)
        yi = math.floor(y)
        if 0 <= xi < w and 0 <= yi < h and bitmap[yi, xi]:
            n += 1
    return n


def scan_absence_gaps(events, person_score_min: float) -> list[tuple[int, int | None, int]]:
    """Linear scan for zero-person gaps over a raw event list.

    Returns (anchor_t, closing_t or None when still open, duration)
    per maximal gap; the open gap's duration runs to the last event of
    any kind. Duration is measured from the last frame that showed a
    person (or the first empty frame when none ever did).
    """
    gaps: list[tuple[int, int | None, int]] = []
    last_present: int | None = None
    open_anchor: int | None = None
    last_any: int | None = None
    for ev in events:
        last_any = ev.t_ms
        if type(ev.payload).__name__ != "FrameDetections":
            continue
        count = sum(
            1
            for d in ev.payload.detections
            if d.label == "person" and d.score >= person_score_min
        )
        if count == 0:
            if open_anchor is None:
                open_anchor = last_present if last_present is not None else ev.t_ms
        else:
            if open_anchor is not None:
                gaps.append((open_anchor, ev.t_ms, ev.t_ms - open_anchor))
                open_anchor = None
            last_present = ev.t_ms
    if open_anchor is not None and last_any is not None:
        gaps.append((open_anchor, None, last_any - open_anchor))
    return gaps


def expected_absence_flags(events, person_score_min: float, long_ms: int) -> list[tuple[int, int]]:
    """(t_ms, duration) of every CandidateAbsence flag the rules demand."""
    out = []
    last_any = max((ev.t_ms for ev in events), default=None)
    for anchor, closing, duration in scan_absence_gaps(events, person_score_min):
        if duration > long_ms:
            out.append((closing if closing is not None else last_any, duration))
    return out
