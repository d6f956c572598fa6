"""Deterministic single-rule session fixtures and their golden reports.

Each fixture exercises exactly one detection rule end to end. The
golden JSON reports live in tests/golden/; regenerate them after an
intentional behaviour change with:

    python3 tests/rule_fixtures.py
"""

from __future__ import annotations

import numpy as np

from conftest import audio_event, emb_event, frame_event, make_reference_set
from invigil.audio.model import band_contrast_model
from invigil.config import EngineConfig
from invigil.pipeline import PipelineState, SessionReport, finalize_report, step
from invigil.simulator import synth_audio


def reference_identity():
    return make_reference_set(np.random.default_rng(0x1D))


def _present(t0: int, t1: int, step_ms: int = 500):
    return [frame_event(t) for t in range(t0, t1 + 1, step_ms)]


def _absent(t0: int, t1: int, step_ms: int = 500):
    return [frame_event(t, persons=0) for t in range(t0, t1 + 1, step_ms)]


def build_fixtures() -> dict[str, list]:
    centroid, refs = reference_identity()
    voiced = synth_audio("voiced", 21).samples
    unvoiced = synth_audio("unvoiced", 21).samples
    fixtures = {
        "absence_long": (
            _present(0, 2000) + _absent(2500, 14000) + [frame_event(14500)]
        ),
        "absence_recheck_impostor": (
            _present(0, 2000)
            + _absent(2500, 8500)
            + [frame_event(9000), emb_event(9200, -centroid)]
        ),
        "absence_short": (
            _present(0, 2000) + _absent(2500, 4500) + [frame_event(5000)]
        ),
        "phone_high": [
            frame_event(0),
            frame_event(1000, devices=(("phone", 0.85),)),
            frame_event(2000),
        ],
        "phone_mid": [
            frame_event(0),
            frame_event(1000, devices=(("phone", 0.5),)),
            frame_event(2000),
        ],
        "two_persons": [
            frame_event(0),
            frame_event(1000, persons=2),
            frame_event(2000),
        ],
        "voice_positive": [
            frame_event(0),
            audio_event(1000, voiced),
            frame_event(2000),
        ],
        "clean": [
            frame_event(0, devices=(("phone", 0.2),)),
            audio_event(500, unvoiced),
            frame_event(1000),
            frame_event(2000),
        ],
    }
    return refs, fixtures


def fixture_reports() -> dict[str, SessionReport]:
    refs, fixtures = build_fixtures()
    cfg = EngineConfig()
    voice = band_contrast_model()
    reports = {}
    for name, events in fixtures.items():
        state = PipelineState.initial(refs)
        for ev in events:
            step(state, ev, cfg, voice)
        reports[name] = finalize_report(state, name, cfg)
    return reports


if __name__ == "__main__":
    from pathlib import Path

    from invigil.pipeline import report_to_json

    golden_dir = Path(__file__).parent / "golden"
    golden_dir.mkdir(exist_ok=True)
    for name, report in fixture_reports().items():
        path = golden_dir / f"{name}.json"
        path.write_bytes(report_to_json(report))
        print(f"wrote {path}")
