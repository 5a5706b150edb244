import json
import warnings

import numpy as np
import pytest

from igcrn.corpus import noise_like, speech_like
from igcrn.metrics import EvalReport, MetricError, evaluate_records, si_sdr, snr, stoi

FS = 16000


@pytest.fixture(scope="module")
def speech():
    return speech_like(3, 3.0)


def test_si_sdr_identity_and_scale(speech):
    assert si_sdr(speech, speech) == 60.0
    assert si_sdr(2 * speech, speech) == 60.0
    rng = np.random.default_rng(0)
    est = speech + 0.1 * rng.standard_normal(speech.size)
    base = si_sdr(est, speech)
    for a in (1e-3, 0.5, 3.0, 1e4):
        assert abs(si_sdr(a * est, speech) - base) < 1e-9


def test_si_sdr_orthogonal_equal_energy_is_zero(speech):
    rng = np.random.default_rng(1)
    n = rng.standard_normal(speech.size)
    n -= np.dot(n, speech) / np.dot(speech, speech) * speech
    n *= np.linalg.norm(speech) / np.linalg.norm(n)
    assert si_sdr(speech + n, speech) == pytest.approx(0.0, abs=1e-9)


def test_snr_is_scale_dependent(speech):
    assert snr(speech, speech) == 60.0
    assert snr(2 * speech, speech) == pytest.approx(0.0, abs=1e-9)


def test_metric_errors(speech):
    with pytest.raises(MetricError):
        si_sdr(speech, np.zeros_like(speech))
    with pytest.raises(MetricError):
        si_sdr(speech[:-1], speech)
    with pytest.raises(MetricError):
        stoi(speech[:7000], speech[:7000])


def test_stoi_matches_reference_implementation(speech):
    pystoi = pytest.importorskip("pystoi")
    from scipy.signal import resample_poly
    rng = np.random.default_rng(2)
    x = resample_poly(speech, 5, 8)
    for scale in (0.01, 0.05, 0.2):
        y = x + scale * rng.standard_normal(x.size)
        assert stoi(y, x, 10000) == pytest.approx(pystoi.stoi(x, y, 10000), abs=1e-6)


def test_stoi_self_is_one(speech):
    assert abs(stoi(speech, speech) - 1.0) < 1e-6
    other = speech_like(9, 2.0)
    assert abs(stoi(other, other) - 1.0) < 1e-6


def test_stoi_unrelated_noise_is_low(speech):
    for preset in ("white", "babble", "machinery"):
        assert stoi(0.05 * noise_like(preset, 4, 3.0), speech) < 0.4


def test_stoi_monotone_in_snr(speech):
    noise = noise_like("white", 5, 3.0)
    noise *= np.linalg.norm(speech) / np.linalg.norm(noise)
    scores = [stoi(speech + 10 ** (-s / 20) * noise, speech) for s in range(-10, 21, 5)]
    assert all(b > a for a, b in zip(scores, scores[1:]))
    assert all(0 <= s <= 1 for s in scores)


def _row(i, snr_db, noise, doa):
    return {"id": f"u{i}", "snr_db": snr_db, "noise": noise, "speech_doa": doa[0], "noise_doa": doa[1],
            "si_sdr": float(i), "snr": 2.0 * i, "stoi": 0.1 * i}


def test_report_aggregation():
    rows = [_row(i, s, n, d) for i, (s, n, d) in enumerate(
        [(0.0, "white", (0.0, 90.0)), (0.0, "white", (0.0, 45.0)), (3.0, "babble", (0.0, 90.0)),
         (0.0, "babble", (0.0, 90.0)), (3.0, "babble", (45.0, 90.0))])]
    rep = EvalReport(rows)
    groups = {(g["snr_db"], g["noise"]): g for g in rep.groups("snr_noise")}
    assert groups[(0.0, "white")]["count"] == 2
    assert groups[(0.0, "white")]["si_sdr"] == 0.5
    assert groups[(3.0, "babble")]["stoi"] == pytest.approx(0.3, abs=1e-12)
    doa = {(g["speech_doa"], g["noise_doa"]): g for g in rep.groups("doa")}
    assert doa[(0.0, 90.0)]["count"] == 3
    assert abs(doa[(0.0, 90.0)]["snr"] - np.mean([0, 4, 6])) < 1e-12
    assert rep.overall()["si_sdr"] == 2.0
    kinds = [json.loads(line)["kind"] for line in rep.to_jsonl().splitlines()]
    assert kinds.count("utterance") == 5 and kinds[-1] == "overall"
    assert "white" in rep.table()


def test_evaluate_missing_file_and_empty(tmp_path):
    with pytest.raises(FileNotFoundError):
        evaluate_records([{"id": "x", "noisy_path": "n.wav", "clean_path": "c.wav"}], tmp_path, lambda x, r: x[0])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rep = evaluate_records([], tmp_path, lambda x, r: x[0])
    assert rep.utterances == [] and caught
    assert rep.overall() == {"count": 0}
