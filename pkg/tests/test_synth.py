import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spice_pitch.audio import load_wav
from spice_pitch.cqt import C1_HZ, CqtParams, compute_cqt
from spice_pitch.synth import (PEAK, CorpusConfig, HarmonicSpec, SynthError, gen_calibration_set,
                               gen_corpus_item, gen_harmonic_piece, gen_training_corpus, pink_noise,
                               save_corpus)


def test_harmonic_piece_matches_formula():
    spec = HarmonicSpec(200.0, [1.0, 0.5, 0.25], [0.0, 0.3, 1.0])
    a = gen_harmonic_piece(spec, 800)
    t = np.arange(800) / 16000
    raw = sum(amp * np.sin(2 * np.pi * (k + 1) * 200 * t + ph)
              for k, (amp, ph) in enumerate(zip(spec.amplitudes, spec.phases)))
    np.testing.assert_allclose(a.samples, raw * PEAK / np.abs(raw).max(), atol=1e-12)
    assert spec.n_harmonics == 2


def test_harmonic_piece_drops_partials_above_nyquist():
    a = gen_harmonic_piece(HarmonicSpec(5000.0, [1.0, 1.0]), 1600)  # 10 kHz partial would alias to 6 kHz
    spec = np.abs(np.fft.rfft(a.samples))
    assert spec[600] < 1e-6 * spec[500]


def test_harmonic_piece_errors():
    with pytest.raises(SynthError):
        HarmonicSpec(0.0, [1.0])
    with pytest.raises(SynthError):
        HarmonicSpec(100.0, [1.0, 1.0], [0.0])
    with pytest.raises(SynthError):
        gen_harmonic_piece(HarmonicSpec(100.0, [0.0, 0.0]), 100)
    with pytest.raises(SynthError):
        gen_harmonic_piece(HarmonicSpec(100.0, [1.0]), 0)


def test_calibration_set_properties():
    samples = gen_calibration_set(200, seed=3)
    f0 = np.array([s.f0 for s in samples])
    st_above_110 = 12 * np.log2(f0 / 110.0)
    np.testing.assert_allclose(st_above_110, np.round(st_above_110), atol=1e-9)
    assert f0.min() >= 110.0 - 1e-9 and f0.max() <= 440.0 + 1e-9
    assert len(np.unique(np.round(st_above_110))) > 20
    for s in samples[:5]:
        assert len(s.audio) == 11 * 512 and s.center_frame == 5
        assert s.f0_semitones == pytest.approx(12 * np.log2(s.f0 / C1_HZ))
        assert np.abs(s.audio.samples).max() == pytest.approx(PEAK)


def test_calibration_set_is_seeded():
    a = gen_calibration_set(4, seed=9)
    b = gen_calibration_set(4, seed=9)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.audio.samples, y.audio.samples)
    with pytest.raises(SynthError):
        gen_calibration_set(0)


def test_pink_noise_slope():
    x = pink_noise(2 ** 16, np.random.default_rng(0))
    assert np.sqrt(np.mean(x * x)) == pytest.approx(1.0)
    p = np.abs(np.fft.rfft(x)) ** 2
    f = np.arange(len(p))
    lo, hi = p[(f > 100) & (f < 200)].mean(), p[(f > 1000) & (f < 2000)].mean()
    # 1/f power: a decade up is ~10 dB down
    assert 10 * np.log10(lo / hi) == pytest.approx(10.0, abs=1.5)


def test_corpus_item_layout():
    cfg = CorpusConfig()
    item = gen_corpus_item(cfg, np.random.default_rng(0))
    n = int(cfg.item_seconds * cfg.sample_rate)
    assert len(item.audio) == n
    assert len(item.f0_hz) == n // cfg.hop + 1
    v = item.voiced
    assert np.all((item.f0_hz[v] >= cfg.f_lo * 0.98) & (item.f0_hz[v] <= cfg.f_hi * 1.02))
    assert np.abs(item.audio.samples).max() == pytest.approx(PEAK)


def test_corpus_unvoiced_share_and_range():
    items = gen_training_corpus(CorpusConfig(n_items=30), seed=1)
    unvoiced = np.mean(np.concatenate([~it.voiced for it in items]))
    # 20% noise plus guard frames at boundaries
    assert 0.18 <= unvoiced <= 0.32
    f0 = np.concatenate([it.f0_hz[it.voiced] for it in items])
    assert f0.min() < 130 and f0.max() > 700


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 2**31))
def test_labels_agree_with_cqt_peak(seed):
    """Voiced labels sit within a bin of the CQT maximum on nearly every frame."""
    item = gen_corpus_item(CorpusConfig(), np.random.default_rng(seed))
    m = compute_cqt(item.audio)
    p = CqtParams()
    v = item.voiced
    k = p.bin_of(item.f0_hz[v])
    peak = np.argmax(m.values[v], axis=1)
    assert np.mean(np.abs(peak - k) <= 1.0) >= 0.95


def test_corpus_is_deterministic_and_independent_per_item():
    a = gen_training_corpus(CorpusConfig(n_items=3), seed=5)
    b = gen_training_corpus(CorpusConfig(n_items=3), seed=5)
    c = gen_training_corpus(CorpusConfig(n_items=3), seed=6)
    np.testing.assert_array_equal(a[2].audio.samples, b[2].audio.samples)
    assert not np.array_equal(a[0].audio.samples, c[0].audio.samples)


def test_fixed_pitch_corpus():
    item = gen_corpus_item(CorpusConfig(fixed_f0=220.0, unvoiced_fraction=0.0), np.random.default_rng(0))
    assert np.all(item.f0_hz[item.voiced] == 220.0)


def test_corpus_config_validation():
    for bad in (dict(n_items=0), dict(f_lo=500, f_hi=400), dict(unvoiced_fraction=1.0),
                dict(min_harmonics=5, max_harmonics=2)):
        with pytest.raises(SynthError):
            gen_training_corpus(CorpusConfig(**bad))


def test_save_corpus(tmp_path):
    items = gen_training_corpus(CorpusConfig(n_items=2, item_seconds=1.0), seed=0)
    save_corpus(items, tmp_path)
    a = load_wav(tmp_path / "item_0000.wav")
    np.testing.assert_allclose(a.samples, items[0].audio.samples, atol=1 / 32768)
    with open(tmp_path / "item_0000.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["time_sec", "f0_hz"]
    assert len(rows) - 1 == len(items[0].f0_hz)
    for row, f in zip(rows[1:], items[0].f0_hz):
        assert (row[1] == "") == (f == 0)
