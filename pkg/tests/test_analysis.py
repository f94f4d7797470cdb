import logging

import numpy as np
import pytest
from scipy.signal import get_window

from modalsim.analysis import (
    LpcModel, bark_grid, bark_to_hz, hz_to_bark, lpc, lpc_envelope_at, stft,
    tf_magnitude,
)
from modalsim.audio_io import WavFormatError, wav_read, wav_write
from modalsim.integrators import ftm_coeffs, oscillator_bank, _run_steps


# --- STFT ------------------------------------------------------------------------

def test_stft_sinusoid_concentrates_energy():
    rate = 8000.0
    k_bin = 40
    f = k_bin * rate / 512
    t = np.arange(8192) / rate
    spec = stft(np.sin(2 * np.pi * f * t), rate, 512, 128)
    main = spec.magnitude[4:-4, k_bin]
    others = spec.magnitude[4:-4].copy()
    others[:, k_bin - 2 : k_bin + 3] = 0.0
    # Hann sidelobes sit 31 dB or more below the peak
    assert np.max(others) < np.min(main) * 10 ** (-31 / 20)


def test_stft_zero_signal():
    spec = stft(np.zeros(4096), 8000.0, 1024, 256)
    assert np.all(spec.magnitude == 0.0)


def test_stft_parseval_per_frame(rng):
    rate = 8000.0
    x = rng.normal(size=4096)
    wl, hop = 512, 128
    spec = stft(x, rate, wl, hop)
    win = get_window("hann", wl, fftbins=True)
    pad = wl // 2
    xp = np.pad(x, pad, mode="reflect")
    for fi in range(spec.n_frames):
        seg = xp[fi * hop : fi * hop + wl] * win
        energy = np.sum(seg**2)
        m = spec.magnitude[fi]
        # one-sided bins: double everything except DC and Nyquist
        spec_energy = (2 * np.sum(m**2) - m[0] ** 2 - m[-1] ** 2) / wl
        assert spec_energy == pytest.approx(energy, rel=1e-6)


def test_stft_magnitude_triangle_inequality(rng):
    x = rng.normal(size=2048)
    y = rng.normal(size=2048)
    a = stft(x, 8000.0, 256, 64).magnitude
    b = stft(y, 8000.0, 256, 64).magnitude
    ab = stft(x + y, 8000.0, 256, 64).magnitude
    assert np.all(ab <= a + b + 1e-9)


def test_stft_too_short_signal():
    with pytest.raises(ValueError, match="too short"):
        stft(np.zeros(100), 8000.0, 1024, 256)


def test_spectrogram_csv_header(tmp_path, rng):
    spec = stft(rng.normal(size=2048), 8000.0, 256, 64)
    path = tmp_path / "spec.csv"
    spec.to_csv(path)
    head = path.read_text().splitlines()[0]
    assert "rate=8000" in head and "hop=64" in head and "hann" in head


# --- LPC --------------------------------------------------------------------------

def test_lpc_ar1_coefficient(rng):
    n = 100_000
    e = rng.normal(size=n)
    x = np.empty(n)
    x[0] = e[0]
    for i in range(1, n):
        x[i] = 0.9 * x[i - 1] + e[i]
    model = lpc(x, 1)
    assert model.coeffs[0] == pytest.approx(-0.9, abs=0.02)


def test_lpc_white_noise_small_coeffs(rng):
    model = lpc(rng.normal(size=100_000), 8)
    assert np.all(np.abs(model.coeffs) < 0.05)


def test_lpc_self_consistency_reflections():
    # estimate on the synthesis filter's own (deterministic) impulse response,
    # whose autocorrelation is the model autocorrelation up to truncation
    true = np.array([-1.2, 0.5])  # stable AR(2)
    n = 8192
    x = np.zeros(n)
    x[0] = 1.0
    for i in range(1, n):
        for k, a in enumerate(true, start=1):
            if i - k >= 0:
                x[i] -= a * x[i - k]
    m1 = lpc(x, 2)
    # reflection coefficients of the true polynomial via one Levinson down-step
    k2 = true[1]
    k1 = true[0] / (1 + k2)
    assert m1.reflections[1] == pytest.approx(k2, abs=1e-3)
    assert m1.reflections[0] == pytest.approx(k1, abs=1e-3)
    assert m1.coeffs == pytest.approx(true, abs=1e-3)


def test_lpc_minimum_phase(rng):
    x = rng.normal(size=50_000)
    x = np.convolve(x, [1.0, 0.7, 0.2], mode="same")
    model = lpc(x, 12)
    roots = np.roots(np.concatenate([[1.0], model.coeffs]))
    assert np.max(np.abs(roots)) < 1.0


def test_lpc_normal_equations(rng):
    x = rng.normal(size=20_000)
    x = np.convolve(x, np.ones(4) / 4, mode="same")
    p = 6
    model = lpc(x, p)
    r = np.array([x[: len(x) - k] @ x[k:] / len(x) for k in range(p + 1)])
    Rm = np.array([[r[abs(i - j)] for j in range(p)] for i in range(p)])
    resid = Rm @ model.coeffs + r[1 : p + 1]
    assert np.max(np.abs(resid)) / r[0] < 1e-8


def test_lpc_rejects_silence():
    with pytest.raises(ValueError, match="energy"):
        lpc(np.zeros(1000), 4)


def test_lpc_envelope_order_zero_constant():
    model = LpcModel(order=0, coeffs=np.zeros(0), gain=3.5)
    env = lpc_envelope_at(model, [100.0, 1000.0, 3999.0], 8000.0)
    assert env == pytest.approx([3.5, 3.5, 3.5])


def test_lpc_envelope_ar1_dc_nyquist_ratio():
    model = LpcModel(order=1, coeffs=np.array([-0.9]), gain=1.0)
    env = lpc_envelope_at(model, [0.0, 4000.0], 8000.0)
    assert env[0] / env[1] == pytest.approx(19.0, rel=1e-12)


def test_lpc_envelope_matches_fft_of_synthesis_filter(rng):
    x = rng.normal(size=30_000)
    x = np.convolve(x, [1.0, -0.4, 0.1], mode="same")
    model = lpc(x, 6)
    n = 4096
    imp = np.zeros(n)
    imp[0] = model.gain
    for i in range(n):
        for k in range(1, model.order + 1):
            if i - k >= 0:
                imp[i] -= model.coeffs[k - 1] * imp[i - k]
    fft_mag = np.abs(np.fft.rfft(imp))
    freqs = np.fft.rfftfreq(n, 1 / 8000.0)
    env = lpc_envelope_at(model, freqs, 8000.0)
    assert np.max(np.abs(env - fft_mag)) / np.max(fft_mag) < 1e-6


def test_lpc_envelope_out_of_range():
    model = LpcModel(order=0, coeffs=np.zeros(0), gain=1.0)
    with pytest.raises(ValueError, match="Nyquist"):
        lpc_envelope_at(model, [4001.0], 8000.0)


# --- Bark grid ---------------------------------------------------------------------

def test_bark_grid_endpoints_exact():
    f = bark_grid(64, 16000.0, 44100.0)
    assert f[0] == 20.0 and f[-1] == 16000.0


def test_bark_grid_monotone_and_densifies_low():
    f = bark_grid(48, 18000.0, 44100.0)
    d = np.diff(f)
    assert np.all(d > 0)
    assert np.all(np.diff(d) > -1e-9)  # spacing non-decreasing in Hz


def test_bark_value_at_1khz():
    assert hz_to_bark(1000.0) == pytest.approx(8.527, abs=5e-4)


def test_bark_round_trip():
    f = 1000.0
    assert bark_to_hz(hz_to_bark(f)) == pytest.approx(f, abs=1e-9)


def test_bark_grid_validation():
    with pytest.raises(ValueError, match="Nyquist"):
        bark_grid(16, 30000.0, 44100.0)
    with pytest.raises(ValueError, match="two"):
        bark_grid(1, 1000.0, 44100.0)


# --- transfer-function magnitude -------------------------------------------------------

def test_tf_single_mode_peak_near_resonance():
    rate = 44100.0
    bank = oscillator_bank(np.array([1.0]), 0.0, (2 * np.pi * 440.0) ** 2, gamma=0.0)
    co = ftm_coeffs(bank, 1 / rate)
    freqs = np.linspace(100.0, 1500.0, 2801)
    mag = tf_magnitude(co, np.ones(1), freqs, rate)
    peak = freqs[np.argmax(mag)]
    assert abs(peak - 440.0) <= freqs[1] - freqs[0]


def test_tf_zero_weights():
    bank = oscillator_bank(np.array([1.0, 2.0]), 0.0, 1000.0, gamma=0.1)
    co = ftm_coeffs(bank, 1 / 8000.0)
    mag = tf_magnitude(co, np.zeros(2), [100.0, 200.0], 8000.0)
    assert np.all(mag == 0.0)


def test_tf_matches_dft_of_impulse_response():
    rate = 44100.0
    lam = (np.arange(1, 4) * np.pi) ** 2
    bank = oscillator_bank(lam, 0.0, (2 * np.pi * 300.0) ** 2 / np.pi**2,
                           gamma=np.array([40.0, 50.0, 60.0]))
    co = ftm_coeffs(bank, 1 / rate)
    w = np.array([1.0, 0.6, 0.3])
    A, B, R, _ = co.update_vectors()
    imp = np.zeros(2**18)
    imp[0] = 1.0
    n_sim = 2**18
    Q = _run_steps(A, B, R, np.zeros(3), np.zeros(3), n_sim,
                   force_signal=imp, force_gains=np.ones(3))
    h = Q @ w
    dft = np.abs(np.fft.rfft(h, n=2**18))
    k = np.arange(64) * 50 + 400  # 64 probe bins away from DC
    probe_freqs = k * rate / 2**18
    mag = tf_magnitude(co, w, probe_freqs, rate)
    rel = np.abs(mag - dft[k]) / np.abs(mag)
    assert np.max(rel) < 1e-6


def test_tf_frequency_validation():
    bank = oscillator_bank(np.array([1.0]), 0.0, 1000.0, gamma=0.1)
    co = ftm_coeffs(bank, 1 / 8000.0)
    with pytest.raises(ValueError, match="Nyquist"):
        tf_magnitude(co, np.ones(1), [4000.0], 8000.0)


# --- WAV --------------------------------------------------------------------------------

def test_wav_float_round_trip(tmp_path, rng):
    sig = rng.uniform(-1, 1, size=1000).astype(np.float32).astype(np.float64)
    path = tmp_path / "f32.wav"
    wav_write(path, sig, 44100)
    back, rate = wav_read(path)
    assert rate == 44100
    assert np.array_equal(back, sig)


def test_wav_int16_round_trip(tmp_path, rng):
    from scipy.io import wavfile

    sig = rng.uniform(-0.9, 0.9, size=1000)
    path = tmp_path / "i16.wav"
    wavfile.write(path, 8000, (sig * 2**15).astype(np.int16))
    back, rate = wav_read(path)
    assert np.max(np.abs(back - sig)) <= 2**-15


def test_wav_stereo_takes_first_channel(tmp_path, caplog, rng):
    from scipy.io import wavfile

    left = rng.uniform(-1, 1, size=500).astype(np.float32)
    right = np.zeros(500, dtype=np.float32)
    path = tmp_path / "stereo.wav"
    wavfile.write(path, 22050, np.stack([left, right], axis=1))
    with caplog.at_level(logging.WARNING):
        back, _ = wav_read(path)
    assert np.array_equal(back, left.astype(np.float64))
    assert any("first" in r.message for r in caplog.records)


def test_wav_unsupported_encoding(tmp_path):
    from scipy.io import wavfile

    path = tmp_path / "u8.wav"
    wavfile.write(path, 8000, np.zeros(100, dtype=np.uint8))
    with pytest.raises(WavFormatError, match="uint8"):
        wav_read(path)


def test_wav_write_normalize(tmp_path):
    path = tmp_path / "norm.wav"
    wav_write(path, np.array([0.1, -0.5, 0.25]), 8000, normalize=True)
    back, _ = wav_read(path)
    assert np.max(np.abs(back)) == pytest.approx(1.0)
