"""Waveform → log-mel pipeline: frame counts, peak bins, padding, WAV I/O."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dfast import audio
from dfast.audio import (
    LOG_FLOOR, Waveform, hz_to_mel, mel_center_frequencies, mel_filterbank, mel_spectrogram,
    n_frames, pad_or_truncate, read_wav, resample, stft, voice_grid, write_wav,
)
from dfast.errors import ContractError, FormatError

SR = 16000


def tone(freq, seconds=1.0, sr=SR, amp=0.5):
    t = np.arange(int(round(seconds * sr))) / sr
    return Waveform(amp * np.sin(2 * np.pi * freq * t), sr)


class TestResample:
    def test_two_to_one_length(self):
        w = resample(Waveform(np.zeros(32000), 32000), SR)
        assert w.sample_rate == SR and w.samples.size == 16000

    def test_identity_at_target_rate(self):
        w = tone(300)
        assert resample(w, SR) is w

    def test_peak_bin_preserved(self):
        w = resample(tone(440, sr=48000), SR)
        spectrum = np.abs(stft(w)).mean(axis=1)
        assert abs(np.argmax(spectrum) * SR / 512 - 440) <= SR / 512 / 2

    @pytest.mark.parametrize("rate", [8000, 22050, 44100])
    def test_duration_within_one_period(self, rate):
        w = Waveform(np.random.default_rng(0).uniform(-1, 1, 12345), rate)
        out = resample(w, SR)
        assert abs(out.duration - w.duration) <= 1 / SR

    def test_contracts(self):
        with pytest.raises(ContractError):
            Waveform(np.array([]), SR)
        with pytest.raises(ContractError):
            resample(tone(100), 0)


class TestStft:
    def test_one_second_frames(self):
        assert stft(Waveform(np.zeros(16000), SR)).shape == (257, 98)

    def test_zero_signal(self):
        assert not np.abs(stft(Waveform(np.zeros(4000), SR))).any()

    def test_1khz_peak_at_bin_32(self):
        mags = np.abs(stft(tone(1000)))
        assert set(np.argmax(mags, axis=0)) == {32}

    @settings(max_examples=200, deadline=None)
    @given(st.integers(1, 4000), st.integers(1, 600), st.integers(1, 400))
    def test_frame_count_formula(self, extra, window, hop):
        window = min(window, 512)
        length = window + extra - 1
        frames = stft(Waveform(np.ones(length), SR), window=window, hop=hop).shape[1]
        assert frames == 1 + (length - window) // hop == n_frames(length, window, hop)

    def test_contracts(self):
        with pytest.raises(ContractError, match="shorter than one window"):
            stft(Waveform(np.zeros(399), SR))
        with pytest.raises(ContractError):
            stft(Waveform(np.zeros(1000), SR), window=600)
        with pytest.raises(ContractError):
            stft(Waveform(np.zeros(1000), SR), hop=0)


class TestFilterbank:
    def test_shape_and_nonnegative(self):
        fb = mel_filterbank()
        assert fb.shape == (80, 257) and (fb >= 0).all()

    def test_rows_sum_positive(self):
        assert (mel_filterbank().sum(axis=1) > 0).all()

    def test_centers_increase(self):
        assert (np.diff(mel_center_frequencies()) > 0).all()

    def test_mel_of_1khz(self):
        assert hz_to_mel(1000.0) == pytest.approx(2595 * np.log10(1 + 1000 / 700))
        assert hz_to_mel(1000.0) == pytest.approx(999.99, abs=0.01)

    def test_bins_between_centers_covered(self):
        fb = mel_filterbank()
        centers = mel_center_frequencies()
        freqs = np.arange(257) * SR / 512
        inside = (freqs >= centers[0]) & (freqs <= centers[-1])
        assert (fb[:, inside].sum(axis=0) > 0).all()

    def test_contracts(self):
        with pytest.raises(ContractError):
            mel_filterbank(n_mels=1)
        with pytest.raises(ContractError):
            mel_filterbank(fmax=9000.0)


class TestMelSpectrogram:
    def test_silence_is_log_floor(self):
        m = mel_spectrogram(Waveform(np.zeros(16000), SR))
        assert m.shape == (80, 98)
        assert (m == np.log(LOG_FLOOR)).all()

    def test_440hz_peaks_at_nearest_center(self):
        m = mel_spectrogram(tone(440))
        nearest = int(np.argmin(np.abs(mel_center_frequencies() - 440)))
        assert set(np.argmax(m, axis=0)) == {nearest}

    def test_1p8_seconds_frames(self):
        assert mel_spectrogram(Waveform(np.zeros(28800), SR)).shape[1] == 178

    def test_energy_scaling(self):
        w = tone(700, amp=0.2)
        a = mel_spectrogram(w)
        b = mel_spectrogram(Waveform(2 * w.samples, SR))
        above = a > np.log(LOG_FLOOR) + 1
        np.testing.assert_allclose((b - a)[above], np.log(4.0), atol=1e-9)

    def test_deterministic(self):
        w = tone(523)
        assert mel_spectrogram(w).tobytes() == mel_spectrogram(w).tobytes()


class TestPadOrTruncate:
    @pytest.mark.parametrize("t", list(range(1, 513)))
    def test_contract(self, t):
        m = np.arange(80 * t, dtype=np.float64).reshape(80, t)
        out = pad_or_truncate(m)
        assert out.shape == (80, 256)
        keep = min(t, 256)
        np.testing.assert_array_equal(out[:, :keep], m[:, :keep])
        assert (out[:, keep:] == np.log(LOG_FLOOR)).all()
        if t == 256:
            assert out.tobytes() == m.tobytes()

    def test_t98_padding_value(self):
        out = pad_or_truncate(mel_spectrogram(Waveform(np.zeros(16000), SR)))
        assert (out[:, 98:] == np.log(1e-10)).all()


class TestVoiceGrid:
    def test_shape_and_standardization(self):
        g = voice_grid(tone(220, 1.5))
        assert g.shape == (96, 256)
        assert not g[80:].any()
        assert abs(g[:80].mean()) < 1e-9 and abs(g[:80].std() - 1) < 1e-9

    def test_silence_does_not_divide_by_zero(self):
        g = voice_grid(Waveform(np.zeros(16000), SR))
        assert np.isfinite(g).all() and not g.any()


class TestWav:
    def test_round_trip(self, tmp_path):
        w = tone(300, 0.25)
        write_wav(tmp_path / "a.wav", w)
        back = read_wav(tmp_path / "a.wav")
        assert back.sample_rate == SR
        np.testing.assert_allclose(back.samples, w.samples, atol=1 / 32767)

    def test_stereo_averaged(self, tmp_path):
        import wave

        left = np.full(100, 1000, dtype="<i2")
        right = np.full(100, 3000, dtype="<i2")
        with wave.open(str(tmp_path / "s.wav"), "wb") as f:
            f.setnchannels(2)
            f.setsampwidth(2)
            f.setframerate(8000)
            f.writeframes(np.stack([left, right], axis=1).tobytes())
        w = read_wav(tmp_path / "s.wav")
        np.testing.assert_allclose(w.samples, 2000 / 32768)
        assert w.sample_rate == 8000

    def test_garbage_is_format_error(self, tmp_path):
        (tmp_path / "bad.wav").write_bytes(b"not a wav file at all")
        with pytest.raises(FormatError):
            read_wav(tmp_path / "bad.wav")


def test_constants():
    assert (audio.WINDOW, audio.HOP, audio.FFT_SIZE, audio.N_MELS, audio.N_FRAMES) == (400, 160, 512, 80, 256)
