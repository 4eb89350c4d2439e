from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from avsgs import spectro
from avsgs.spectro import (
    DEFAULT_CONFIG,
    ContractError,
    LengthError,
    ShapeError,
    SpectroConfig,
    istft_with_mixture_phase,
    log_resample,
    make_bin_map,
    mask_to_linear,
    mix,
    pad_or_trim,
    stft,
)

SMALL = SpectroConfig(n_frames=16, n_log_bins=16)


def dft_oracle(w: np.ndarray, cfg: SpectroConfig) -> np.ndarray:
    """Explicit per-frame DFT sum, independent of numpy's FFT."""
    n = cfg.n_fft
    win = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)
    k = np.arange(n // 2 + 1)[:, None]
    basis = np.exp(-2j * np.pi * k * np.arange(n)[None, :] / n)
    cols = [basis @ (w[t * cfg.hop : t * cfg.hop + n] * win) for t in range(cfg.n_frames)]
    return np.stack(cols, axis=1)


def snr_db(ref, est):
    return 10 * np.log10(np.sum(ref**2) / np.sum((ref - est) ** 2))


class TestConfig:
    def test_default_geometry(self):
        assert DEFAULT_CONFIG.segment_length == 66302
        assert DEFAULT_CONFIG.n_linear == 512
        assert DEFAULT_CONFIG.sample_rate == 11025

    def test_hann_is_periodic(self):
        w = spectro.hann(8)
        assert w[0] == 0.0
        np.testing.assert_allclose(w, 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(8) / 8))


class TestPadOrTrim:
    def test_identity(self):
        w = np.arange(5.0)
        np.testing.assert_array_equal(pad_or_trim(w, 5), w)

    def test_pad(self):
        np.testing.assert_array_equal(pad_or_trim(np.ones(3), 5), [1, 1, 1, 0, 0])

    def test_trim(self):
        np.testing.assert_array_equal(pad_or_trim(np.arange(8.0), 5), np.arange(5.0))

    @given(st.integers(0, 50), st.integers(1, 50))
    def test_length_property(self, n, target):
        out = pad_or_trim(np.ones(n), target)
        assert len(out) == target
        assert out[: min(n, target)].sum() == min(n, target)

    def test_rejects_zero_target(self):
        with pytest.raises(ValueError):
            pad_or_trim(np.ones(3), 0)


class TestStft:
    def test_zero_input(self):
        s = stft(np.zeros(66302))
        assert s.magnitude.shape == (512, 256)
        assert not s.magnitude.any()

    def test_shape_default(self):
        rng = np.random.default_rng(0)
        assert stft(rng.standard_normal(70000)).magnitude.shape == (512, 256)

    def test_too_short(self):
        with pytest.raises(LengthError):
            stft(np.zeros(66301))

    def test_matches_dft_oracle(self):
        rng = np.random.default_rng(1)
        w = rng.standard_normal(SMALL.segment_length)
        s = stft(w, SMALL)
        ref = dft_oracle(w, SMALL)
        np.testing.assert_allclose(s.magnitude * np.exp(1j * s.phase), ref, atol=1e-9)

    def test_bin_centred_sinusoid(self):
        k = 40
        t = np.arange(SMALL.segment_length)
        w = np.cos(2 * np.pi * k * t / SMALL.n_fft)
        mag = stft(w, SMALL).magnitude
        assert np.all(mag.argmax(axis=0) == k)
        ref = np.abs(dft_oracle(w, SMALL))
        np.testing.assert_allclose(mag, ref, atol=1e-9)
        # periodic Hann leaks only into the two neighbours of a bin-centred tone
        energy = (mag**2).sum(axis=0)
        near = (mag[k - 1 : k + 2] ** 2).sum(axis=0)
        assert np.all(near / energy > 1 - 1e-12)

    @given(st.floats(0, 2 * np.pi), st.integers(2, 509))
    @settings(max_examples=20, deadline=None)
    def test_global_phase_invariance(self, phi, k):
        # bin-centred real tones: the mirrored image cannot leak into positive bins
        t = np.arange(SMALL.segment_length)
        a = stft(np.cos(2 * np.pi * k * t / SMALL.n_fft), SMALL).magnitude
        b = stft(np.cos(2 * np.pi * k * t / SMALL.n_fft + phi), SMALL).magnitude
        assert np.max(np.abs(a - b)) <= 1e-6 * a.max()

    def test_complex_exponential_phase_invariance(self):
        # the analytic-signal form has no mirror image: exact invariance
        t = np.arange(SMALL.segment_length)
        rng = np.random.default_rng(2)
        for _ in range(5):
            k, phi = rng.uniform(5, 200), rng.uniform(0, 2 * np.pi)
            base = np.exp(2j * np.pi * k * t / SMALL.n_fft)
            a = np.abs(dft_oracle(base, SMALL))
            b = np.abs(dft_oracle(base * np.exp(1j * phi), SMALL))
            np.testing.assert_allclose(a, b, rtol=1e-6, atol=1e-9 * a.max())

    def test_rejects_non_finite(self):
        w = np.zeros(SMALL.segment_length)
        w[3] = np.nan
        with pytest.raises(ContractError):
            stft(w, SMALL)


class TestIstft:
    def test_round_trip_white_noise(self):
        rng = np.random.default_rng(3)
        w = rng.standard_normal(DEFAULT_CONFIG.segment_length)
        s = stft(w)
        rec = istft_with_mixture_phase(s.magnitude, s.phase)
        n = DEFAULT_CONFIG.n_fft
        assert snr_db(w[n:-n], rec[n:-n]) > 40

    def test_zero_magnitude(self):
        phase = np.random.default_rng(4).uniform(-np.pi, np.pi, (SMALL.n_linear, SMALL.n_frames))
        out = istft_with_mixture_phase(np.zeros_like(phase), phase, SMALL)
        assert len(out) == SMALL.segment_length
        assert not out.any()

    def test_identity_mask(self):
        rng = np.random.default_rng(5)
        a, b = rng.standard_normal((2, SMALL.segment_length))
        m = mix([a, b])
        s = stft(m, SMALL)
        lin = mask_to_linear(np.ones((SMALL.n_log_bins, SMALL.n_frames)), SMALL)
        rec = istft_with_mixture_phase(lin * s.magnitude, s.phase, SMALL)
        n = SMALL.n_fft
        assert snr_db(m[n:-n], rec[n:-n]) > 40

    def test_masked_edges_do_not_blow_up(self):
        # a random mask leaves frames inconsistent with the window; the ends,
        # covered by a single frame, must stay on the interior's scale
        rng = np.random.default_rng(6)
        w = rng.standard_normal(SMALL.segment_length)
        s = stft(w, SMALL)
        mag = s.magnitude * (rng.random(s.magnitude.shape) > 0.5)
        out = istft_with_mixture_phase(mag, s.phase, SMALL)
        n = SMALL.n_fft
        edge = np.abs(np.r_[out[:n], out[-n:]]).max()
        assert edge <= 3 * np.abs(out[n:-n]).max()

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            istft_with_mixture_phase(np.zeros((512, 16)), np.zeros((512, 15)), SMALL)

    def test_negative_magnitude(self):
        mag = np.zeros((SMALL.n_linear, SMALL.n_frames))
        mag[0, 0] = -1
        with pytest.raises(ContractError):
            istft_with_mixture_phase(mag, np.zeros_like(mag), SMALL)


class TestBinMap:
    bm = make_bin_map(512, 256)

    def test_centres(self):
        c = self.bm.centers
        assert c[0] == 1.0 and c[-1] == 511.0
        ratios = c[1:] / c[:-1]
        np.testing.assert_allclose(ratios, ratios[0], rtol=1e-12)

    def test_forward_rows_partition_of_unity(self):
        np.testing.assert_allclose(self.bm.forward.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(self.bm.forward >= 0)

    def test_hat_columns_partition_of_unity(self):
        np.testing.assert_allclose(self.bm.hats.sum(axis=0), 1.0, atol=1e-12)

    def test_dc_folded_into_first_bin(self):
        assert self.bm.hats[0, 0] == 1.0

    def test_monotone(self):
        # each log bin's centre of mass increases with the bin index
        k = np.arange(512)
        com = self.bm.forward @ k
        assert np.all(np.diff(com) > 0)

    def test_read_only(self):
        with pytest.raises(ValueError):
            self.bm.forward[0, 0] = 2.0


class TestLogResample:
    def test_zero(self):
        assert not log_resample(np.zeros((512, 256))).values.any()

    def test_constant(self):
        out = log_resample(np.full((512, 256), 3.5)).values
        np.testing.assert_allclose(out, 3.5, rtol=1e-12)

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            log_resample(np.zeros((511, 256)))

    def test_impulse_at_256(self):
        bm = make_bin_map()
        c = bm.centers
        j = int(np.searchsorted(c, 256.0)) - 1
        assert c[j] < 256 < c[j + 1]
        assert (j, j + 1) == (226, 227)
        t = (256 - c[j]) / (c[j + 1] - c[j])  # linear between the bracketing centres
        col = bm.hats[:, 256]
        np.testing.assert_allclose(col[j], 1 - t, atol=1e-12)
        np.testing.assert_allclose(col[j + 1], t, atol=1e-12)
        assert col.sum() == pytest.approx(1.0, abs=1e-12)
        m = np.zeros((512, 256))
        m[256] = 2.0
        out = log_resample(m).values
        assert set(np.flatnonzero(out[:, 0])) == {j, j + 1}
        assert np.all(out >= 0)

    @given(arrays(np.float64, (512, 4), elements=st.floats(0, 1e3)))
    @settings(max_examples=20, deadline=None)
    def test_nonnegative(self, m):
        cfg = SpectroConfig(n_frames=4)
        assert np.all(log_resample(m, cfg).values >= 0)


class TestMaskToLinear:
    def test_ones_and_zeros(self):
        np.testing.assert_allclose(mask_to_linear(np.ones((256, 256))), 1.0)
        assert not mask_to_linear(np.zeros((256, 256))).any()

    def test_half_band(self):
        mask = np.zeros((256, 256))
        mask[:128] = 1.0
        lin = mask_to_linear(mask)
        col = lin[:, 0]
        assert np.all(np.diff(col) <= 0)
        c = make_bin_map().centers
        # transition between the linear bins bracketing the last "on" centre and the first "off" one
        assert c[127] < 23 and c[128] > 22
        assert np.all(col[: int(np.floor(c[127])) + 1] == 1.0)
        assert np.all(col[int(np.ceil(c[128])) :] == 0.0)

    def test_out_of_range(self):
        with pytest.raises(ContractError):
            mask_to_linear(np.full((256, 256), 1.5))
        with pytest.raises(ContractError):
            mask_to_linear(np.full((256, 256), -0.1))

    @given(arrays(np.float64, (16, 16), elements=st.floats(0, 1)))
    @settings(max_examples=30, deadline=None)
    def test_range_property(self, mask):
        lin = mask_to_linear(mask, SMALL)
        assert lin.shape == (512, 16)
        assert np.all((lin >= 0) & (lin <= 1))


class TestMix:
    def test_identities(self):
        w = np.random.default_rng(6).standard_normal(100)
        np.testing.assert_array_equal(mix([w, np.zeros(100)]), w)
        assert not mix([w, -w]).any()

    def test_length_mismatch(self):
        with pytest.raises(LengthError):
            mix([np.zeros(3), np.zeros(4)])

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=20)
    def test_commutative_associative(self, seed):
        a, b, c = np.random.default_rng(seed).standard_normal((3, 64))
        np.testing.assert_array_equal(mix([a, b]), mix([b, a]))
        np.testing.assert_allclose(mix([mix([a, b]), c]), mix([a, mix([b, c])]), atol=1e-12)

    def test_triangle_inequality(self):
        rng = np.random.default_rng(7)
        for _ in range(3):
            a, b = rng.standard_normal((2, SMALL.segment_length))
            lhs = stft(mix([a, b]), SMALL).magnitude
            rhs = stft(a, SMALL).magnitude + stft(b, SMALL).magnitude
            assert np.all(lhs <= rhs + 1e-9)


class TestFiles:
    def test_wav_round_trip(self, tmp_path):
        w = np.round(np.random.default_rng(8).uniform(-0.9, 0.9, 500) * 32768) / 32768
        spectro.write_wav(tmp_path / "a.wav", w)
        np.testing.assert_array_equal(spectro.read_wav(tmp_path / "a.wav"), w)

    def test_wav_wrong_rate(self, tmp_path):
        import wave

        with wave.open(str(tmp_path / "b.wav"), "wb") as fh:
            fh.setnchannels(1)
            fh.setsampwidth(2)
            fh.setframerate(16000)
            fh.writeframes(b"\x00\x00" * 10)
        with pytest.raises(ContractError):
            spectro.read_wav(tmp_path / "b.wav")

    def test_snapshot_layout(self, tmp_path):
        g = np.arange(6, dtype=np.float64).reshape(2, 3)
        p = tmp_path / "g.spec"
        spectro.write_snapshot(p, g)
        raw = p.read_bytes()
        assert raw[:8] == b"AVSGSPEC"
        assert np.frombuffer(raw[8:16], "<u4").tolist() == [2, 3]
        assert len(raw) == 16 + 6 * 4
        np.testing.assert_array_equal(spectro.read_snapshot(p), g)
