import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from impulse_rake.events import (EventRecord, FrameTiler, accumulate_events, assemble_frame, devectorize_tile,
                                 export_frame_bytes, frame_to_streams, read_event_stream, synth_sparse_frame,
                                 tile_frame, vectorize_tile, write_event_stream)
from impulse_rake.exceptions import ConfigError, EventError, StructureError


def _random_frame(rng, h, w):
    """Valid frame: each pixel is 00, 01 or 10."""
    state = rng.integers(0, 3, size=(h, w))
    frame = np.zeros((h, w, 2), dtype=np.uint8)
    frame[..., 0] = state == 1
    frame[..., 1] = state == 2
    return frame


class TestAccumulate:
    def test_empty_stream_gives_one_blank_frame(self):
        frames = accumulate_events([], 1000.0, 8, 8)
        assert len(frames) == 1
        assert not frames[0].any()

    def test_single_increase_event(self):
        (frame,) = accumulate_events([EventRecord(3, 5, 10.0, +1)], 100.0, 8, 8)
        assert tuple(frame[5, 3]) == (0, 1)
        frame[5, 3] = 0
        assert not frame.any()

    def test_later_event_wins(self):
        (frame,) = accumulate_events([(2, 2, 1.0, +1), (2, 2, 2.0, -1)], 100.0, 4, 4)
        assert tuple(frame[2, 2]) == (1, 0)

    def test_windows_split_on_boundaries(self):
        frames = accumulate_events([(0, 0, 0.0, 1), (1, 0, 99.9, -1), (2, 0, 100.0, 1)], 100.0, 2, 4)
        assert len(frames) == 2
        assert frames[0][0, 1, 0] == 1 and frames[1][0, 2, 1] == 1

    def test_out_of_range_reports_index(self):
        with pytest.raises(EventError) as info:
            accumulate_events([(0, 0, 0.0, 1), (9, 0, 1.0, 1)], 10.0, 4, 4)
        assert info.value.index == 1

    def test_backwards_time_rejected(self):
        with pytest.raises(EventError):
            accumulate_events([(0, 0, 5.0, 1), (0, 0, 4.0, 1)], 10.0, 4, 4)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 3), st.floats(0, 50), st.sampled_from([-1, 1])),
                    max_size=40))
    def test_never_produces_both_polarities(self, events):
        events = sorted(events, key=lambda e: e[2])
        for frame in accumulate_events(events, 7.0, 4, 6):
            assert not (frame[..., 0] & frame[..., 1]).any()


def test_event_file_round_trip(tmp_path):
    recs = [EventRecord(1, 2, 3.5, 1), EventRecord(0, 0, 4.0, -1)]
    path = tmp_path / "ev.txt"
    write_event_stream(path, recs)
    path.write_text("# header\n" + path.read_text() + "\n")
    assert read_event_stream(path) == recs


class TestTiling:
    def test_single_user_is_identity(self):
        frame = _random_frame(np.random.default_rng(0), 6, 4)
        (tile,) = tile_frame(frame, 1)
        assert np.array_equal(tile, frame)

    def test_sixteen_tiles_of_32(self):
        tiles = tile_frame(np.zeros((128, 128, 2), np.uint8), 16)
        assert len(tiles) == 16 and all(t.shape == (32, 32, 2) for t in tiles)

    def test_row_major_grid(self):
        frame = np.zeros((4, 4, 2), np.uint8)
        frame[0, 2, 0] = 1  # top-right tile
        frame[2, 0, 1] = 1  # bottom-left tile
        tiles = tile_frame(frame, 4)
        assert tiles[1][0, 0, 0] == 1 and tiles[2][0, 0, 1] == 1

    def test_stream_length(self):
        assert vectorize_tile(np.zeros((32, 32, 2), np.uint8)).shape == (2048,)

    def test_polarity_is_fastest_axis(self):
        tile = np.zeros((2, 2, 2), np.uint8)
        tile[0, 1, 1] = 1
        assert np.flatnonzero(vectorize_tile(tile)).tolist() == [3]

    @pytest.mark.parametrize("k", [2, 3, 5])
    def test_non_square_user_count_rejected(self, k):
        with pytest.raises(ConfigError):
            tile_frame(np.zeros((12, 12, 2), np.uint8), k)

    def test_indivisible_frame_rejected(self):
        with pytest.raises(ConfigError):
            tile_frame(np.zeros((10, 12, 2), np.uint8), 16)

    def test_wrong_stream_length_rejected(self):
        with pytest.raises(StructureError):
            assemble_frame([np.zeros(7)] * 4, 4, 4, 4)

    @settings(max_examples=40, deadline=None)
    @given(st.sampled_from([1, 4, 9, 16]), st.integers(1, 3), st.integers(1, 3), st.integers(0, 2**32 - 1))
    def test_tile_assemble_round_trip(self, k, a, b, seed):
        side = int(round(k ** 0.5))
        frame = _random_frame(np.random.default_rng(seed), side * a, side * b)
        streams = [vectorize_tile(t) for t in tile_frame(frame, k)]
        assert np.array_equal(assemble_frame(streams, k, side * a, side * b), frame)

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.uint8, st.tuples(st.integers(1, 5), st.integers(1, 5), st.just(2)), elements=st.integers(0, 1)))
    def test_vectorize_devectorize_round_trip(self, tile):
        h, w, _ = tile.shape
        assert np.array_equal(devectorize_tile(vectorize_tile(tile), h, w), tile)


class TestSynth:
    def test_zero_rate_blank(self):
        assert not synth_sparse_frame(0.0, 16, 16, seed=1).any()

    def test_full_rate_every_pixel_once(self):
        frame = synth_sparse_frame(1.0, 16, 16, seed=1)
        assert np.all(frame.sum(axis=2) == 1)
        assert frame.mean() == 0.5

    def test_bit_rate_within_three_sigma(self):
        frame = synth_sparse_frame(0.1, 500, 1000, seed=3)  # 10^6 bits
        assert abs(frame.mean() - 0.1) <= 3 * np.sqrt(0.1 * 0.9 / 1e6)

    def test_deterministic_under_seed(self):
        assert np.array_equal(synth_sparse_frame(0.2, 8, 8, 5), synth_sparse_frame(0.2, 8, 8, 5))

    def test_export_is_row_major(self):
        frame = synth_sparse_frame(0.3, 4, 6, seed=2)
        assert export_frame_bytes(frame) == frame.tobytes()


def test_frame_tiler_estimator():
    rng = np.random.default_rng(0)
    X = np.stack([_random_frame(rng, 8, 8) for _ in range(3)])
    tiler = FrameTiler(n_users=4).fit(X)
    S = tiler.transform(X)
    assert S.shape == (3, 4, 32)
    assert np.array_equal(S[1], frame_to_streams(X[1], 4))
    assert np.array_equal(tiler.inverse_transform(S), X)
    assert tiler.get_params() == {"n_users": 4}
