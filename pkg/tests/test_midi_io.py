"""SMF parsing/writing: quantization, Table-style signature policy goldens,
running status, channel merging, and exact round trips."""

import pytest

from conftest import SmfBuilder, make_random_score, simple_smf
from remiforge.errors import EmptyScore, MalformedMidi
from remiforge.midi_io import parse_midi, write_midi
from remiforge.score import Note, Score, make_bars, sorted_notes


def bar_signatures(score):
    return [b.time_signature for b in score.bars]


class TestParseBasics:
    def test_single_quarter_note(self):
        data = simple_smf([(0, 60, 480)], timesig=(4, 2))
        s = parse_midi(data)
        assert len(s.notes) == 1
        n = s.notes[0]
        assert (n.pitch, n.onset, n.duration) == (60, 0, 12)
        assert bar_signatures(s) == [(4, 4)]

    def test_default_signature_and_tempo(self):
        s = parse_midi(simple_smf([(0, 60, 480)]))
        assert bar_signatures(s) == [(4, 4)]
        assert s.tempo_class == 120

    def test_tempo_quantized_from_first_event(self):
        # 118 bpm -> 508474 us per quarter -> class 120
        s = parse_midi(simple_smf([(0, 60, 480)], tempo_us=508474))
        assert s.tempo_class == 120
        # 30 bpm -> clamps to 40
        s = parse_midi(simple_smf([(0, 60, 480)], tempo_us=2000000))
        assert s.tempo_class == 40

    def test_only_first_tempo_honored(self):
        events = [
            (0, b"\xff\x51\x03" + (1500000).to_bytes(3, "big")),   # 40 bpm
            (0, bytes([0x90, 60, 64])),
            (240, b"\xff\x51\x03" + (500000).to_bytes(3, "big")),  # 120 bpm
            (240, bytes([0x80, 60, 0])),
        ]
        s = parse_midi(SmfBuilder().track(events).bytes())
        assert s.tempo_class == 40

    def test_empty_score_error(self):
        with pytest.raises(EmptyScore):
            parse_midi(SmfBuilder().track([]).bytes())

    def test_out_of_range_pitches_dropped(self):
        data = simple_smf([(0, 20, 480), (0, 60, 480), (0, 110, 480)])
        s = parse_midi(data)
        assert [n.pitch for n in s.notes] == [60]
        with pytest.raises(EmptyScore):
            parse_midi(simple_smf([(0, 5, 480)]))

    def test_grid_rounding_ties_down(self):
        # 480 TPQ: one internal tick = 40 original ticks; midpoints go earlier
        data = simple_smf([(20, 60, 480), (60, 72, 480), (100, 84, 480)])
        s = parse_midi(data)
        onsets = {n.pitch: n.onset for n in s.notes}
        assert onsets[60] == 0   # 0.5 -> 0
        assert onsets[72] == 1   # 1.5 -> 1
        assert onsets[84] == 2   # 2.5 -> 2


class TestQuantizationPolicy:
    def test_half_tick_rounds_down(self):
        for orig, expected in ((20, 0), (59, 1), (60, 1), (61, 2), (100, 2)):
            s = parse_midi(simple_smf([(orig, 60, 480), (4000, 61, 480)]))
            onset = next(n.onset for n in s.notes if n.pitch == 60)
            assert onset == expected, (orig, onset, expected)

    def test_min_duration_one_tick(self):
        s = parse_midi(simple_smf([(0, 60, 1)]))
        assert s.notes[0].duration == 1

    def test_duration_rounds_to_nearest(self):
        # 100 orig ticks = 2.5 internal -> 2 (ties down); 110 -> 2.75 -> 3
        s = parse_midi(simple_smf([(0, 60, 100), (960, 61, 110)]))
        durs = {n.pitch: n.duration for n in s.notes}
        assert durs[60] == 2
        assert durs[61] == 3


class TestSignaturePolicyGoldens:
    def make(self, timesig, notes, division=480):
        return parse_midi(simple_smf(notes, division=division, timesig=timesig))

    def test_5_4_converts_to_2_4_plus_3_4(self):
        notes = [(q * 480, 60 + q, 480) for q in range(10)]  # two 5/4 bars
        s = self.make((5, 2), notes)
        assert bar_signatures(s) == [(2, 4), (3, 4), (2, 4), (3, 4)]
        assert [n.onset for n in s.notes] == [12 * q for q in range(10)]
        assert all(n.duration == 12 for n in s.notes)

    def test_6_4_splits_to_two_3_4(self):
        notes = [(q * 480, 60 + q, 480) for q in range(6)]
        s = self.make((6, 2), notes)
        assert bar_signatures(s) == [(3, 4), (3, 4)]
        assert [n.onset for n in s.notes] == [12 * q for q in range(6)]

    def test_4_8_quantizes_to_2_4(self):
        notes = [(e * 240, 60 + e, 240) for e in range(4)]
        s = self.make((4, 3), notes)
        assert bar_signatures(s) == [(2, 4)]
        assert [n.onset for n in s.notes] == [0, 6, 12, 18]
        assert all(n.duration == 6 for n in s.notes)

    def test_12_8_splits_to_two_6_8(self):
        notes = [(e * 240, 60 + e, 240) for e in range(12)]
        s = self.make((12, 3), notes)
        assert bar_signatures(s) == [(6, 8), (6, 8)]
        assert [n.onset for n in s.notes] == [6 * e for e in range(12)]

    def test_catch_all_7_8_to_4_4_proportional(self):
        notes = [(e * 240, 60 + e, 240) for e in range(7)]
        s = self.make((7, 3), notes)
        assert bar_signatures(s) == [(4, 4)]
        # positions stretch proportionally: round-half-down(48 * e / 7)
        assert [n.onset for n in s.notes] == [0, 7, 14, 21, 27, 34, 41]

    def test_mid_bar_signature_effective_next_bar(self):
        events = [
            (0, b"\xff\x58\x04\x04\x02\x18\x08"),     # 4/4 at 0
            (0, bytes([0x90, 60, 64])),
            (480, bytes([0x80, 60, 0])),
            (120, b"\xff\x58\x04\x03\x02\x18\x08"),   # 3/4 mid-bar (tick 600)
            (1400, bytes([0x90, 62, 64])),            # tick 2000, in bar 1
            (480, bytes([0x80, 62, 0])),
        ]
        s = parse_midi(SmfBuilder().track(events).bytes())
        assert bar_signatures(s) == [(4, 4), (3, 4)]
        assert s.notes[1].onset == 50  # 2000/40 = 50, bar 1 spans [48, 84)


class TestTrackMechanics:
    def test_running_status(self):
        events = [
            (0, bytes([0x90, 60, 64])),
            (480, bytes([60, 0])),        # running status note-on vel 0 = off
            (0, bytes([64, 64])),         # running status note-on
            (480, bytes([64, 0])),
        ]
        s = parse_midi(SmfBuilder().track(events).bytes())
        assert [(n.pitch, n.onset, n.duration) for n in s.notes] == [
            (60, 0, 12), (64, 12, 12)]

    def test_meta_cancels_running_status(self):
        events = [
            (0, bytes([0x90, 60, 64])),
            (480, b"\xff\x01\x02hi"),
            (0, bytes([60, 0])),          # running status after meta: invalid
        ]
        with pytest.raises(MalformedMidi):
            parse_midi(SmfBuilder().track(events).bytes())

    def test_format_1_tracks_merged(self):
        b = SmfBuilder(fmt=1)
        b.track([(0, b"\xff\x51\x03" + (500000).to_bytes(3, "big"))])
        b.track([(0, bytes([0x90, 60, 64])), (480, bytes([0x80, 60, 0]))])
        b.track([(240, bytes([0x91, 72, 64])), (480, bytes([0x81, 72, 0]))])
        s = parse_midi(b.bytes())
        assert [(n.pitch, n.onset) for n in s.notes] == [(60, 0), (72, 6)]

    def test_bad_header(self):
        with pytest.raises(MalformedMidi):
            parse_midi(b"RIFF" + b"\x00" * 20)
        with pytest.raises(MalformedMidi):
            parse_midi(simple_smf([(0, 60, 480)])[:-3])

    def test_format_2_rejected(self):
        data = bytearray(simple_smf([(0, 60, 480)]))
        data[9] = 2
        with pytest.raises(MalformedMidi):
            parse_midi(bytes(data))

    def test_smpte_division_rejected(self):
        data = bytearray(simple_smf([(0, 60, 480)]))
        data[12] = 0xE8  # negative high byte => SMPTE timing
        with pytest.raises(MalformedMidi):
            parse_midi(bytes(data))

    def test_alien_chunks_skipped(self):
        base = simple_smf([(0, 60, 480)])
        header, track = base[:14], base[14:]
        data = header + b"XFIH" + (4).to_bytes(4, "big") + b"ABCD" + track
        s = parse_midi(data)
        assert len(s.notes) == 1

    def test_unterminated_note_closed_at_track_end(self):
        events = [
            (0, bytes([0x90, 60, 64])),   # never switched off
            (960, bytes([0x90, 62, 64])),
            (480, bytes([0x80, 62, 0])),
        ]
        s = parse_midi(SmfBuilder().track(events).bytes())
        d = {n.pitch: n.duration for n in s.notes}
        assert d[60] == 36  # closes at final event tick 1440

    def test_retrigger_truncates_earlier(self):
        events = [
            (0, bytes([0x90, 60, 64])),
            (240, bytes([0x90, 60, 64])),   # re-strike cuts the first note
            (240, bytes([0x80, 60, 0])),    # closes the re-struck note
            (480, bytes([0x80, 60, 0])),    # dangling off, ignored
        ]
        s = parse_midi(SmfBuilder().track(events).bytes())
        assert [(n.onset, n.duration) for n in s.notes] == [(0, 6), (6, 6)]

    def test_same_onset_same_pitch_keeps_longer(self):
        b = SmfBuilder(fmt=1)
        b.track([(0, bytes([0x90, 60, 64])), (480, bytes([0x80, 60, 0]))])
        b.track([(0, bytes([0x91, 60, 64])), (960, bytes([0x81, 60, 0]))])
        s = parse_midi(b.bytes())
        assert [(n.pitch, n.onset, n.duration) for n in s.notes] == [(60, 0, 24)]


class TestWriteMidi:
    def test_tempo_meta_value(self):
        s = Score(tempo_class=160, bars=make_bars([(4, 4)]),
                  notes=(Note(pitch=60, onset=0, duration=12),))
        data = write_midi(s)
        assert b"\xff\x51\x03" + (375000).to_bytes(3, "big") in data

    def test_signature_metas_at_bar_starts(self):
        s = Score(tempo_class=120, bars=make_bars([(2, 4), (3, 4)]),
                  notes=(Note(pitch=60, onset=0, duration=12),))
        data = write_midi(s)
        assert b"\xff\x58\x04\x02\x02\x18\x08" in data
        assert b"\xff\x58\x04\x03\x02\x18\x08" in data
        r = parse_midi(data)
        assert bar_signatures(r) == [(2, 4), (3, 4)]

    def test_composer_and_partial_flags_round_trip(self):
        s = Score(tempo_class=80, bars=make_bars([(6, 8)]),
                  notes=(Note(pitch=72, onset=6, duration=6),),
                  composer="Beethoven", has_true_start=False,
                  has_true_end=False)
        r = parse_midi(write_midi(s))
        assert r.composer == "Beethoven"
        assert not r.has_true_start
        assert not r.has_true_end

    def test_round_trip_random_scores(self, rng):
        for _ in range(200):
            s = make_random_score(rng, max_bars=12)
            assert parse_midi(write_midi(s)) == s

    def test_write_is_deterministic(self, rng):
        s = make_random_score(rng, max_bars=8)
        assert write_midi(s) == write_midi(s)
