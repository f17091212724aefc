import hashlib
import hmac as hmac_mod
import random

import pytest

from canfuzz.bus import VirtualBus
from canfuzz.frames import CanFrame
from canfuzz.targets import (
    AuthEcu,
    AuthSender,
    ClusterLayout,
    HeartbeatEcu,
    IndicatorSpec,
    InstrumentCluster,
    NeedleSpec,
    StateSeries,
    auth_tag,
)

KEY = bytes.fromhex("00112233445566778899aabbccddeeff")


def ref_tag(key, can_id, payload, nonce):
    """Independent tag oracle: recompute the keyed digest from scratch."""
    msg = can_id.to_bytes(4, "big") + payload + nonce.to_bytes(8, "big")
    return hmac_mod.new(key, msg, hashlib.sha256).digest()[:8]


def simple_layout(**kwargs):
    spec = IndicatorSpec(channel="lamp", can_id=0x481, byte=0, bit=3, **kwargs)
    return ClusterLayout(indicators=[spec])


class TestStateSeries:
    def test_value_at(self):
        s = StateSeries(False)
        s.record(100, True)
        s.record(200, False)
        assert not s.value_at(99)
        assert s.value_at(100)
        assert s.value_at(150)
        assert not s.value_at(200)

    def test_coalesces_equal_values(self):
        s = StateSeries(False)
        s.record(50, False)
        s.record(60, True)
        s.record(70, True)
        assert s.transitions() == [(60, True)]

    def test_monotone_required(self):
        s = StateSeries(0)
        s.record(10, 1)
        with pytest.raises(ValueError):
            s.record(5, 2)

    def test_transitions_bounds(self):
        s = StateSeries(0)
        for t in (10, 20, 30):
            s.record(t, t)
        assert s.transitions(start_us=10, end_us=20) == [(20, 20)]


class TestClusterLayout:
    def test_unique_channels(self):
        spec = IndicatorSpec("a", 1, 0, 0)
        with pytest.raises(ValueError):
            ClusterLayout(indicators=[spec, spec])

    def test_id_range(self):
        with pytest.raises(ValueError):
            IndicatorSpec("a", 0x800, 0, 0)

    def test_from_mapping_and_truth(self):
        layout = ClusterLayout.from_mapping({
            "hold_ms": 150,
            "indicators": [
                {"channel": "a", "id": 0x101, "byte": 1, "bit": 2},
                {"channel": "b", "id": 0x102, "byte": 0, "bit": 0, "arm_id": 0x100},
            ],
            "needles": [{"name": "speed", "id": 0x208, "byte": 3}],
        })
        assert layout.hold_ms == 150
        assert layout.ground_truth() == {"a": (0x101, 1, 2), "b": (0x102, 0, 0)}
        assert layout.single_stage_truth() == {"a": (0x101, 1, 2)}


def make_cluster(layout):
    bus = VirtualBus()
    cluster = InstrumentCluster(bus, layout)
    driver = bus.attach("driver")
    return bus, cluster, driver


class TestInstrumentCluster:
    def test_mapped_bit_activates(self):
        bus, cluster, driver = make_cluster(simple_layout())
        bus.send(driver, CanFrame(0x481, bytes.fromhex("ffffffff")))
        bus.run_until(10_000)
        assert cluster.outputs["lamp"].current is True

    def test_unmapped_frames_ignored(self):
        bus, cluster, driver = make_cluster(simple_layout())
        bus.send(driver, CanFrame(0x482, bytes.fromhex("ffffffff")))
        bus.send(driver, CanFrame(0x481, b"\xff", True))  # extended ids ignored
        bus.run_until(10_000)
        assert cluster.outputs["lamp"].current is False

    def test_bit_clear_deactivates_immediately(self):
        # [DERIVED] two frames 3 ms apart: activation shorter than hold time
        bus, cluster, driver = make_cluster(simple_layout())
        bus.send(driver, CanFrame(0x481, bytes.fromhex("08")), at=0)
        bus.send(driver, CanFrame(0x481, bytes.fromhex("00")), at=3_000)
        bus.run_until(1_000_000)
        on_spans = cluster.outputs["lamp"].transitions()
        assert on_spans[0][1] is True and on_spans[1][1] is False
        assert on_spans[1][0] - on_spans[0][0] == 3_000  # well under the 200 ms hold

    def test_hold_time_autoclears(self):
        bus, cluster, driver = make_cluster(simple_layout())
        bus.send(driver, CanFrame(0x481, bytes.fromhex("08")), at=0)
        bus.run_until(1_000_000)
        trans = cluster.outputs["lamp"].transitions()
        assert [v for _, v in trans] == [True, False]
        assert trans[1][0] - trans[0][0] == 200_000

    def test_refresh_extends_hold(self):
        bus, cluster, driver = make_cluster(simple_layout())
        bus.send(driver, CanFrame(0x481, bytes.fromhex("08")), at=0)
        bus.send(driver, CanFrame(0x481, bytes.fromhex("08")), at=150_000)
        bus.run_until(1_000_000)
        trans = cluster.outputs["lamp"].transitions()
        assert [v for _, v in trans] == [True, False]
        assert trans[1][0] - trans[0][0] == 350_000

    def test_short_payload_reads_missing_byte_as_zero(self):
        layout = ClusterLayout(indicators=[IndicatorSpec("lamp", 0x200, byte=3, bit=0)])
        bus, cluster, driver = make_cluster(layout)
        bus.send(driver, CanFrame(0x200, b"\xff"))  # byte 3 absent
        bus.run_until(10_000)
        assert cluster.outputs["lamp"].current is False

    def test_default_on_starts_lit_and_inverts(self):
        # all-ones payload clears a default-on indicator; all-zero re-lights it
        bus, cluster, driver = make_cluster(simple_layout(default_on=True))
        assert cluster.outputs["lamp"].value_at(0) is True
        bus.send(driver, CanFrame(0x481, bytes.fromhex("ffffffff")), at=0)
        bus.send(driver, CanFrame(0x481, bytes.fromhex("00000000")), at=30_000_000)
        bus.run_until(40_000_000)
        trans = cluster.outputs["lamp"].transitions()
        assert [v for _, v in trans] == [False, True]
        # driven states latch: 30 s apart, far beyond any hold time
        assert trans[1][0] - trans[0][0] >= 29_000_000

    def test_two_stage_requires_recent_arm(self):
        layout = ClusterLayout(indicators=[
            IndicatorSpec("brake", 0x305, byte=0, bit=0, arm_id=0x300)])
        bus, cluster, driver = make_cluster(layout)
        bus.send(driver, CanFrame(0x305, b"\x01"), at=0)  # unarmed: ignored
        bus.send(driver, CanFrame(0x300, b""), at=2_000_000)
        bus.send(driver, CanFrame(0x305, b"\x01"), at=2_050_000)  # armed: fires
        bus.send(driver, CanFrame(0x300, b""), at=5_000_000)
        bus.send(driver, CanFrame(0x305, b"\x01"), at=6_100_000)  # arm expired
        bus.run_until(10_000_000)
        trans = cluster.outputs["brake"].transitions()
        assert [v for _, v in trans] == [True, False]
        assert trans[0][0] == 2_050_216  # armed activation (delivery time)

    def test_needles_track_payload_byte(self):
        layout = ClusterLayout(indicators=[IndicatorSpec("lamp", 0x481, 0, 3)],
                               needles=[NeedleSpec("speed", 0x208, 3)])
        bus, cluster, driver = make_cluster(layout)
        bus.send(driver, CanFrame(0x208, bytes([0, 0, 0, 180])))
        bus.run_until(10_000)
        assert cluster.needles["speed"].current == 180

    def test_replay_determinism(self):
        rng = random.Random(12)
        frames = [(i * 5_000, CanFrame(rng.choice([0x481, 0x300, 0x305, 0x100]),
                                       rng.randbytes(4)))
                  for i in range(200)]
        traces = []
        for _ in range(2):
            bus, cluster, driver = make_cluster(simple_layout())
            for at, frame in frames:
                bus.send(driver, frame, at=at)
            bus.run_until(5_000_000)
            traces.append(cluster.outputs["lamp"].transitions())
        assert traces[0] == traces[1]


class TestHeartbeatEcu:
    def test_steady_heartbeat_stays_alive(self):
        bus = VirtualBus()
        ecu = HeartbeatEcu(bus, {0x0C0: 50})
        driver = bus.attach("driver")
        for i in range(100):
            bus.send(driver, CanFrame(0x0C0, b""), at=i * 50_000)
        bus.run_until(5_000_000)
        assert not ecu.faulted

    def test_gap_over_bound_faults(self):
        # [TRIVIAL] 200 ms gap at 50 ms period exceeds 125 ms bound
        bus = VirtualBus()
        ecu = HeartbeatEcu(bus, {0x0C0: 50})
        driver = bus.attach("driver")
        bus.send(driver, CanFrame(0x0C0, b""), at=0)
        bus.send(driver, CanFrame(0x0C0, b""), at=200_000)
        bus.run_until(1_000_000)
        assert ecu.faulted
        assert ecu.fault_time_us == 216 + 125_000 + 1  # last_seen + bound + 1 us

    def test_fault_latches_until_reset(self):
        bus = VirtualBus()
        ecu = HeartbeatEcu(bus, {0x0C0: 50})
        driver = bus.attach("driver")
        for i in range(20):
            bus.send(driver, CanFrame(0x0C0, b""), at=500_000 + i * 50_000)
        bus.run_until(3_000_000)
        assert ecu.faulted  # initial silence faulted it; later traffic ignored
        ecu.reset()
        assert not ecu.faulted
        assert ecu.alive.current is True

    def test_any_required_id_missing_faults(self):
        bus = VirtualBus()
        ecu = HeartbeatEcu(bus, {0x0C0: 50, 0x0C5: 100})
        driver = bus.attach("driver")
        for i in range(40):
            bus.send(driver, CanFrame(0x0C0, b""), at=i * 50_000)  # 0x0C5 never sent
        bus.run_until(2_000_000)
        assert ecu.faulted
        assert ecu.fault_time_us == 250_001

    def test_alive_series_mirrors_latch(self):
        bus = VirtualBus()
        ecu = HeartbeatEcu(bus, {0x0C0: 50})
        bus.run_until(1_000_000)
        assert ecu.alive.value_at(125_001) is False
        assert ecu.alive.value_at(125_000) is True


class TestAuthTag:
    def test_matches_reference_oracle(self):
        for nonce in (1, 7, 2 ** 40):
            assert auth_tag(KEY, 0x222, b"hello", nonce) == ref_tag(KEY, 0x222, b"hello", nonce)

    def test_tag_is_64_bits(self):
        assert len(auth_tag(KEY, 0x222, b"x", 1)) == 8


def make_auth(**bugs):
    bus = VirtualBus()
    ecu = AuthEcu(bus, KEY, app_id=0x222, auth_id=0x223, window=8, **bugs)
    driver = bus.attach("driver")
    return bus, ecu, driver


def send_pair(bus, driver, payload, nonce, at):
    bus.send(driver, CanFrame(0x222, payload), at=at)
    bus.send(driver, CanFrame(0x223, auth_tag(KEY, 0x222, payload, nonce)), at=at + 1000)


class TestAuthEcu:
    def test_valid_pair_accepted(self):
        bus, ecu, driver = make_auth()
        send_pair(bus, driver, b"hi", nonce=1, at=0)
        bus.run_until(100_000)
        assert ecu.pulse_count == 1
        assert ecu.counter == 1

    def test_nonce_window_accepts_skips(self):
        bus, ecu, driver = make_auth()
        send_pair(bus, driver, b"hi", nonce=8, at=0)   # inside (0, 8]
        send_pair(bus, driver, b"ho", nonce=17, at=50_000)  # outside (8, 16]
        bus.run_until(200_000)
        assert ecu.pulse_count == 1
        assert ecu.counter == 8

    def test_replayed_nonce_rejected(self):
        bus, ecu, driver = make_auth()
        send_pair(bus, driver, b"hi", nonce=1, at=0)
        send_pair(bus, driver, b"hi", nonce=1, at=50_000)
        bus.run_until(200_000)
        assert ecu.pulse_count == 1

    def test_wrong_tag_rejected_silently(self):
        bus, ecu, driver = make_auth()
        bus.send(driver, CanFrame(0x222, b"hi"), at=0)
        bus.send(driver, CanFrame(0x223, b"\x00" * 8), at=1000)
        bus.run_until(100_000)
        assert ecu.pulse_count == 0
        assert ecu.counter == 0

    def test_display_pulse_clears(self):
        bus, ecu, driver = make_auth()
        send_pair(bus, driver, b"hi", nonce=1, at=0)
        bus.run_until(1_000_000)
        trans = ecu.display.transitions()
        assert [v for _, v in trans] == [True, False]
        assert trans[1][0] - trans[0][0] == 50_000

    def test_ext_id_bypass(self):
        bus, ecu, driver = make_auth(ext_id_bypass=True)
        bus.send(driver, CanFrame(0x1ABC0222, b"\x01\x02", extended=True))
        bus.run_until(100_000)
        assert ecu.pulse_count == 1

    def test_bypass_requires_matching_low_bits(self):
        bus, ecu, driver = make_auth(ext_id_bypass=True)
        bus.send(driver, CanFrame(0x1ABC0333, b"\x01", extended=True))
        bus.run_until(100_000)
        assert ecu.pulse_count == 0

    def test_extended_ids_inert_without_bug(self):
        bus, ecu, driver = make_auth()
        bus.send(driver, CanFrame(0x1ABC0222, b"\x01", extended=True))
        bus.run_until(100_000)
        assert ecu.pulse_count == 0
        assert ecu.counter == 0

    def test_desync_counter_advances_on_flood(self):
        bus, ecu, driver = make_auth(desync_on_flood=True)
        for i in range(8):
            bus.send(driver, CanFrame(0x222, bytes([i])), at=i * 2_000)
        bus.send(driver, CanFrame(0x100, b""), at=20_000)  # flush pending via nothing
        send_pair(bus, driver, b"hi", nonce=1, at=30_000)
        bus.run_until(200_000)
        assert ecu.counter >= 8
        assert ecu.pulse_count == 0  # legitimate nonce now behind the window

    def test_without_bug_flood_is_harmless(self):
        bus, ecu, driver = make_auth()
        for i in range(8):
            bus.send(driver, CanFrame(0x222, bytes([i])), at=i * 2_000)
        send_pair(bus, driver, b"hi", nonce=1, at=30_000)
        bus.run_until(200_000)
        assert ecu.pulse_count == 1

    def test_random_frames_never_pulse(self):
        # [DERIVED] negative control at unit scale: a 64-bit tag does not
        # collide within a seeded random run
        bus, ecu, driver = make_auth()
        rng = random.Random(5)
        for i in range(20_000):
            bus.send(driver, CanFrame(rng.getrandbits(11), rng.randbytes(rng.randint(0, 8))),
                     at=i * 300)
        bus.run_until(20_000 * 300 + 10_000)
        assert ecu.pulse_count == 0


class TestAuthSender:
    def test_sender_receiver_stay_in_sync(self):
        bus = VirtualBus()
        ecu = AuthEcu(bus, KEY, app_id=0x222, auth_id=0x223)
        AuthSender(bus, KEY, app_id=0x222, auth_id=0x223, period_ms=200)
        bus.run_until(2_000_000)
        assert ecu.pulse_count == 10
        assert ecu.counter == 10

    def test_stop(self):
        bus = VirtualBus()
        ecu = AuthEcu(bus, KEY, app_id=0x222, auth_id=0x223)
        sender = AuthSender(bus, KEY, app_id=0x222, auth_id=0x223, period_ms=200)
        bus.run_until(1_050_000)  # the 1.0 s pair has fully landed
        sender.stop()
        count = ecu.pulse_count
        bus.run_until(3_000_000)
        assert ecu.pulse_count == count
