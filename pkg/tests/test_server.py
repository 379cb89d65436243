import hashlib
import socket
import threading
import time

import numpy as np
import pytest

from replaynet import protocol as wire
from replaynet.client import (
    BackpressureError,
    Connection,
    ForbiddenError,
    NotReadyError,
    ServerReplyError,
    WrongModeError,
)
from replaynet.core import Experience
from replaynet.protocol import ErrorCode, Role, ServerMode

from conftest import ACTION_COUNT, STATE_DIM, make_experience


def connect(server, role):
    return Connection(server.address, role, STATE_DIM, ACTION_COUNT)


def push_batch(conn, count, rng, priority=1.0):
    exps = tuple(make_experience(rng) for _ in range(count))
    return conn.request(wire.PushExperiences(exps, (priority,) * count))[0]


def wait_for(predicate, timeout=5.0):
    deadline = time.monotonic() + timeout
    while not predicate():
        if time.monotonic() > deadline:
            raise TimeoutError("condition never became true")
        time.sleep(0.01)


class TestHandshake:
    def test_hello_ack_carries_negotiated_config(self, server_factory):
        server = server_factory(alpha=0.7)
        conn = connect(server, Role.ACTOR)
        ack = conn.session
        assert ack.server_mode == ServerMode.B_COLOCATED_REPLAY
        assert ack.state_dim == STATE_DIM
        assert ack.action_count == ACTION_COUNT
        assert ack.capacity == 256
        assert ack.alpha == 0.7
        conn.close()

    def test_dimension_mismatch_is_rejected(self, server_factory):
        server = server_factory()
        with pytest.raises(ServerReplyError) as info:
            Connection(server.address, Role.ACTOR, STATE_DIM + 1, ACTION_COUNT)
        assert info.value.code == ErrorCode.PROTOCOL

    def test_message_before_hello_closes_connection(self, server_factory):
        server = server_factory()
        sock = socket.create_connection(server.address, timeout=5.0)
        sock.sendall(wire.encode(wire.SampleReq(1)))
        decoder = wire.StreamDecoder()
        while (reply := decoder.next_message()) is None:
            decoder.feed(sock.recv(4096))
        assert isinstance(reply, wire.Error)
        assert reply.code == ErrorCode.PROTOCOL
        assert sock.recv(4096) == b""  # server closed it
        sock.close()


class TestPush:
    def test_push_and_conservation(self, server_factory):
        server = server_factory()
        conn = connect(server, Role.ACTOR)
        rng = np.random.default_rng(0)
        ack = push_batch(conn, 200, rng)
        assert ack.accepted == 200
        wait_for(lambda: server.stats.get("experiences_added") == 200)
        assert server.stats.get("experiences_pushed") == 200
        conn.close()

    def test_empty_push_is_a_noop(self, server_factory):
        server = server_factory()
        conn = connect(server, Role.ACTOR)
        reply = conn.request(wire.PushExperiences((), ()))[0]
        assert reply.accepted == 0
        assert server.stats.get("experiences_pushed") == 0
        conn.close()

    def test_push_from_learner_forbidden(self, server_factory):
        server = server_factory()
        conn = connect(server, Role.LEARNER)
        rng = np.random.default_rng(1)
        with pytest.raises(ForbiddenError):
            push_batch(conn, 1, rng)
        # connection survives a FORBIDDEN reply
        conn.request(wire.StatsReq())
        conn.close()

    def test_backpressure_when_ingress_queue_full(self, server_factory):
        server = server_factory(queue_batches=3)
        conn = connect(server, Role.ACTOR)
        rng = np.random.default_rng(2)
        server.replay_gate.clear()  # stall the replay thread
        try:
            # one batch may be parked inside the stalled replay thread, so
            # keep pushing until the queue itself reports full
            pushed = 0
            for _ in range(6):
                try:
                    push_batch(conn, 10, rng)
                    pushed += 1
                except BackpressureError:
                    break
            else:
                pytest.fail("queue never filled")
            added_before = server.stats.get("experiences_added")
            with pytest.raises(BackpressureError):
                push_batch(conn, 10, rng)
            assert server.stats.get("experiences_rejected") >= 10
        finally:
            server.replay_gate.set()
        wait_for(lambda: server.stats.get("experiences_added") == pushed * 10)
        # conservation: pushed == added + rejected
        assert (server.stats.get("experiences_pushed")
                == server.stats.get("experiences_added")
                + server.stats.get("experiences_rejected"))
        conn.close()

    def test_out_of_range_action_closes_connection(self, server_factory):
        server = server_factory()
        conn = connect(server, Role.ACTOR)
        bad = Experience(np.zeros(STATE_DIM, np.float32), ACTION_COUNT + 3, 0.0,
                         np.zeros(STATE_DIM, np.float32))
        with pytest.raises(ServerReplyError) as info:
            conn.request(wire.PushExperiences((bad,), (1.0,)))
        assert info.value.code == ErrorCode.MALFORMED

    def test_single_actor_pushes_stay_fifo(self, server_factory):
        server = server_factory()
        conn = connect(server, Role.ACTOR)
        for tag in range(30):
            exp = Experience(np.full(STATE_DIM, float(tag), np.float32), 0, float(tag),
                             np.zeros(STATE_DIM, np.float32))
            conn.request(wire.PushExperiences((exp,), (1.0,)))
        wait_for(lambda: server.stats.get("experiences_added") == 30)
        stored = [server.tree.slots[i].reward for i in range(30)]
        assert stored == [float(tag) for tag in range(30)]
        conn.close()


class TestSampleAndUpdate:
    def test_sample_on_empty_tree_not_ready(self, server_factory):
        server = server_factory()
        conn = connect(server, Role.LEARNER)
        with pytest.raises(NotReadyError):
            conn.request(wire.SampleReq(4))
        conn.close()

    def test_sample_wrong_mode(self, server_factory):
        server = server_factory(mode=ServerMode.A_SHARED_MEMORY)
        conn = connect(server, Role.LEARNER)
        with pytest.raises(WrongModeError):
            conn.request(wire.SampleReq(4))
        conn.close()

    def test_sample_from_actor_forbidden(self, server_factory):
        server = server_factory()
        conn = connect(server, Role.ACTOR)
        with pytest.raises(ForbiddenError):
            conn.request(wire.SampleReq(4))
        conn.close()

    def test_sample_single_live_experience_duplicates(self, server_factory):
        server = server_factory()
        actor = connect(server, Role.ACTOR)
        learner = connect(server, Role.LEARNER)
        rng = np.random.default_rng(3)
        push_batch(actor, 1, rng)
        wait_for(lambda: server.stats.get("experiences_added") == 1)
        resp = learner.request(wire.SampleReq(32))[0]
        assert len(resp.slot_ids) == 32
        assert all(i == resp.slot_ids[0] for i in resp.slot_ids)
        assert all(p == 1.0 for p in resp.probabilities)
        actor.close(); learner.close()

    def test_update_fresh_ids_applies_all(self, server_factory):
        server = server_factory()
        actor = connect(server, Role.ACTOR)
        learner = connect(server, Role.LEARNER)
        rng = np.random.default_rng(4)
        push_batch(actor, 50, rng)
        wait_for(lambda: server.stats.get("experiences_added") == 50)
        resp = learner.request(wire.SampleReq(16))[0]
        ack = learner.request(wire.UpdatePriorities(resp.slot_ids, (0.5,) * 16))[0]
        assert (ack.applied, ack.stale) == (16, 0)
        actor.close(); learner.close()

    def test_update_after_wraparound_is_stale(self, server_factory):
        server = server_factory(capacity=16)
        actor = connect(server, Role.ACTOR)
        learner = connect(server, Role.LEARNER)
        rng = np.random.default_rng(5)
        push_batch(actor, 16, rng)
        wait_for(lambda: server.stats.get("experiences_added") == 16)
        resp = learner.request(wire.SampleReq(1))[0]
        push_batch(actor, 17, rng)  # overwrites every slot at least once
        wait_for(lambda: server.stats.get("experiences_added") == 33)
        ack = learner.request(wire.UpdatePriorities(resp.slot_ids, (0.5,)))[0]
        assert (ack.applied, ack.stale) == (0, 1)
        actor.close(); learner.close()

    def test_empty_update_list(self, server_factory):
        server = server_factory()
        learner = connect(server, Role.LEARNER)
        ack = learner.request(wire.UpdatePriorities((), ()))[0]
        assert (ack.applied, ack.stale) == (0, 0)
        learner.close()


class TestParameters:
    def test_pull_before_any_set(self, server_factory):
        server = server_factory()
        conn = connect(server, Role.ACTOR)
        blob = conn.request(wire.PullParams(0))[0]
        assert (blob.param_version, blob.blob) == (0, b"")
        conn.close()

    def test_set_then_pull_round_trip(self, server_factory):
        server = server_factory()
        learner = connect(server, Role.LEARNER)
        actor = connect(server, Role.ACTOR)
        payload = b"\x42" * (1 << 16)
        ack = learner.request(wire.SetParams(1, payload))[0]
        assert ack.param_version == 1
        blob = actor.request(wire.PullParams(0))[0]
        assert blob.param_version == 1
        assert blob.blob == payload
        learner.close(); actor.close()

    def test_last_writer_wins(self, server_factory):
        server = server_factory()
        learner = connect(server, Role.LEARNER)
        learner.request(wire.SetParams(0, b"first"))
        learner.request(wire.SetParams(0, b"second"))
        blob = learner.request(wire.PullParams(0))[0]
        assert (blob.param_version, blob.blob) == (2, b"second")
        learner.close()

    def test_version_gated_pull(self, server_factory):
        server = server_factory()
        learner = connect(server, Role.LEARNER)
        learner.request(wire.SetParams(0, b"v1"))
        not_newer = learner.request(wire.PullParams(1))[0]
        assert (not_newer.param_version, not_newer.blob) == (1, b"")
        newer = learner.request(wire.PullParams(0))[0]
        assert newer.blob == b"v1"
        learner.close()

    def test_set_from_actor_forbidden(self, server_factory):
        server = server_factory()
        actor = connect(server, Role.ACTOR)
        with pytest.raises(ForbiddenError):
            actor.request(wire.SetParams(0, b"nope"))
        actor.close()

    def test_no_torn_reads_under_concurrent_sets(self, server_factory):
        server = server_factory()
        blobs = [bytes([i]) * 65536 for i in range(8)]
        digests = {hashlib.sha256(b).hexdigest() for b in blobs} | {hashlib.sha256(b"").hexdigest()}
        stop = threading.Event()
        failures = []

        def setter():
            learner = connect(server, Role.LEARNER)
            for blob in blobs:
                learner.request(wire.SetParams(0, blob))
                time.sleep(0.002)
            learner.close()
            stop.set()

        def puller():
            conn = connect(server, Role.ACTOR)
            while not stop.is_set():
                reply = conn.request(wire.PullParams(0))[0]
                if hashlib.sha256(reply.blob).hexdigest() not in digests:
                    failures.append(reply.param_version)
            conn.close()

        pullers = [threading.Thread(target=puller) for _ in range(4)]
        for t in pullers:
            t.start()
        setter_thread = threading.Thread(target=setter)
        setter_thread.start()
        setter_thread.join()
        for t in pullers:
            t.join()
        assert failures == []


class TestPullExperiences:
    def test_drain_all(self, server_factory):
        server = server_factory(mode=ServerMode.A_SHARED_MEMORY)
        actor = connect(server, Role.ACTOR)
        puller = connect(server, Role.REPLAY_PULLER)
        rng = np.random.default_rng(6)
        push_batch(actor, 40, rng)
        blob = puller.request(wire.PullExperiences(1000))[0]
        assert len(blob.experiences) == 40
        assert len(blob.priorities) == 40
        again = puller.request(wire.PullExperiences(1000))[0]
        assert len(again.experiences) == 0
        assert server.stats.get("experiences_drained") == 40
        actor.close(); puller.close()

    def test_partial_drain_preserves_fifo(self, server_factory):
        server = server_factory(mode=ServerMode.A_SHARED_MEMORY)
        actor = connect(server, Role.ACTOR)
        puller = connect(server, Role.REPLAY_PULLER)
        for tag in range(10):
            exp = Experience(np.zeros(STATE_DIM, np.float32), 0, float(tag),
                             np.zeros(STATE_DIM, np.float32))
            actor.request(wire.PushExperiences((exp,), (1.0,)))
        first = puller.request(wire.PullExperiences(4))[0]
        second = puller.request(wire.PullExperiences(100))[0]
        rewards = [e.reward for e in first.experiences] + [e.reward for e in second.experiences]
        assert rewards == [float(tag) for tag in range(10)]
        actor.close(); puller.close()

    def test_wrong_mode(self, server_factory):
        server = server_factory(mode=ServerMode.B_COLOCATED_REPLAY)
        puller = connect(server, Role.REPLAY_PULLER)
        with pytest.raises(WrongModeError):
            puller.request(wire.PullExperiences(10))
        puller.close()

    def test_racing_pullers_get_disjoint_experiences(self, server_factory):
        server = server_factory(mode=ServerMode.A_SHARED_MEMORY)
        actor = connect(server, Role.ACTOR)
        total = 600
        for tag in range(total):
            exp = Experience(np.zeros(STATE_DIM, np.float32), 0, float(tag),
                             np.zeros(STATE_DIM, np.float32))
            actor.request(wire.PushExperiences((exp,), (1.0,)))
        received: list[list[float]] = [[], []]

        def drain(idx):
            conn = connect(server, Role.REPLAY_PULLER)
            while True:
                blob = conn.request(wire.PullExperiences(7))[0]
                if not blob.experiences:
                    break
                received[idx].extend(e.reward for e in blob.experiences)
            conn.close()

        threads = [threading.Thread(target=drain, args=(i,)) for i in range(2)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        merged = received[0] + received[1]
        assert len(merged) == total
        assert sorted(merged) == [float(tag) for tag in range(total)]
        actor.close()


class TestConnectionIsolation:
    def test_garbage_closes_only_that_connection(self, server_factory):
        server = server_factory()
        good = connect(server, Role.ACTOR)
        bad = socket.create_connection(server.address, timeout=5.0)
        bad.sendall(b"NOT A FRAME AT ALL!!")
        decoder = wire.StreamDecoder()
        while (reply := decoder.next_message()) is None:
            decoder.feed(bad.recv(4096))
        assert isinstance(reply, wire.Error)
        assert bad.recv(4096) == b""
        bad.close()
        # the good connection still works
        rng = np.random.default_rng(7)
        assert push_batch(good, 3, rng).accepted == 3
        good.close()

    def test_stats_over_the_wire(self, server_factory):
        server = server_factory()
        conn = connect(server, Role.ACTOR)
        rng = np.random.default_rng(8)
        push_batch(conn, 5, rng)
        wait_for(lambda: server.stats.get("experiences_added") == 5)
        stats = conn.request(wire.StatsReq())[0].as_dict()
        assert stats["experiences_pushed"] == 5
        assert stats["experiences_added"] == 5
        assert stats["bytes_in"] > 0
        assert stats["bytes_out"] > 0
        conn.close()
