#!/usr/bin/env python3
"""Regenerate the golden frame corpus shared with the standalone client.

Every message type appears at least twice (typical + edge case). Each entry
carries the constructor fields and the exact frame bytes, so an independent
codec can both re-encode the fields (bytes must match) and re-decode the
bytes (fields must match). float32 payload values are normalized to their
exact float32-representable doubles before they enter the corpus.

Usage: python scripts/gen_golden_frames.py [OUT.json]
Default output: client/tests/fixtures/golden_frames.json
"""

import json
import pathlib
import sys

import numpy as np

from replaynet import protocol as wire
from replaynet.core import Experience

STATE_DIM = 3


def f32(values):
    return [float(np.float32(v)) for v in values]


def experience_fields(rng, tag):
    return {
        "state": f32(rng.uniform(-5, 5, STATE_DIM)),
        "action": int(rng.integers(0, 4)),
        "reward": f32([rng.uniform(-1, 1)])[0],
        "next_state": f32(rng.uniform(-5, 5, STATE_DIM)),
    }


def to_experience(fields):
    return Experience(np.array(fields["state"], dtype=np.float32),
                      fields["action"], fields["reward"],
                      np.array(fields["next_state"], dtype=np.float32))


def build_corpus():
    rng = np.random.default_rng(20240)
    exp_fields = [experience_fields(rng, i) for i in range(4)]
    priorities = [1e-6, 0.25, 7.5, 123.456]
    entries = []

    def add(name, type_name, fields, message):
        entries.append({
            "name": name,
            "type": type_name,
            "fields": fields,
            "hex": wire.encode(message).hex(),
        })

    add("hello_actor", "HELLO",
        {"role": 1, "client_id": 7, "state_dim": STATE_DIM, "action_count": 4,
         "proto_flags": 0},
        wire.Hello(1, 7, STATE_DIM, 4, 0))
    add("hello_puller_max_id", "HELLO",
        {"role": 3, "client_id": 4294967295, "state_dim": STATE_DIM,
         "action_count": 18, "proto_flags": 0},
        wire.Hello(3, 4294967295, STATE_DIM, 18, 0))
    add("hello_ack_mode_b", "HELLO_ACK",
        {"session_id": 12, "server_mode": 2, "state_dim": STATE_DIM,
         "action_count": 4, "capacity": 65536, "alpha": 0.6, "p_min": 1e-6},
        wire.HelloAck(12, 2, STATE_DIM, 4, 65536, 0.6, 1e-6))
    add("hello_ack_mode_a", "HELLO_ACK",
        {"session_id": 1, "server_mode": 1, "state_dim": STATE_DIM,
         "action_count": 4, "capacity": 1, "alpha": 0.0, "p_min": 0.5},
        wire.HelloAck(1, 1, STATE_DIM, 4, 1, 0.0, 0.5))

    add("push_two_records", "PUSH_EXPERIENCES",
        {"experiences": exp_fields[:2], "priorities": priorities[:2]},
        wire.PushExperiences(tuple(to_experience(f) for f in exp_fields[:2]),
                             tuple(priorities[:2])))
    add("push_empty", "PUSH_EXPERIENCES",
        {"experiences": [], "priorities": []},
        wire.PushExperiences((), ()))
    add("push_ack", "PUSH_ACK", {"accepted": 200, "queue_depth": 3},
        wire.PushAck(200, 3))
    add("push_ack_zero", "PUSH_ACK", {"accepted": 0, "queue_depth": 0},
        wire.PushAck(0, 0))

    blob = bytes(range(48))
    add("set_params", "SET_PARAMS",
        {"param_version": 9, "blob": blob.hex()},
        wire.SetParams(9, blob))
    add("set_params_empty", "SET_PARAMS",
        {"param_version": 0, "blob": ""},
        wire.SetParams(0, b""))
    add("set_ack", "SET_ACK", {"param_version": 10}, wire.SetAck(10))
    add("pull_params_any", "PULL_PARAMS", {"min_version": 0}, wire.PullParams(0))
    add("pull_params_gated", "PULL_PARAMS", {"min_version": 41}, wire.PullParams(41))
    add("params_blob", "PARAMS_BLOB",
        {"param_version": 41, "blob": blob.hex()},
        wire.ParamsBlob(41, blob))
    add("params_blob_not_newer", "PARAMS_BLOB",
        {"param_version": 41, "blob": ""},
        wire.ParamsBlob(41, b""))

    add("sample_req", "SAMPLE_REQ", {"batch_size": 512}, wire.SampleReq(512))
    add("sample_resp_two_records", "SAMPLE_RESP",
        {"slot_ids": [named := 65536 + 5, 2], "probabilities": [0.125, 0.875],
         "experiences": exp_fields[2:4]},
        wire.SampleResp((named, 2), (0.125, 0.875),
                        tuple(to_experience(f) for f in exp_fields[2:4])))
    add("sample_resp_empty", "SAMPLE_RESP",
        {"slot_ids": [], "probabilities": [], "experiences": []},
        wire.SampleResp((), (), ()))

    add("update_priorities", "UPDATE_PRIORITIES",
        {"slot_ids": [0, 131072, 7], "priorities": priorities[:3]},
        wire.UpdatePriorities((0, 131072, 7), tuple(priorities[:3])))
    add("update_priorities_empty", "UPDATE_PRIORITIES",
        {"slot_ids": [], "priorities": []},
        wire.UpdatePriorities((), ()))
    add("update_ack", "UPDATE_ACK", {"applied": 510, "stale": 2},
        wire.UpdateAck(510, 2))

    add("pull_experiences", "PULL_EXPERIENCES", {"max_count": 1000},
        wire.PullExperiences(1000))
    add("experiences_blob", "EXPERIENCES_BLOB",
        {"experiences": exp_fields[:3], "priorities": priorities[:3]},
        wire.ExperiencesBlob(tuple(to_experience(f) for f in exp_fields[:3]),
                             tuple(priorities[:3])))
    add("experiences_blob_empty", "EXPERIENCES_BLOB",
        {"experiences": [], "priorities": []},
        wire.ExperiencesBlob((), ()))

    add("stats_req", "STATS_REQ", {}, wire.StatsReq())
    add("stats_resp", "STATS_RESP",
        {"counters": [["experiences_pushed", 40000], ["bytes_in", 2**40],
                      ["queue_depth", 0]]},
        wire.StatsResp((("experiences_pushed", 40000), ("bytes_in", 2**40),
                        ("queue_depth", 0))))
    add("stats_resp_empty", "STATS_RESP", {"counters": []}, wire.StatsResp(()))

    add("error_backpressure", "ERROR", {"code": 3, "detail": "ingress queue full"},
        wire.Error(3, "ingress queue full"))
    add("error_unicode_detail", "ERROR", {"code": 5, "detail": "空 — not ready"},
        wire.Error(5, "空 — not ready"))
    add("error_empty_detail", "ERROR", {"code": 7, "detail": ""}, wire.Error(7, ""))

    return {"state_dim": STATE_DIM, "frames": entries}


def main():
    default = pathlib.Path(__file__).resolve().parent.parent / (
        "client/tests/fixtures/golden_frames.json")
    out = pathlib.Path(sys.argv[1]) if len(sys.argv) > 1 else default
    corpus = build_corpus()
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(corpus, indent=1, ensure_ascii=False) + "\n")
    print(f"wrote {len(corpus['frames'])} frames to {out}")


if __name__ == "__main__":
    main()
