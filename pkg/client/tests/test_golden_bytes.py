"""Golden-bytes equivalence against the server project's encoder.

The fixture corpus was emitted by the reference implementation; for every
frame this codec must (a) produce byte-identical output from the same fields
and (b) decode the reference bytes back to the same fields.
"""

import json
import pathlib

import pytest

from replaynet_client.protocol import NeedMoreData, ProtocolError, decode_frame, encode_message

CORPUS = json.loads(
    (pathlib.Path(__file__).parent / "fixtures/golden_frames.json").read_text())


def adapt(type_name, fields):
    """Fixture JSON carries blobs hex-encoded; the codec uses bytes."""
    if type_name in ("SET_PARAMS", "PARAMS_BLOB"):
        fields = dict(fields)
        fields["blob"] = bytes.fromhex(fields["blob"])
    if type_name == "STATS_RESP":
        fields = {"counters": [list(pair) for pair in fields["counters"]]}
    return fields


@pytest.mark.parametrize("entry", CORPUS["frames"], ids=lambda e: e["name"])
def test_encoder_is_byte_identical(entry):
    fields = adapt(entry["type"], entry["fields"])
    assert encode_message(entry["type"], fields).hex() == entry["hex"]


@pytest.mark.parametrize("entry", CORPUS["frames"], ids=lambda e: e["name"])
def test_decoder_accepts_reference_bytes(entry):
    frame = bytes.fromhex(entry["hex"])
    type_name, fields, consumed = decode_frame(frame, CORPUS["state_dim"])
    assert consumed == len(frame)
    assert type_name == entry["type"]
    assert fields == adapt(entry["type"], entry["fields"])


def test_corpus_covers_every_message_type():
    from replaynet_client.protocol import TYPE_CODES

    assert {e["type"] for e in CORPUS["frames"]} == set(TYPE_CODES)


def test_partial_frame_reports_needed_bytes():
    frame = bytes.fromhex(CORPUS["frames"][0]["hex"])
    with pytest.raises(NeedMoreData) as info:
        decode_frame(frame[:5])
    assert info.value.needed == 7
    with pytest.raises(NeedMoreData) as info:
        decode_frame(frame[:-2])
    assert info.value.needed == 2


def test_corrupt_magic_is_an_error():
    frame = bytearray(bytes.fromhex(CORPUS["frames"][0]["hex"]))
    frame[:4] = b"XXXX"
    with pytest.raises(ProtocolError):
        decode_frame(bytes(frame))


def test_concatenated_frames_decode_in_order():
    stream = b"".join(bytes.fromhex(e["hex"]) for e in CORPUS["frames"])
    offset = 0
    for entry in CORPUS["frames"]:
        type_name, _, consumed = decode_frame(stream[offset:], CORPUS["state_dim"])
        assert type_name == entry["type"]
        offset += consumed
    assert offset == len(stream)
