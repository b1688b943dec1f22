"""
Wire format of the offload service.

Every message is one frame:

    magic   2 bytes   b"SA"
    version 1 byte    0x01
    length  4 bytes   big-endian unsigned payload length
    payload           UTF-8 JSON document (one of the message models below)
"""

import asyncio
import json
import logging
import socket
import struct
from typing import List, Literal, Optional, Union

from pydantic import BaseModel, Field, TypeAdapter, ValidationError

from config.settings import get_config
from core.exceptions import ProtocolError

logger = logging.getLogger(__name__)

MAGIC = b"SA"
VERSION = 0x01
HEADER = struct.Struct(">2sBI")
HEADER_SIZE = HEADER.size


class ClassifyRequest(BaseModel):
    """Sample to classify: a feature vector, or only an id in replay mode"""
    type: Literal["classify"] = "classify"
    sample_id: str
    features: Optional[List[float]] = Field(None, description="Client-side input vector")


class ClassifyResponse(BaseModel):
    """Server probabilities for one sample"""
    type: Literal["result"] = "result"
    sample_id: str
    probs: List[float]
    model_id: str


class ErrorResponse(BaseModel):
    type: Literal["error"] = "error"
    sample_id: Optional[str] = None
    code: str
    message: str


Message = Union[ClassifyRequest, ClassifyResponse, ErrorResponse]
_MESSAGE = TypeAdapter(Message)


def _max_payload(max_payload: Optional[int]) -> int:
    return get_config().service.max_payload_bytes if max_payload is None else max_payload


def encode_frame(payload: bytes) -> bytes:
    return HEADER.pack(MAGIC, VERSION, len(payload)) + payload


def decode_header(header: bytes, max_payload: Optional[int] = None) -> int:
    """Validate a frame header and return the payload length"""
    if len(header) != HEADER_SIZE:
        raise ProtocolError(f"truncated header ({len(header)} of {HEADER_SIZE} bytes)")
    magic, version, length = HEADER.unpack(header)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic bytes {magic!r}")
    if version != VERSION:
        raise ProtocolError(f"unsupported protocol version {version}")
    if length > _max_payload(max_payload):
        raise ProtocolError(f"payload of {length} bytes is too large")
    return length


def decode_frame(data: bytes, max_payload: Optional[int] = None) -> bytes:
    """Payload of a buffer holding exactly one frame"""
    length = decode_header(bytes(data[:HEADER_SIZE]), max_payload)
    payload = bytes(data[HEADER_SIZE:])
    if len(payload) != length:
        raise ProtocolError(f"frame declares {length} payload bytes but carries {len(payload)}")
    return payload


def encode_message(message: BaseModel) -> bytes:
    # float reprs must round-trip exactly
    return encode_frame(json.dumps(message.model_dump(mode='json')).encode('utf-8'))


def parse_message(payload: bytes) -> Message:
    try:
        document = json.loads(payload.decode('utf-8'))
    except (ValueError, RecursionError) as e:
        # ValueError covers bad UTF-8 and bad JSON; RecursionError covers pathological nesting
        raise ProtocolError(f"payload is not UTF-8 JSON ({type(e).__name__})") from e
    try:
        return _MESSAGE.validate_python(document)
    except ValidationError as e:
        raise ProtocolError(f"payload is not a known message ({e.error_count()} validation errors)",
                            code="bad_request") from e


def _recv_exactly(sock: socket.socket, size: int) -> bytes:
    chunks = []
    remaining = size
    while remaining > 0:
        chunk = sock.recv(remaining)
        if not chunk:
            raise ProtocolError(f"connection closed with {remaining} bytes outstanding", code="closed")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b''.join(chunks)


def read_frame(sock: socket.socket, max_payload: Optional[int] = None) -> bytes:
    """Blocking read of one frame's payload"""
    length = decode_header(_recv_exactly(sock, HEADER_SIZE), max_payload)
    return _recv_exactly(sock, length)


async def read_frame_async(reader: asyncio.StreamReader, max_payload: Optional[int] = None) -> Optional[bytes]:
    """One frame's payload, or None on a clean end of stream between frames"""
    try:
        header = await reader.readexactly(HEADER_SIZE)
    except asyncio.IncompleteReadError as e:
        if not e.partial:
            return None
        raise ProtocolError(f"truncated header ({len(e.partial)} of {HEADER_SIZE} bytes)") from e
    length = decode_header(header, max_payload)
    try:
        return await reader.readexactly(length)
    except asyncio.IncompleteReadError as e:
        raise ProtocolError(f"truncated payload ({len(e.partial)} of {length} bytes)") from e
