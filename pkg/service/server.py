"""
Offload server: hosts the server-side model (or a replay table) and answers
one ClassifyRequest per frame over any number of concurrent connections.
"""

import asyncio
import logging
import threading
import time
from dataclasses import dataclass
from typing import Dict, Iterable, Optional, Tuple, Union

import numpy as np

from config.settings import get_config, parse_address
from core.exceptions import CascadeSplitError, DataError, NetworkError, ProtocolError
from dataio.replay import ReplayRow
from nn import functional as F
from nn.model import MlpModel, forward
from utils.prometheus_exporter import SERVER_LATENCY, SERVER_REQUESTS

from service.protocol import (
    ClassifyRequest,
    ClassifyResponse,
    ErrorResponse,
    encode_message,
    parse_message,
    read_frame_async,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ModelHost:
    """Server model evaluated on the request's feature vector"""
    model: MlpModel
    model_id: str = "server"

    def classify(self, request: ClassifyRequest) -> np.ndarray:
        if request.features is None:
            raise DataError(f"request {request.sample_id!r} carries no features")
        x = np.asarray(request.features, dtype=np.float64)
        if x.shape != (self.model.input_dim,):
            raise DataError(f"request {request.sample_id!r}: expected {self.model.input_dim} features, got {x.shape}")
        return F.softmax_t(forward(self.model, x), 1.0)


class ReplayHost:
    """Answers from the server column of a replay table, keyed by sample id"""

    def __init__(self, rows: Iterable[ReplayRow], model_id: str = "server-replay"):
        self.model_id = model_id
        self._rows: Dict[str, ReplayRow] = {}
        for row in rows:
            row.column('server')
            self._rows[row.sample_id] = row

    def __len__(self) -> int:
        return len(self._rows)

    def classify(self, request: ClassifyRequest) -> np.ndarray:
        row = self._rows.get(request.sample_id)
        if row is None:
            raise DataError(f"unknown sample id {request.sample_id!r}")
        return F.softmax_t(row.server, 1.0)


HostBinding = Union[ModelHost, ReplayHost]


class InferenceServer:
    """asyncio stream server around a host binding"""

    def __init__(self, binding: HostBinding, address: Optional[str] = None,
                 response_delay_ms: float = 0.0, max_payload: Optional[int] = None):
        self.binding = binding
        self.address = address or get_config().service.address
        self.response_delay_ms = response_delay_ms
        self.max_payload = max_payload or get_config().service.max_payload_bytes
        self._server: Optional[asyncio.AbstractServer] = None
        self._writers = set()
        self._bound: Optional[Tuple[str, int]] = None

    @property
    def bound_address(self) -> Tuple[str, int]:
        if self._bound is None:
            raise NetworkError("server is not listening")
        return self._bound

    async def start(self) -> Tuple[str, int]:
        host, port = parse_address(self.address)
        try:
            self._server = await asyncio.start_server(self._handle_connection, host, port)
        except OSError as e:
            raise NetworkError(f"cannot bind {self.address}: {e}") from e
        host, port = self._server.sockets[0].getsockname()[:2]
        self._bound = (host, port)
        logger.info(f"Serving {self.binding.model_id} on {self.bound_address[0]}:{self.bound_address[1]}")
        return self.bound_address

    async def serve_forever(self):
        await self.start()
        try:
            await self._server.serve_forever()
        finally:
            await self.close()

    async def close(self):
        if self._server is not None:
            self._server.close()
            for writer in list(self._writers):
                writer.close()
            await asyncio.wait_for(self._server.wait_closed(), timeout=5)
            logger.info("Server stopped")

    def answer(self, request: ClassifyRequest):
        """Response model for one request"""
        try:
            probs = self.binding.classify(request)
        except DataError as e:
            SERVER_REQUESTS.labels(status='rejected').inc()
            return ErrorResponse(sample_id=request.sample_id, code='bad_request', message=str(e))
        except CascadeSplitError as e:
            logger.error(f"request {request.sample_id}: {e}")
            SERVER_REQUESTS.labels(status='error').inc()
            return ErrorResponse(sample_id=request.sample_id, code=e.category, message=str(e))
        SERVER_REQUESTS.labels(status='ok').inc()
        return ClassifyResponse(sample_id=request.sample_id, probs=probs.tolist(), model_id=self.binding.model_id)

    async def _handle_connection(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        peer = writer.get_extra_info('peername')
        logger.debug(f"connection from {peer}")
        self._writers.add(writer)
        try:
            while True:
                try:
                    payload = await read_frame_async(reader, self.max_payload)
                    if payload is None:
                        break
                    started = time.perf_counter()
                    message = parse_message(payload)
                    if not isinstance(message, ClassifyRequest):
                        raise ProtocolError(f"expected a classify request, got {message.type!r}", code="bad_request")
                except ProtocolError as e:
                    logger.warning(f"closing connection from {peer}: {e}")
                    SERVER_REQUESTS.labels(status='protocol_error').inc()
                    writer.write(encode_message(ErrorResponse(code=e.code, message=str(e))))
                    await writer.drain()
                    break

                response = self.answer(message)
                if self.response_delay_ms > 0:
                    await asyncio.sleep(self.response_delay_ms / 1000.0)
                writer.write(encode_message(response))
                await writer.drain()
                SERVER_LATENCY.observe(time.perf_counter() - started)
        except ConnectionError:
            logger.debug(f"connection from {peer} dropped")
        finally:
            self._writers.discard(writer)
            writer.close()
            try:
                await writer.wait_closed()
            except ConnectionError:
                pass


class ServerHandle:
    """Runs an InferenceServer on its own event loop in a background thread"""

    def __init__(self, server: InferenceServer):
        self.server = server
        self._loop = asyncio.new_event_loop()
        self._thread = threading.Thread(target=self._run, name="cascadesplit-server", daemon=True)
        self._ready = threading.Event()
        self._error: Optional[BaseException] = None

    def _run(self):
        asyncio.set_event_loop(self._loop)
        try:
            self._loop.run_until_complete(self.server.start())
        except BaseException as e:
            self._error = e
            self._ready.set()
            return
        self._ready.set()
        self._loop.run_forever()
        self._loop.run_until_complete(self.server.close())
        self._loop.close()

    def start(self) -> "ServerHandle":
        self._thread.start()
        self._ready.wait()
        if self._error is not None:
            raise self._error
        return self

    @property
    def endpoint(self) -> str:
        host, port = self.server.bound_address
        return f"{host}:{port}"

    def stop(self):
        if self._thread.is_alive():
            self._loop.call_soon_threadsafe(self._loop.stop)
            self._thread.join(timeout=5)

    def __enter__(self) -> "ServerHandle":
        return self

    def __exit__(self, *exc):
        self.stop()


def serve(binding: HostBinding, address: Optional[str] = None, response_delay_ms: float = 0.0) -> ServerHandle:
    """Start serving in the background and return a handle"""
    return ServerHandle(InferenceServer(binding, address, response_delay_ms)).start()


async def serve_forever(binding: HostBinding, address: Optional[str] = None, response_delay_ms: float = 0.0):
    """Foreground server used by the CLI"""
    await InferenceServer(binding, address, response_delay_ms).serve_forever()
