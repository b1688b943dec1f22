"""
Client side of the offload path: classify_remote for single requests and a
RemoteServer predictor that plugs a live server into a cascade policy.
"""

import logging
import socket
import threading
from dataclasses import replace
from typing import Optional

import numpy as np

from config.settings import get_config, parse_address
from core.exceptions import ConfigurationError, ProtocolError, RemoteConnectionError, RemoteTimeoutError
from utils.prometheus_exporter import track_offload

from cascade.engine import RoutingTally, evaluate
from cascade.policy import CascadePolicy, CascadeSample, as_samples
from service.protocol import (
    ClassifyRequest,
    ClassifyResponse,
    ErrorResponse,
    encode_message,
    parse_message,
    read_frame,
)

logger = logging.getLogger(__name__)


def _connect(endpoint: str, timeout_s: float) -> socket.socket:
    host, port = parse_address(endpoint)
    try:
        sock = socket.create_connection((host, port), timeout=timeout_s)
    except socket.timeout as e:
        raise RemoteTimeoutError(f"connecting to {endpoint} timed out after {timeout_s:.3f}s") from e
    except OSError as e:
        raise RemoteConnectionError(f"cannot connect to {endpoint}: {e}") from e
    sock.settimeout(timeout_s)
    return sock


def _exchange(sock: socket.socket, endpoint: str, request: ClassifyRequest, timeout_s: float) -> ClassifyResponse:
    try:
        sock.sendall(encode_message(request))
        message = parse_message(read_frame(sock))
    except socket.timeout as e:
        raise RemoteTimeoutError(
            f"no answer from {endpoint} for {request.sample_id!r} within {timeout_s:.3f}s"
        ) from e
    except ProtocolError:
        raise
    except OSError as e:
        raise RemoteConnectionError(f"connection to {endpoint} failed: {e}") from e
    if isinstance(message, ErrorResponse):
        raise ProtocolError(f"server rejected {request.sample_id!r}: {message.message}", code=message.code)
    if not isinstance(message, ClassifyResponse):
        raise ProtocolError(f"unexpected {message.type!r} message from {endpoint}")
    if message.sample_id != request.sample_id:
        raise ProtocolError(
            f"response id {message.sample_id!r} does not echo request id {request.sample_id!r}", code="id_mismatch"
        )
    return message


def classify_remote(endpoint: str, request: ClassifyRequest, timeout_s: Optional[float] = None) -> ClassifyResponse:
    """
    One request on a fresh connection. Raises RemoteTimeoutError,
    RemoteConnectionError or ProtocolError; never invents a prediction.
    """
    timeout_s = timeout_s or get_config().service.timeout_ms / 1000.0
    sock = _connect(endpoint, timeout_s)
    try:
        return _exchange(sock, endpoint, request, timeout_s)
    finally:
        sock.close()


class RemoteClient:
    """Keeps one connection open and reconnects after a failure"""

    def __init__(self, endpoint: str, timeout_s: Optional[float] = None):
        self.endpoint = endpoint
        self.timeout_s = timeout_s or get_config().service.timeout_ms / 1000.0
        self._sock: Optional[socket.socket] = None
        self._lock = threading.Lock()

    def _drop(self):
        if self._sock is not None:
            self._sock.close()
            self._sock = None

    def classify(self, request: ClassifyRequest) -> ClassifyResponse:
        with self._lock:
            reused = self._sock is not None
            if self._sock is None:
                self._sock = _connect(self.endpoint, self.timeout_s)
            try:
                return _exchange(self._sock, self.endpoint, request, self.timeout_s)
            except (RemoteConnectionError, ProtocolError) as e:
                self._drop()
                # a kept-alive socket may have been closed by the server in between
                if reused and getattr(e, 'code', None) in (None, 'closed'):
                    self._sock = _connect(self.endpoint, self.timeout_s)
                    try:
                        return _exchange(self._sock, self.endpoint, request, self.timeout_s)
                    except Exception:
                        self._drop()
                        raise
                raise
            except Exception:
                self._drop()
                raise

    def close(self):
        with self._lock:
            self._drop()


class RemoteServer:
    """Cascade server predictor backed by a running offload server"""

    def __init__(self, endpoint: str, timeout_s: Optional[float] = None, replay_mode: bool = False):
        self.client = RemoteClient(endpoint, timeout_s)
        self.replay_mode = replay_mode

    @property
    def endpoint(self) -> str:
        return self.client.endpoint

    def probs(self, sample: CascadeSample) -> np.ndarray:
        features = None if self.replay_mode else sample.features().tolist()
        request = ClassifyRequest(sample_id=sample.sample_id, features=features)
        try:
            response = self.client.classify(request)
        except RemoteTimeoutError:
            track_offload('timeout')
            raise
        except RemoteConnectionError:
            track_offload('connection')
            raise
        except ProtocolError:
            track_offload('protocol')
            raise
        track_offload('ok')
        return np.asarray(response.probs, dtype=np.float64)

    def close(self):
        self.client.close()


def bind_remote(policy: CascadePolicy, endpoint: Optional[str] = None,
                timeout_s: Optional[float] = None, replay_mode: bool = False) -> CascadePolicy:
    """Same policy with its server predictor replaced by a remote endpoint"""
    endpoint = endpoint or get_config().service.address
    timeout_s = timeout_s or policy.server.timeout_s
    server = replace(policy.server, predictor=RemoteServer(endpoint, timeout_s, replay_mode), timeout_s=timeout_s)
    return policy.with_server(server)


def run_cascade_remote(policy: CascadePolicy, data, show_progress: bool = False) -> RoutingTally:
    """Evaluate a policy whose server binding is a remote endpoint"""
    predictor = policy.server.predictor
    if not isinstance(predictor, RemoteServer):
        raise ConfigurationError("run_cascade_remote needs a policy bound to a remote server")
    samples = as_samples(data)
    logger.info(f"Running cascade on {len(samples)} samples against {predictor.endpoint}")
    tally = evaluate(policy, samples, show_progress=show_progress)
    if tally.fallbacks or tally.failed:
        logger.warning(
            f"server unavailable for {tally.fallbacks + tally.failed} offloads "
            f"({tally.fallbacks} answered locally, {tally.failed} failed)"
        )
    return tally
