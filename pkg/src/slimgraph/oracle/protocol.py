"""Line-delimited external evaluator channel.

One UTF-8 JSON object per line over the evaluator's standard streams.
Message kinds: ``hello``/``ready`` (handshake, task arity and names),
``eval_request`` (request_id, sorted mask, dataset tag, optionally a
model file path when the graph changed), ``eval_response`` (request_id,
task to loss map), ``shutdown``. The channel is strictly serial: one
request in flight, responses matched by id. Model bytes always travel
by file path, never inline.
"""

from __future__ import annotations

import json
import os
import select
import subprocess
import time

from ..errors import EvaluatorTimeoutError, OracleError, ProtocolError
from ..graph.groups import ChannelGroup
from ..graph.model import ModelGraph
from ..graph.onnx_io import export_model_file, model_hash
from .data import TaskLossVector, TaskSpec

PROTOCOL_VERSION = 1
DEFAULT_TIMEOUT = 300.0


class _LineChannel:
    """Blocking-free line reader over a subprocess stdout pipe."""

    def __init__(self, stream):
        self._stream = stream
        self._fd = stream.fileno()
        self._buffer = b""

    def read_line(self, timeout: float) -> str:
        deadline = time.monotonic() + timeout
        while True:
            newline = self._buffer.find(b"\n")
            if newline >= 0:
                line = self._buffer[:newline]
                self._buffer = self._buffer[newline + 1:]
                return line.decode("utf-8")
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise EvaluatorTimeoutError(
                    f"no evaluator response within {timeout:.0f}s"
                )
            ready, _, _ = select.select([self._fd], [], [], min(remaining, 1.0))
            if not ready:
                continue
            chunk = os.read(self._fd, 65536)
            if not chunk:
                raise ProtocolError("evaluator closed its output stream")
            self._buffer += chunk


class ExternalOracle:
    """Loss oracle backed by a separate evaluator process."""

    def __init__(
        self,
        command: list[str],
        task_specs: list[TaskSpec],
        dataset_tag: str,
        work_dir: str,
        timeout: float = DEFAULT_TIMEOUT,
    ):
        if not command:
            raise OracleError("empty evaluator command")
        self.task_specs = list(task_specs)
        self.dataset_tag = dataset_tag
        self.work_dir = work_dir
        self.timeout = timeout
        self._request_counter = 0
        self._model_counter = 0
        self._pending_model_path: str | None = None
        self._bound_hash: str | None = None

        os.makedirs(work_dir, exist_ok=True)
        self._proc = subprocess.Popen(
            command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=None,
        )
        self._channel = _LineChannel(self._proc.stdout)
        self._handshake()

    # -- wire helpers ----------------------------------------------------

    def _send(self, message: dict) -> None:
        if self._proc.poll() is not None:
            raise ProtocolError(
                f"evaluator exited with status {self._proc.returncode}"
            )
        line = json.dumps(message, sort_keys=True, allow_nan=False) + "\n"
        try:
            self._proc.stdin.write(line.encode("utf-8"))
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ProtocolError(f"evaluator pipe broken: {exc}") from exc

    def _receive(self) -> dict:
        line = self._channel.read_line(self.timeout)
        try:
            message = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"undecodable evaluator message: {line!r}") from exc
        if not isinstance(message, dict) or "kind" not in message:
            raise ProtocolError(f"malformed evaluator message: {line!r}")
        return message

    def _handshake(self) -> None:
        self._send({
            "kind": "hello",
            "protocol": PROTOCOL_VERSION,
            "tasks": [
                {"name": s.task_name, "loss": s.loss_kind, "output": s.head_output_id}
                for s in self.task_specs
            ],
        })
        reply = self._receive()
        if reply.get("kind") != "ready":
            raise ProtocolError(f"expected ready, got {reply.get('kind')!r}")
        names = reply.get("tasks")
        expected = [s.task_name for s in self.task_specs]
        if names != expected:
            raise ProtocolError(
                f"task mismatch: evaluator announced {names}, engine expects {expected}"
            )

    # -- oracle interface ------------------------------------------------

    def bind(self, g: ModelGraph, groups: list[ChannelGroup] | None) -> None:
        digest = model_hash(g)
        if digest == self._bound_hash:
            return
        path = os.path.join(self.work_dir, f"model_{self._model_counter:04d}.onnx")
        export_model_file(g, path)
        self._model_counter += 1
        self._pending_model_path = os.path.abspath(path)
        self._bound_hash = digest

    def evaluate(self, mask) -> TaskLossVector:
        self._request_counter += 1
        request_id = f"r{self._request_counter}"
        request = {
            "kind": "eval_request",
            "request_id": request_id,
            "mask": sorted(int(m) for m in mask),
            "dataset": self.dataset_tag,
        }
        if self._pending_model_path is not None:
            request["model_path"] = self._pending_model_path
            self._pending_model_path = None
        self._send(request)
        reply = self._receive()
        kind = reply.get("kind")
        if kind == "error":
            raise OracleError(
                f"evaluator failure for {request_id}: {reply.get('message')}"
            )
        if kind != "eval_response":
            raise ProtocolError(f"expected eval_response, got {kind!r}")
        if reply.get("request_id") != request_id:
            raise ProtocolError(
                f"response id {reply.get('request_id')!r} does not match {request_id!r}"
            )
        losses = reply.get("losses")
        if not isinstance(losses, dict):
            raise ProtocolError("eval_response without a losses map")
        values = []
        for spec in self.task_specs:
            if spec.task_name not in losses:
                raise ProtocolError(f"response missing task {spec.task_name!r}")
            value = float(losses[spec.task_name])
            if not (value == value and abs(value) != float("inf")):
                raise ProtocolError(f"non-finite loss for task {spec.task_name!r}")
            values.append((spec.task_name, value))
        return TaskLossVector(tuple(values), batch_id=request_id)

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                self._send({"kind": "shutdown"})
            except ProtocolError:
                pass
            try:
                self._proc.wait(timeout=10)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()
        if self._proc.stdin:
            self._proc.stdin.close()
        if self._proc.stdout:
            self._proc.stdout.close()

    def __enter__(self):
        return self

    def __exit__(self, *_exc):
        self.close()


def run_protocol_conformance(
    command: list[str],
    task_specs: list[TaskSpec],
    dataset_tag: str,
    model: ModelGraph,
    masks: list[list[int]],
    work_dir: str,
    timeout: float = DEFAULT_TIMEOUT,
) -> tuple[list[TaskLossVector], int]:
    """Drive a full conforming session against an evaluator command.

    Performs the handshake, issues the mask requests strictly serially,
    shuts down, and returns the responses plus the evaluator's exit
    status. Raises ProtocolError on any contract breach.
    """
    oracle = ExternalOracle(command, task_specs, dataset_tag, work_dir, timeout)
    try:
        oracle.bind(model, None)
        results = [oracle.evaluate(mask) for mask in masks]
    finally:
        oracle.close()
    status = oracle._proc.returncode
    return results, status
