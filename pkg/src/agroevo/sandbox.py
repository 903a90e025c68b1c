"""Isolated execution of candidate heuristic scripts.

Each run gets a fresh working directory holding only ``input.geojson``. The
script is launched through a small guard module that installs an audit hook
before handing control to the candidate: file access is confined to the
working directory (plus read-only access to the interpreter's import roots),
and sockets, subprocesses and foreign shared libraries are refused. The child
also runs under rlimits, in its own session, and is killed at the timeout.

This is defence in depth for model-written code, not a syscall-level jail.
"""

from __future__ import annotations

import json
import logging
import os
import shutil
import signal
import subprocess
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from .complexity import ComplexityMetrics, compute_complexity
from .connectivity import parse_direction_records
from .fitness import DEFAULT_EPSILON, FitnessReport, penalty_report
from .landscape import LandscapeParseError, parse_interventions

logger = logging.getLogger(__name__)

try:
    import resource
except ImportError:  # pragma: no cover - non-POSIX
    resource = None


class CandidateKind(str, Enum):
    SCRIPT = "heuristic_script"
    MESSAGE = "nudge_message"


@dataclass(frozen=True)
class LineageEntry:
    operator: str
    parent_ids: tuple[str, ...]


@dataclass
class Candidate:
    id: str
    kind: CandidateKind
    body: str
    lineage: list[LineageEntry] = field(default_factory=list)
    fitness_history: list[FitnessReport] = field(default_factory=list)
    complexity: ComplexityMetrics | None = None
    generation_born: int = 0
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.kind = CandidateKind(self.kind)
        if self.kind is CandidateKind.SCRIPT and self.complexity is None:
            self.complexity = compute_complexity(self.body)

    @property
    def fitness(self) -> float:
        return self.fitness_history[-1].fitness if self.fitness_history else 0.0

    @property
    def error(self) -> float | None:
        return self.fitness_history[-1].error if self.fitness_history else None

    @property
    def operator(self) -> str | None:
        return self.lineage[-1].operator if self.lineage else None

    @property
    def parent_ids(self) -> tuple[str, ...]:
        return self.lineage[-1].parent_ids if self.lineage else ()

    def with_body(self, body: str) -> "Candidate":
        complexity = compute_complexity(body) if self.kind is CandidateKind.SCRIPT else None
        return replace(self, body=body, complexity=complexity, fitness_history=list(self.fitness_history),
                       diagnostics=dict(self.diagnostics))


class ExecStage(str, Enum):
    BASELINE = "baseline"
    GLOBAL = "global"
    NUDGED = "nudged"

    @property
    def output_name(self) -> str:
        return "output.json" if self is ExecStage.GLOBAL else "output.geojson"


class ExecStatus(str, Enum):
    OK = "ok"
    PARSE_FAILURE = "parse_failure"
    RUNTIME_FAILURE = "runtime_failure"
    TIMEOUT = "timeout"
    OUTPUT_INVALID = "output_invalid"


@dataclass(frozen=True)
class ExecutionLimits:
    timeout: float = 30.0
    memory: int = 512 * 1024 * 1024
    max_output_bytes: int = 64 * 1024 * 1024
    interpreter: tuple[str, ...] = (sys.executable, "-I", "-B")


@dataclass
class ExecutionResult:
    status: ExecStatus
    output_records: dict[int, Any] | None = None
    trace: str = ""
    wall_time: float = 0.0
    stdout: str = ""

    @property
    def ok(self) -> bool:
        return self.status is ExecStatus.OK


_GUARD = r'''
import os, sys, runpy

_WORK = os.path.realpath(os.getcwd())
_SCRIPT = os.path.realpath(sys.argv[1])
_ROOTS = []
for _p in sys.path:
    if _p and os.path.isdir(_p):
        _rp = os.path.realpath(_p)
        if _WORK == _rp or _WORK.startswith(_rp + os.sep) or _rp == os.sep:
            continue
        _ROOTS.append(_rp)
_ROOTS = tuple(_ROOTS)
_DEVICES = ("/dev/null", "/dev/urandom", "/dev/random")
_WRITE_FLAGS = os.O_WRONLY | os.O_RDWR | os.O_CREAT | os.O_TRUNC | os.O_APPEND


def _real(path):
    if isinstance(path, int):
        return None
    if isinstance(path, bytes):
        path = os.fsdecode(path)
    return os.path.realpath(os.path.join(_WORK, os.fspath(path)))


def _inside(path, root):
    return path == root or path.startswith(root + os.sep)


def _readable(path):
    return (_inside(path, _WORK) or path == _SCRIPT or path in _DEVICES
            or any(_inside(path, r) for r in _ROOTS))


_DENY = {"socket.connect", "socket.bind", "socket.getaddrinfo", "socket.sendto", "socket.sendmsg",
         "subprocess.Popen", "os.system", "os.exec", "os.posix_spawn", "os.spawn", "os.fork",
         "os.forkpty", "os.kill", "os.killpg", "pty.spawn", "os.startfile", "webbrowser.open"}
_WRITE_EVENTS = {"os.remove", "os.rename", "os.rmdir", "os.mkdir", "os.chmod", "os.chown", "os.link",
                 "os.symlink", "os.truncate", "os.utime", "shutil.rmtree", "shutil.move", "shutil.copyfile",
                 "os.removexattr", "os.setxattr"}


def _hook(event, args):
    if event in _DENY:
        raise PermissionError(f"sandbox: {event} is not permitted")
    # ctypes reaches libc directly; an ImportError lets libraries that treat it as optional carry on
    if event == "import" and args and str(args[0]).split(".")[0] in ("ctypes", "_ctypes"):
        raise ImportError(f"sandbox: {args[0]} is not available")
    if event == "ctypes.dlopen":
        raise PermissionError("sandbox: loading shared libraries is not permitted")
    if event == "open":
        path = _real(args[0])
        if path is None:
            return
        mode, flags = args[1], args[2] if len(args) > 2 else 0
        writing = (mode is not None and any(c in str(mode) for c in "wax+")) or bool((flags or 0) & _WRITE_FLAGS)
        if writing and not _inside(path, _WORK):
            raise PermissionError(f"sandbox: writing outside the working directory: {path}")
        if not writing and not _readable(path):
            raise PermissionError(f"sandbox: reading outside the working directory: {path}")
    elif event in ("os.listdir", "os.scandir"):
        path = _real(args[0] if args and args[0] is not None else ".")
        if path is not None and not _readable(path):
            raise PermissionError(f"sandbox: listing outside the working directory: {path}")
    elif event == "os.chdir":
        path = _real(args[0])
        if path is not None and not _inside(path, _WORK):
            raise PermissionError("sandbox: leaving the working directory is not permitted")
    elif event in _WRITE_EVENTS:
        for a in args:
            if isinstance(a, (str, bytes, os.PathLike)):
                path = _real(a)
                if path is not None and not _inside(path, _WORK):
                    raise PermissionError(f"sandbox: {event} outside the working directory: {path}")


def _no_processes(*args, **kwargs):
    raise PermissionError("sandbox: starting processes is not permitted")


# the low-level spawn primitive raises no audit event of its own
import _posixsubprocess
_posixsubprocess.fork_exec = _no_processes
del _posixsubprocess

sys.addaudithook(_hook)
sys.argv = sys.argv[1:]
runpy.run_path(_SCRIPT, run_name="__main__")
'''


def _limit_child(limits: ExecutionLimits) -> Callable[[], None] | None:
    if resource is None:
        return None

    def apply() -> None:
        mem = limits.memory
        resource.setrlimit(resource.RLIMIT_AS, (mem, mem))
        cpu = int(limits.timeout) + 2
        resource.setrlimit(resource.RLIMIT_CPU, (cpu, cpu))
        resource.setrlimit(resource.RLIMIT_FSIZE, (limits.max_output_bytes, limits.max_output_bytes))
        resource.setrlimit(resource.RLIMIT_CORE, (0, 0))

    return apply


def _child_env(workdir: Path) -> dict[str, str]:
    return {
        "PATH": "/usr/bin:/bin",
        "HOME": str(workdir),
        "LANG": "C.UTF-8",
        "PYTHONHASHSEED": "0",
        "PYTHONDONTWRITEBYTECODE": "1",
        "OPENBLAS_NUM_THREADS": "1",
        "OMP_NUM_THREADS": "1",
        "MKL_NUM_THREADS": "1",
    }


def parse_output(stage: ExecStage, text: str) -> dict[int, Any]:
    doc = json.loads(text)
    if stage is ExecStage.GLOBAL:
        return parse_direction_records(doc)
    return parse_interventions(doc)


def execute_candidate(
    candidate: Candidate,
    input_file: str | Path,
    stage: ExecStage | str,
    limits: ExecutionLimits | None = None,
    artifact_dir: str | Path | None = None,
) -> ExecutionResult:
    """Run a heuristic script on one farm file and validate what it writes."""
    if candidate.kind is not CandidateKind.SCRIPT:
        raise ValueError("only heuristic scripts can be executed")
    stage = ExecStage(stage)
    limits = limits or ExecutionLimits()
    try:
        compile(candidate.body, "heuristic.py", "exec")
    except (SyntaxError, ValueError) as exc:
        return ExecutionResult(ExecStatus.PARSE_FAILURE, trace=f"{type(exc).__name__}: {exc}")

    root = Path(tempfile.mkdtemp(prefix="agroevo-run-"))
    try:
        result = _run_in(root, candidate, input_file, stage, limits, artifact_dir)
    finally:
        shutil.rmtree(root, ignore_errors=True)
    # temp paths vary per run; keep traces reproducible
    result.trace = result.trace.replace(str(root), "<sandbox>")
    result.stdout = result.stdout.replace(str(root), "<sandbox>")
    return result


def _run_in(root: Path, candidate: Candidate, input_file, stage: ExecStage, limits: ExecutionLimits,
            artifact_dir) -> ExecutionResult:
    work = root / "work"
    code = root / "code"
    work.mkdir()
    code.mkdir()
    shutil.copyfile(input_file, work / "input.geojson")
    (code / "heuristic.py").write_text(candidate.body)
    (code / "guard.py").write_text(_GUARD)
    cmd = [*limits.interpreter, str(code / "guard.py"), str(code / "heuristic.py")]
    start = time.monotonic()
    proc = subprocess.Popen(
        cmd, cwd=work, env=_child_env(work), stdin=subprocess.DEVNULL,
        stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True,
        start_new_session=True, preexec_fn=_limit_child(limits),
    )
    try:
        out, err = proc.communicate(timeout=limits.timeout)
    except subprocess.TimeoutExpired:
        try:
            os.killpg(proc.pid, signal.SIGKILL)
        except ProcessLookupError:
            pass
        out, err = proc.communicate()
        return ExecutionResult(ExecStatus.TIMEOUT, trace=f"killed after {limits.timeout} s",
                               wall_time=time.monotonic() - start, stdout=out or "")
    wall = time.monotonic() - start
    if proc.returncode != 0:
        return ExecutionResult(ExecStatus.RUNTIME_FAILURE, trace=_tail(err), wall_time=wall, stdout=_tail(out))
    output = work / stage.output_name
    if not output.is_file():
        return ExecutionResult(ExecStatus.OUTPUT_INVALID, trace=f"{stage.output_name} was not written",
                               wall_time=wall, stdout=_tail(out))
    text = output.read_text()
    if artifact_dir is not None:
        Path(artifact_dir).mkdir(parents=True, exist_ok=True)
        (Path(artifact_dir) / stage.output_name).write_text(text)
    try:
        records = parse_output(stage, text)
    except (json.JSONDecodeError, LandscapeParseError) as exc:
        return ExecutionResult(ExecStatus.OUTPUT_INVALID, trace=str(exc), wall_time=wall, stdout=_tail(out))
    return ExecutionResult(ExecStatus.OK, records, "", wall, _tail(out))


def _tail(text: str | None, limit: int = 4000) -> str:
    text = text or ""
    return text if len(text) <= limit else "..." + text[-limit:]


Fixer = Callable[[str, str], "str | None"]


def repair_and_rescore(
    candidate: Candidate,
    result: ExecutionResult,
    fixer: Fixer,
    max_attempts: int,
    run: Callable[[Candidate], ExecutionResult],
) -> tuple[Candidate, ExecutionResult]:
    """Ask the fixer for corrected code and re-run, up to ``max_attempts`` times.

    A fixer exception counts as an unrepaired attempt. The caller assigns the
    penalty fitness when the returned result is still not ok.
    """
    if result.ok:
        raise ValueError("candidate already executed successfully")
    attempts = 0
    while not result.ok and attempts < max_attempts:
        attempts += 1
        trace = result.trace or result.status.value
        try:
            fixed = fixer(candidate.body, trace)
        except Exception as exc:  # provider failures end the repair loop
            logger.warning("fixer failed for %s: %s", candidate.id, exc)
            candidate.diagnostics["repair_error"] = str(exc)
            break
        if not fixed:
            continue
        candidate = candidate.with_body(fixed)
        result = run(candidate)
    candidate.diagnostics["repair_attempts"] = attempts
    candidate.diagnostics["repaired"] = result.ok and attempts > 0
    return candidate, result


def evaluate_script(
    candidate: Candidate,
    input_file: str | Path,
    stage: ExecStage | str,
    scorer: Callable[[dict[int, Any]], FitnessReport],
    fixer: Fixer | None = None,
    max_attempts: int = 1,
    limits: ExecutionLimits | None = None,
    epsilon: float = DEFAULT_EPSILON,
) -> tuple[Candidate, ExecutionResult, FitnessReport]:
    """Execute, repair on failure, then score or assign the penalty fitness."""
    def run(c: Candidate) -> ExecutionResult:
        return execute_candidate(c, input_file, stage, limits)

    result = run(candidate)
    if not result.ok and fixer is not None and max_attempts > 0:
        candidate, result = repair_and_rescore(candidate, result, fixer, max_attempts, run)
    if result.ok:
        report = scorer(result.output_records)
    else:
        report = penalty_report(result.status.value, epsilon)
        report.diagnostics["trace"] = result.trace
    report.diagnostics["status"] = result.status.value
    report.diagnostics["wall_time"] = result.wall_time
    return candidate, result, report


def execute_many(
    jobs: Sequence[Callable[[], Any]],
    workers: int = 1,
) -> list[Any]:
    """Run independent evaluation jobs on a bounded pool, preserving order."""
    if workers <= 1 or len(jobs) <= 1:
        return [job() for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: job(), jobs))
