"""
checkpoints.py

Purpose:
--------
Checkpoint files for networks and trainer state, and the resume bookkeeping
of a training run.

File layout (little endian):
    magic  b"SCANCKPT"
    uint32 format version
    64 ascii bytes  architecture fingerprint (sha256 hex)
    int64  entry count
    per entry: int64 name length, utf-8 name, tensor dump (autodiff.tensor format)

Network checkpoints hold parameters then BatchNorm running statistics in
schedule order. The trainer checkpoint holds both Adam states. progress.json
holds epoch and step counters and points at the latest files.
"""

import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from autodiff.tensor import read_tensor, write_tensor
from networks.model import Network
from schema.errors import FingerprintMismatchError, FormatError, MissingPathError

logger = logging.getLogger(__name__)


MAGIC = b"SCANCKPT"
FORMAT_VERSION = 1
_FINGERPRINT_BYTES = 64
_INT = np.dtype("<i8")
_UINT32 = np.dtype("<u4")

PROGRESS_FILE = "progress.json"


# -----------------------------
# Container format
# -----------------------------

def write_checkpoint(path: Path, fingerprint: str, arrays: Dict[str, np.ndarray]):
    """Write named arrays atomically (temporary file, then rename)."""
    fp = fingerprint.encode("ascii")
    if len(fp) != _FINGERPRINT_BYTES:
        raise FormatError(f"fingerprint must be {_FINGERPRINT_BYTES} hex characters, got {len(fp)}")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.array(FORMAT_VERSION, dtype=_UINT32).tobytes())
        fh.write(fp)
        fh.write(np.array(len(arrays), dtype=_INT).tobytes())
        for name, values in arrays.items():
            raw = name.encode("utf-8")
            fh.write(np.array(len(raw), dtype=_INT).tobytes())
            fh.write(raw)
            write_tensor(fh, values)
    os.replace(tmp, path)


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"checkpoint truncated in {what}")
    return data


def read_checkpoint(path: Path) -> Tuple[str, Dict[str, np.ndarray]]:
    """(fingerprint, named arrays) of a checkpoint file."""
    path = Path(path)
    if not path.exists():
        raise MissingPathError(f"checkpoint not found: {path}")

    with open(path, "rb") as fh:
        if _read_exact(fh, len(MAGIC), "magic") != MAGIC:
            raise FormatError(f"{path} is not a checkpoint file (bad magic)")
        version = int(np.frombuffer(_read_exact(fh, _UINT32.itemsize, "version"), dtype=_UINT32)[0])
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        fingerprint = _read_exact(fh, _FINGERPRINT_BYTES, "fingerprint").decode("ascii")
        count = int(np.frombuffer(_read_exact(fh, _INT.itemsize, "entry count"), dtype=_INT)[0])

        arrays = {}
        for _ in range(count):
            size = int(np.frombuffer(_read_exact(fh, _INT.itemsize, "name length"), dtype=_INT)[0])
            name = _read_exact(fh, size, "name").decode("utf-8")
            arrays[name] = read_tensor(fh)
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after {count} entries")
    return fingerprint, arrays


# -----------------------------
# Networks
# -----------------------------

def save_checkpoint(network: Network, path: Path):
    write_checkpoint(path, network.fingerprint, network.state_arrays())


def load_checkpoint(network: Network, path: Path) -> Network:
    """Load parameters and statistics into `network`; its schedule must match the file's."""
    fingerprint, arrays = read_checkpoint(path)
    if fingerprint != network.fingerprint:
        raise FingerprintMismatchError(network.fingerprint, fingerprint, str(path))
    network.load_state({k: v.astype(network.dtype) for k, v in arrays.items()})
    return network


def combined_fingerprint(*networks: Optional[Network]) -> str:
    h = hashlib.sha256()
    for net in networks:
        h.update((net.fingerprint if net is not None else "-").encode())
    return h.hexdigest()


# -----------------------------
# Training runs
# -----------------------------

class RunCheckpointer:
    """
    Called by TrainingSession when a checkpoint is due; restores a session
    from the latest progress.json on resume.
    """

    def __init__(self, directory: Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    @property
    def progress_path(self) -> Path:
        return self.directory / PROGRESS_FILE

    def _name(self, kind: str, epoch: int) -> str:
        return f"{kind}_epoch{epoch:04d}.ckpt"

    def __call__(self, session):
        epoch = session.epoch
        files = {"segmentor": self._name("segmentor", epoch), "trainer": self._name("trainer", epoch)}
        save_checkpoint(session.S, self.directory / files["segmentor"])
        if session.D is not None:
            files["critic"] = self._name("critic", epoch)
            save_checkpoint(session.D, self.directory / files["critic"])

        optim = {f"segmentor.{k}": v for k, v in session.s_opt.buffers().items()}
        optim.update({f"critic.{k}": v for k, v in session.d_opt.buffers().items()})
        write_checkpoint(self.directory / files["trainer"], combined_fingerprint(session.S, session.D), optim)

        progress = {
            "epoch": epoch,
            "step": session.step,
            "segmentor_adam_t": session.s_opt.t,
            "critic_adam_t": session.d_opt.t,
            "files": files,
            "fingerprints": {
                "segmentor": session.S.fingerprint,
                "critic": session.D.fingerprint if session.D is not None else None,
            },
        }
        tmp = self.progress_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(progress, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        os.replace(tmp, self.progress_path)
        session.log.event("checkpoint", epoch=epoch, step=session.step)
        logger.info("Checkpoint written at epoch %d (%s)", epoch, files["segmentor"])

    def progress(self) -> Optional[dict]:
        if not self.progress_path.exists():
            return None
        try:
            return json.loads(self.progress_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise FormatError(f"{self.progress_path}: malformed progress file: {e}") from e

    def restore(self, session) -> bool:
        """Load the latest checkpoint into `session`; False when there is none."""
        progress = self.progress()
        if progress is None:
            return False

        load_checkpoint(session.S, self.directory / progress["files"]["segmentor"])
        if session.D is not None:
            if "critic" not in progress["files"]:
                raise FormatError(f"{self.progress_path}: no critic checkpoint to resume a scan run from")
            load_checkpoint(session.D, self.directory / progress["files"]["critic"])

        path = self.directory / progress["files"]["trainer"]
        fingerprint, arrays = read_checkpoint(path)
        expected = combined_fingerprint(session.S, session.D)
        if fingerprint != expected:
            raise FingerprintMismatchError(expected, fingerprint, str(path))

        s_buf = {k[len("segmentor."):]: v for k, v in arrays.items() if k.startswith("segmentor.")}
        d_buf = {k[len("critic."):]: v for k, v in arrays.items() if k.startswith("critic.")}
        session.s_opt.load_buffers(s_buf, progress["segmentor_adam_t"])
        session.d_opt.load_buffers(d_buf, progress["critic_adam_t"])
        session.epoch = int(progress["epoch"])
        session.step = int(progress["step"])
        session.log.truncate_after(session.step - 1)
        logger.info("Resumed at epoch %d, step %d", session.epoch, session.step)
        return True
