import csv
import hashlib
import io
import json
import logging
import os
from contextlib import contextmanager

from .locking import DirectoryLock

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1
LOCK_NAME = ".ciirl.lock"
TMP_MARKER = ".tmp-"


def sha256_bytes(data):
    return hashlib.sha256(data).hexdigest()


class ArtifactStore:
    """
    Owns an output directory of experiment artifacts.

    Every write goes to ``<name>.tmp-<pid>`` first and is then renamed over
    the target, so readers see either the old or the new file. Writers hold
    an exclusive lock on ``.ciirl.lock``; a batch of writes can share one
    acquisition through ``transaction()``.
    """

    def __init__(self, output_dir, lock_timeout=10.0):
        os.makedirs(output_dir, exist_ok=True)
        self.output_dir = output_dir
        self.locker = DirectoryLock(os.path.join(output_dir, LOCK_NAME), timeout=lock_timeout)
        self._depth = 0
        self._recover()

    def _get_path(self, name):
        return os.path.join(self.output_dir, name)

    def _get_tmp_path(self, name):
        return self._get_path(name) + f"{TMP_MARKER}{os.getpid()}"

    def dataset_name(self, setting_id):
        return f"setting-{setting_id}.dataset"

    def checkpoint_name(self, label):
        return f"checkpoint-{label}.json"

    def trace_name(self, label):
        return f"trace-{label}.csv"

    def render_names(self, label):
        return f"reward-{label}.pgm", f"reward-{label}.csv"

    def _recover(self):
        with self.transaction():
            for filename in sorted(os.listdir(self.output_dir)):
                if TMP_MARKER in filename:
                    logger.warning("Removing partial artifact %s left by an interrupted writer.", filename)
                    os.remove(self._get_path(filename))

    @contextmanager
    def transaction(self):
        if self._depth == 0:
            self.locker.lock(exclusive=True)
        self._depth += 1
        try:
            yield self
        finally:
            self._depth -= 1
            if self._depth == 0:
                self.locker.unlock()

    def exists(self, name):
        return os.path.exists(self._get_path(name))

    def write_bytes(self, name, data):
        tmp_path = self._get_tmp_path(name)
        with self.transaction():
            try:
                with open(tmp_path, "wb") as f:
                    f.write(data)
                    f.flush()
                    os.fsync(f.fileno())
                os.replace(tmp_path, self._get_path(name))
            except OSError:
                if os.path.exists(tmp_path):
                    os.remove(tmp_path)
                raise
        logger.debug("Wrote %s (%d bytes).", name, len(data))
        return self._get_path(name)

    def write_text(self, name, text):
        return self.write_bytes(name, text.encode("utf-8"))

    def write_json(self, name, data):
        return self.write_text(name, json.dumps(data, indent=2, sort_keys=True) + "\n")

    def write_csv(self, name, fieldnames, rows):
        buffer = io.StringIO()
        writer = csv.DictWriter(buffer, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
        return self.write_text(name, buffer.getvalue())

    def read_bytes(self, name):
        path = self._get_path(name)
        if not os.path.exists(path):
            raise FileNotFoundError(f"Artifact '{name}' not found in {self.output_dir}.")
        with open(path, "rb") as f:
            return f.read()

    def read_text(self, name):
        return self.read_bytes(name).decode("utf-8")

    def read_json(self, name):
        return json.loads(self.read_text(name))

    def checksum(self, name):
        return sha256_bytes(self.read_bytes(name))

    def load_manifest(self):
        if not self.exists(MANIFEST_NAME):
            return {"version": MANIFEST_VERSION, "datasets": [], "artifacts": {}}
        return self.read_json(MANIFEST_NAME)

    def update_manifest(self, seed=None, config=None, datasets=None, artifacts=()):
        """
        Merges new entries into ``manifest.json`` and rewrites it. Dataset
        entries are keyed by setting id; every other artifact by file name,
        each with its SHA-256.
        """
        with self.transaction():
            manifest = self.load_manifest()
            if seed is not None:
                manifest["seed"] = seed
            if config is not None:
                manifest["config"] = config
            if datasets is not None:
                by_setting = {d["setting_id"]: d for d in manifest.get("datasets", [])}
                for entry in datasets:
                    entry = dict(entry, sha256=self.checksum(entry["file"]))
                    by_setting[entry["setting_id"]] = entry
                manifest["datasets"] = [by_setting[k] for k in sorted(by_setting)]
            recorded = manifest.setdefault("artifacts", {})
            for name in artifacts:
                recorded[name] = self.checksum(name)
            self.write_json(MANIFEST_NAME, manifest)
        return manifest

    def verify_manifest(self):
        """Names of recorded files whose current hash differs from the manifest."""
        manifest = self.load_manifest()
        recorded = {d["file"]: d["sha256"] for d in manifest.get("datasets", [])}
        recorded.update(manifest.get("artifacts", {}))
        return sorted(name for name, digest in recorded.items()
                      if not self.exists(name) or self.checksum(name) != digest)
