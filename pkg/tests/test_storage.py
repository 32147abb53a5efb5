import hashlib
import multiprocessing
import os
import shutil
import tempfile
import time
import unittest

from src.ciirl.core.locking import DirectoryLock
from src.ciirl.core.storage import LOCK_NAME, MANIFEST_NAME, ArtifactStore
from src.ciirl.exceptions import LockTimeoutError


def worker_process_tries_to_write(output_dir, queue):
    """
    Runs in a separate process and writes one artifact. The write blocks
    while the main process holds the directory lock.
    """
    start_time = time.time()
    try:
        store = ArtifactStore(output_dir, lock_timeout=10.0)
        store.write_text("from-worker.txt", "hello\n")
    except Exception as e:
        queue.put(e)
    queue.put(time.time() - start_time)


class TestArtifactStore(unittest.TestCase):

    def setUp(self):
        self.output_dir = tempfile.mkdtemp(prefix="ciirl-store-")
        self.store = ArtifactStore(self.output_dir)

    def tearDown(self):
        shutil.rmtree(self.output_dir, ignore_errors=True)

    def test_atomic_write_leaves_no_temporary_files(self):
        self.store.write_text("a.txt", "first\n")
        self.store.write_text("a.txt", "second\n")
        self.assertEqual(self.store.read_text("a.txt"), "second\n")
        leftovers = [f for f in os.listdir(self.output_dir) if ".tmp-" in f]
        self.assertEqual(leftovers, [])

    def test_recovery_removes_partial_writes(self):
        partial = os.path.join(self.output_dir, "setting-0.dataset.tmp-999")
        with open(partial, "w") as f:
            f.write("#ciirl-dataset version=1")
        with self.assertLogs("src.ciirl.core.storage", level="WARNING"):
            ArtifactStore(self.output_dir)
        self.assertFalse(os.path.exists(partial))

    def test_json_and_csv(self):
        self.store.write_json("cfg.json", {"b": 1, "a": [1, 2]})
        self.assertEqual(self.store.read_text("cfg.json"), '{\n  "a": [\n    1,\n    2\n  ],\n  "b": 1\n}\n')
        self.store.write_csv("t.csv", ["x", "y"], [{"x": 1, "y": 2.5}])
        self.assertEqual(self.store.read_text("t.csv"), "x,y\n1,2.5\n")

    def test_missing_artifact(self):
        with self.assertRaises(FileNotFoundError):
            self.store.read_bytes("nope.json")

    def test_manifest_checksums(self):
        self.store.write_text(self.store.dataset_name(0), "data-0\n")
        self.store.write_text("results.csv", "x\n")
        manifest = self.store.update_manifest(
            seed=3, datasets=[{"setting_id": 0, "file": self.store.dataset_name(0)}], artifacts=["results.csv"])
        self.assertEqual(manifest["datasets"][0]["sha256"], hashlib.sha256(b"data-0\n").hexdigest())
        self.assertEqual(manifest["artifacts"]["results.csv"], hashlib.sha256(b"x\n").hexdigest())
        self.assertEqual(self.store.load_manifest()["seed"], 3)
        self.assertTrue(self.store.exists(MANIFEST_NAME))
        self.assertEqual(self.store.verify_manifest(), [])

    def test_manifest_merges_and_detects_tampering(self):
        for i in (1, 0):
            self.store.write_text(self.store.dataset_name(i), f"data-{i}\n")
            self.store.update_manifest(datasets=[{"setting_id": i, "file": self.store.dataset_name(i)}])
        self.assertEqual([d["setting_id"] for d in self.store.load_manifest()["datasets"]], [0, 1])
        with open(os.path.join(self.output_dir, self.store.dataset_name(1)), "a") as f:
            f.write("tampered\n")
        self.assertEqual(self.store.verify_manifest(), ["setting-1.dataset"])

    def test_transactions_nest(self):
        with self.store.transaction():
            with self.store.transaction():
                self.store.write_text("n.txt", "x")
            self.assertTrue(self.store.locker.held)
        self.assertFalse(self.store.locker.held)

    def test_lock_timeout(self):
        with DirectoryLock(os.path.join(self.output_dir, LOCK_NAME)):
            with self.assertRaises(LockTimeoutError):
                ArtifactStore(self.output_dir, lock_timeout=0.1)

    def test_writers_are_serialized(self):
        queue = multiprocessing.Queue()
        with self.store.transaction():
            worker = multiprocessing.Process(target=worker_process_tries_to_write, args=(self.output_dir, queue))
            worker.start()
            time.sleep(0.5)
            self.assertFalse(self.store.exists("from-worker.txt"))
        released = time.time()
        worker.join(timeout=10)
        duration = queue.get(timeout=5)
        self.assertNotIsInstance(duration, Exception)
        written = os.path.getmtime(os.path.join(self.output_dir, "from-worker.txt"))
        self.assertGreaterEqual(written, released - 0.05)
        self.assertEqual(self.store.read_text("from-worker.txt"), "hello\n")


if __name__ == '__main__':
    unittest.main()
