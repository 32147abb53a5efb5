import logging
import os
import time

from ..exceptions import LockTimeoutError

# File locking primitives differ between Windows and Unix-like systems.
if os.name == 'nt':
    import msvcrt
else:
    import fcntl

logger = logging.getLogger(__name__)


class DirectoryLock:
    """
    Cross-platform advisory lock on a lock file inside an output directory.

    The handle is reopened on every attempt so a lock held by another process
    is retried cleanly. Usable as a context manager (exclusive by default).
    """
    def __init__(self, file_path, exclusive=True, timeout=10.0, poll=0.05):
        self.file_path = file_path
        self.exclusive = exclusive
        self.timeout = timeout
        self.poll = poll
        self.file_handle = None

    def lock(self, exclusive=None, timeout=None):
        exclusive = self.exclusive if exclusive is None else exclusive
        timeout = self.timeout if timeout is None else timeout
        deadline = time.monotonic() + timeout

        while True:
            try:
                # Append mode creates the file without truncating it.
                self.file_handle = open(self.file_path, 'a')
                if os.name == 'nt':
                    mode = msvcrt.LK_NBLCK if exclusive else msvcrt.LK_NBRLCK
                    self.file_handle.seek(0)
                    msvcrt.locking(self.file_handle.fileno(), mode, 1)
                else:
                    mode = fcntl.LOCK_EX if exclusive else fcntl.LOCK_SH
                    fcntl.flock(self.file_handle, mode | fcntl.LOCK_NB)
                return self
            except (IOError, BlockingIOError):
                if self.file_handle:
                    self.file_handle.close()
                    self.file_handle = None
                if time.monotonic() >= deadline:
                    break
                time.sleep(self.poll)

        raise LockTimeoutError(f"Could not acquire lock on {self.file_path} within {timeout} seconds.")

    def unlock(self):
        if self.file_handle:
            if os.name == 'nt':
                self.file_handle.seek(0)
                msvcrt.locking(self.file_handle.fileno(), msvcrt.LK_UNLCK, 1)
            else:
                fcntl.flock(self.file_handle, fcntl.LOCK_UN)
            self.file_handle.close()
            self.file_handle = None

    @property
    def held(self):
        return self.file_handle is not None

    def __enter__(self):
        return self.lock()

    def __exit__(self, exc_type, exc, tb):
        self.unlock()
        return False
