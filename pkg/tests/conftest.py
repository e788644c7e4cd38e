import socket
import threading

import numpy as np
import pytest

from spikerl.dist import LoopbackHub, init_group


def free_ports(n):
    socks = []
    for _ in range(n):
        s = socket.socket()
        s.bind(("127.0.0.1", 0))
        socks.append(s)
    ports = [s.getsockname()[1] for s in socks]
    for s in socks:
        s.close()
    return ports


def run_ranks(world, fn, backend="loopback", timeout=20.0):
    """Run ``fn(group)`` on every rank in threads; returns results by rank.

    Exceptions are returned in place of results so tests can assert on them.
    """
    hub = LoopbackHub(world)
    peers = [f"127.0.0.1:{p}" for p in free_ports(world)]
    results = [None] * world

    def worker(r):
        group = None
        try:
            group = init_group(r, world, peers, backend, timeout=timeout, hub=hub)
            results[r] = fn(group)
        except BaseException as exc:
            results[r] = exc
        finally:
            if group is not None:
                group.close()

    threads = [threading.Thread(target=worker, args=(r,)) for r in range(world)]
    for t in threads:
        t.start()
    for t in threads:
        t.join(timeout * 3)
    return results


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from tests import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(test_acceptance.RESULTS[n])
