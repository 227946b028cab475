import heapq

import numpy as np
import pytest

from dualmesh import shapes


def numeric_grad(f, x, h=1e-5):
    """Central differences of scalar f() with respect to array x (in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)
    return float(np.max(np.abs(a - b)) / scale)


def heap_dijkstra(vertices, edges, source):
    """Textbook Dijkstra over an explicit adjacency list."""
    adj = {i: [] for i in range(len(vertices))}
    for a, b in edges:
        w = float(np.linalg.norm(np.asarray(vertices[a]) - np.asarray(vertices[b])))
        adj[a].append((b, w))
        adj[b].append((a, w))
    dist = [float("inf")] * len(vertices)
    dist[source] = 0.0
    heap = [(0.0, source)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u]:
            continue
        for v, w in adj[u]:
            if d + w < dist[v]:
                dist[v] = d + w
                heapq.heappush(heap, (d + w, v))
    return np.array(dist)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


@pytest.fixture(scope="session")
def corpus():
    return shapes.corpus()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
