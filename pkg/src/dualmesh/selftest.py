"""Built-in verification suites run by ``dualmesh selftest``.

Each suite returns ``(passed, detail)``. The suites cover dual regularity,
finite-difference gradient checks, feature invariances, neighbor-order
invariance, Dual2Primal row sums and hand-derived metric fixtures.
"""

from __future__ import annotations

import time

import numpy as np

from . import nn, shapes
from .dual import build_dual
from .features import (dihedral_table, distances_to_center_of_mass, face_areas,
                       face_centroids, face_normals)
from .geodesic import evaluate
from .mesh import interior_edge_count


def central_difference(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Numerical gradient of scalar ``f`` at ``x`` (perturbs ``x`` in place, restores it)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max-norm error relative to the larger max-norm of the two gradients."""
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def random_rotation(rng) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


def suite_dual_regularity():
    worst = []
    for name, mesh in shapes.corpus().items():
        d = build_dual(mesh)
        ok = d.is_three_regular() and d.edge_count() == interior_edge_count(mesh)
        n = d.neighbors
        sym = bool(np.all(np.any(n[n] == np.arange(len(n))[:, None, None], axis=2)))
        if not (ok and sym):
            worst.append(name)
    return not worst, f"{len(shapes.corpus())} meshes" + (f", failing {worst}" if worst else "")


def _conv_check(op, rng, mesh, c_in=2, c_out=3, h=1e-5):
    d = build_dual(mesh)
    fwd = nn.dualconv_max_forward if op == "max" else nn.dualconv_inv_forward
    bwd = nn.dualconv_max_backward if op == "max" else nn.dualconv_inv_backward
    for _ in range(100):
        x = rng.normal(size=(d.n_nodes, c_in))
        u = rng.normal(size=(c_out, c_in))
        w = rng.normal(size=(c_out, 3 * c_in))
        b = rng.normal(size=c_out)
        if op == "max":
            xn = nn.gather_neighbors(x, d.neighbors)
            terms = np.sort(np.stack([np.roll(xn, -r, axis=1).reshape(len(x), -1) @ w.T
                                      for r in range(3)]), axis=0)
            if np.min(terms[2] - terms[1]) > 1e-3:
                break
        else:
            xn = nn.gather_neighbors(x, d.neighbors)
            diffs = [np.abs(xn[:, a] - xn[:, b]) for a in range(3) for b in range(a + 1, 3)]
            if np.min(diffs) > 1e-3:
                break
    r = rng.normal(size=(d.n_nodes, c_out))
    y, cache = fwd(x, d.neighbors, u, w, b)
    dx, du, dw, db = bwd(r, cache)
    loss = lambda: float(np.sum(fwd(x, d.neighbors, u, w, b)[0] * r))  # noqa: E731
    return max(relative_error(dx, central_difference(loss, x, h)),
               relative_error(du, central_difference(loss, u, h)),
               relative_error(dw, central_difference(loss, w, h)),
               relative_error(db, central_difference(loss, b, h)))


def suite_gradients(instances=20, seed=0):
    rng = np.random.default_rng(seed)
    meshes = [shapes.tetrahedron(), shapes.octahedron(), shapes.icosahedron()]
    errs = {"dualconv_max": 0.0, "dualconv_inv": 0.0, "dual2primal": 0.0,
            "linear": 0.0, "elu": 0.0, "cross_entropy": 0.0}
    for k in range(instances):
        mesh = meshes[k % len(meshes)]
        errs["dualconv_max"] = max(errs["dualconv_max"], _conv_check("max", rng, mesh))
        errs["dualconv_inv"] = max(errs["dualconv_inv"], _conv_check("inv", rng, mesh))

        op = nn.Dual2PrimalOp.from_mesh(mesh)
        f = rng.normal(size=(mesh.n_faces, 2))
        r = rng.normal(size=(mesh.n_vertices, 2))
        loss = lambda: float(np.sum(nn.dual2primal(f, op) * r))  # noqa: E731
        errs["dual2primal"] = max(errs["dual2primal"], relative_error(
            nn.dual2primal_backward(r, op), central_difference(loss, f)))

        x = rng.normal(size=(5, 4))
        w = rng.normal(size=(3, 4))
        b = rng.normal(size=3)
        r = rng.normal(size=(5, 3))
        loss = lambda: float(np.sum(nn.linear_forward(x, w, b)[0] * r))  # noqa: E731
        dx, dw, db = nn.linear_backward(r, nn.linear_forward(x, w, b)[1])
        errs["linear"] = max(errs["linear"], relative_error(dx, central_difference(loss, x)),
                             relative_error(dw, central_difference(loss, w)),
                             relative_error(db, central_difference(loss, b)))

        x = rng.normal(size=(6, 3))
        x[np.abs(x) < 1e-3] = 0.5
        r = rng.normal(size=(6, 3))
        loss = lambda: float(np.sum(nn.elu_forward(x)[0] * r))  # noqa: E731
        errs["elu"] = max(errs["elu"], relative_error(
            nn.elu_backward(r, nn.elu_forward(x)[1]), central_difference(loss, x)))

        z = rng.normal(size=(7, 5))
        labels = rng.integers(-1, 5, size=7)
        labels[0] = 2
        loss = lambda: nn.softmax_cross_entropy(z, labels)[0]  # noqa: E731
        errs["cross_entropy"] = max(errs["cross_entropy"], relative_error(
            nn.softmax_cross_entropy(z, labels)[1], central_difference(loss, z)))
    limits = {"dual2primal": 1e-6, "linear": 1e-6}
    failed = [k for k, e in errs.items() if e > limits.get(k, 1e-4)]
    detail = ", ".join(f"{k} {e:.1e}" for k, e in errs.items())
    return not failed, detail


def _relchange(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), 1e-300))


def suite_invariances(trials=100, seed=0):
    rng = np.random.default_rng(seed)
    base = [shapes.icosphere(1), shapes.torus(8, 6)]
    table = {  # feature: (translation, rotation, scale) invariance
        "xyz": (False, False, False),
        "normal": (True, False, True),
        "area": (True, True, False),
        "distcm": (True, True, False),
        "dihedral": (True, True, True),
    }
    bad = []
    for t in range(trials):
        mesh = base[t % 2]
        # jitter so the mesh has no accidental symmetries
        mesh = type(mesh)(mesh.vertices + 0.05 * rng.normal(size=mesh.vertices.shape), mesh.faces)
        feats = _all_features(mesh)
        moves = {
            0: mesh.transformed(translation=rng.uniform(0.5, 2.0, 3) * rng.choice([-1, 1], 3)),
            1: mesh.transformed(rotation=_rotation_far_from_identity(rng)),
            2: mesh.transformed(scale=rng.choice([rng.uniform(0.3, 0.8), rng.uniform(1.3, 3.0)])),
        }
        for axis, moved in moves.items():
            new = _all_features(moved)
            for name, inv in table.items():
                change = _relchange(feats[name], new[name])
                if inv[axis] and change > 1e-9:
                    bad.append((name, axis, change))
                if not inv[axis] and change < 1e-3:
                    bad.append((name, axis, change))
    return not bad, f"{trials} transforms" + (f", violations {bad[:3]}" if bad else "")


def _rotation_far_from_identity(rng):
    while True:
        r = random_rotation(rng)
        if np.arccos(np.clip((np.trace(r) - 1) / 2, -1, 1)) > 0.2:
            return r


def _all_features(mesh):
    d = build_dual(mesh)
    return {"xyz": face_centroids(mesh), "normal": face_normals(mesh), "area": face_areas(mesh),
            "distcm": distances_to_center_of_mass(mesh), "dihedral": dihedral_table(mesh, d)}


def suite_order_invariance(trials=100, seed=0):
    rng = np.random.default_rng(seed)
    meshes = [shapes.tetrahedron(), shapes.icosahedron(), shapes.icosphere(1)]
    worst = 0.0
    swap_ok = True
    for t in range(trials):
        d = build_dual(meshes[t % 3])
        c_in, c_out = rng.integers(1, 5), rng.integers(1, 5)
        x = rng.normal(size=(d.n_nodes, c_in))
        u = rng.normal(size=(c_out, c_in))
        w = rng.normal(size=(c_out, 3 * c_in))
        shift = int(rng.integers(1, 3))
        rot = d.rotated(shift)
        for fwd in (nn.dualconv_max_forward, nn.dualconv_inv_forward):
            a = fwd(x, d.neighbors, u, w)[0]
            b = fwd(x, rot.neighbors, u, w)[0]
            worst = max(worst, float(np.max(np.abs(a - b))))
        x1, x2, x3 = rng.normal(size=(3, c_in))
        f = nn.symmetric_neighbor_features(x1, x2, x3)
        g = nn.symmetric_neighbor_features(x2, x1, x3)
        k = c_in
        swap_ok &= (np.array_equal(f[:k], g[:k]) and np.array_equal(f[k:2 * k], g[2 * k:])
                    and np.array_equal(f[2 * k:], g[k:2 * k]))
    return worst <= 1e-12 and swap_ok, f"max rotation change {worst:.1e}, transposition swap {swap_ok}"


def suite_row_stochastic():
    worst = 0.0
    const_worst = 0.0
    for mesh in shapes.corpus().values():
        op = nn.Dual2PrimalOp.from_mesh(mesh)
        rows = np.asarray(op.averaging.sum(axis=1)).reshape(-1)
        worst = max(worst, float(np.max(np.abs(rows - 1.0))))
        c = np.array([[1.7, -3.2]])
        out = nn.dual2primal(np.repeat(c, mesh.n_faces, axis=0), op)
        const_worst = max(const_worst, float(np.max(np.abs(out - c))))
    return worst <= 1e-12 and const_worst <= 1e-12, (
        f"max |row sum - 1| {worst:.1e}, constant error {const_worst:.1e}")


def suite_metric_fixtures():
    ref = shapes.icosahedron()
    edge = np.linalg.norm(ref.vertices[ref.faces[0, 0]] - ref.vertices[ref.faces[0, 1]])
    diameter = 3 * edge
    gt = np.arange(ref.n_vertices)
    pred = np.array([int(ref.vertex_neighbors[v][0]) for v in gt])
    rep = evaluate(pred, gt, ref, radii=[0.0, 0.5 * edge, edge, 2 * edge])
    ok = (rep.accuracy == 0.0 and abs(rep.diameter - diameter) < 1e-12
          and abs(rep.mean_geodesic_error - 100.0 * edge / diameter) < 1e-9
          and rep.curve.tolist() == [0.0, 0.0, 1.0, 1.0])
    same = evaluate(gt, gt, ref)
    ok &= same.accuracy == 1.0 and same.mean_geodesic_error == 0.0 and bool(np.all(same.curve == 1.0))
    return ok, f"off-by-one error {rep.mean_geodesic_error:.6f} (expect {100 / 3:.6f})"


SUITES = [
    ("1 dual regularity", suite_dual_regularity),
    ("2 gradient checks", suite_gradients),
    ("3 feature invariances", suite_invariances),
    ("4 order invariance", suite_order_invariance),
    ("5 dual2primal row sums", suite_row_stochastic),
    ("9 metric fixtures", suite_metric_fixtures),
]


def run_all(out=print) -> bool:
    all_ok = True
    out(f"{'suite':<26} {'result':<6} {'time':>7}  detail")
    for name, fn in SUITES:
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashing suite is a failing suite
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        all_ok &= ok
        out(f"{name:<26} {'PASS' if ok else 'FAIL':<6} {time.perf_counter() - t0:6.2f}s  {detail}")
    return all_ok
