"""Shared test geometry: randomized triangle pairs per adjacency case."""

import numpy as np


def _rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def _apex(rng, s):
    # A point over the segment (0,0,0)-(s,0,0) giving a well-shaped triangle.
    u = rng.uniform(0.25, 0.75)
    h = rng.uniform(0.5, 1.1)
    return np.array([u * s, h * s, 0.0])


def random_pair(case, rng):
    """One triangle pair of the given adjacency case, edge lengths ~[0.1, 2].

    Shared simplices follow the pair rule conventions: common vertex at
    local index 0 of both triangles, common edge at locals (0, 1) of both,
    traversed in the same direction.
    """
    s = rng.uniform(0.1, 2.0)
    if case == "coincident":
        ta = np.vstack([[0, 0, 0], [s, 0, 0], _apex(rng, s)])
        tb = ta.copy()
    elif case == "common_edge":
        ta = np.vstack([[0, 0, 0], [s, 0, 0], _apex(rng, s)])
        phi = rng.uniform(np.pi / 6, 2 * np.pi - np.pi / 6)
        c, si = np.cos(phi), np.sin(phi)
        b = _apex(rng, s)
        tb = np.vstack([[0, 0, 0], [s, 0, 0], [b[0], c * b[1], si * b[1]]])
    elif case == "common_vertex":
        ta = np.vstack([[0, 0, 0], [s, 0, 0], _apex(rng, s)])
        # Both far vertices of the second triangle sit at x < 0, so its
        # convex hull meets the x >= 0 half space at the origin only.
        t = rng.uniform(0.3, 1.5) * s
        tb = np.array(
            [
                [0.0, 0.0, 0.0],
                [-t, rng.uniform(-0.3, 0.3) * t, 0.2 * t],
                [-rng.uniform(0.3, 1.2) * t, -0.6 * t, rng.uniform(-0.8, 0.8) * t],
            ]
        )
    elif case == "separated":
        ta = np.vstack([[0, 0, 0], [s, 0, 0], _apex(rng, s)])
        off = np.array(
            [rng.uniform(4.0, 6.0) * s, rng.uniform(-0.5, 0.5) * s, 0.5 * s]
        )
        tb = np.vstack([[0, 0, 0], [s, 0, 0], _apex(rng, s)]) + off
    else:
        raise ValueError(case)
    rot = _rotation(rng)
    shift = rng.uniform(-1, 1, size=3)
    return ta @ rot.T + shift, tb @ rot.T + shift
