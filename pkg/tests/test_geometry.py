import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_neighborhood
from tugobstacle.errors import EmptyInterior, FatteningTooThin, RadiusExceedsFattening
from tugobstacle.geometry import (
    DomainSpec,
    ball_neighborhood,
    build_grid,
    distance_to_domain,
    grid_from_json,
    grid_to_json,
)


def unit_interval_grid():
    return build_grid(DomainSpec.interval(0.0, 1.0), 0.25, 0.3)


def node_at(grid, *coords):
    return grid.nearest_node(np.array(coords, dtype=float))


# -- worked examples


def test_interval_classification():
    g = unit_interval_grid()
    assert g.nodes[g.interior, 0].tolist() == [0.25, 0.5, 0.75]
    assert g.nodes[g.boundary, 0].tolist() == [-0.25, 0.0, 1.0, 1.25]


def test_coarse_disc_keeps_the_origin():
    g = build_grid(DomainSpec.disc((0.0, 0.0), 1.0), 2.5, 3.0)
    assert g.nodes[g.interior].tolist() == [[0.0, 0.0]]


def test_fattening_equal_to_spacing_rejected():
    with pytest.raises(FatteningTooThin):
        build_grid(DomainSpec.interval(0.0, 1.0), 0.25, 0.25)
    with pytest.raises(FatteningTooThin):
        build_grid(DomainSpec.disc((0.0, 0.0), 1.0), 0.1, 0.05)


def test_empty_interior():
    with pytest.raises(EmptyInterior):
        build_grid(DomainSpec.interval(0.3, 0.45), 0.25, 0.3)


@pytest.mark.parametrize(
    "center,eps,expected",
    [(0.5, 0.3, [0.25, 0.5, 0.75]), (0.25, 0.3, [0.0, 0.25, 0.5]), (0.5, 0.125, [0.5])],
)
def test_ball_neighborhood_examples(center, eps, expected):
    g = unit_interval_grid()
    nb = ball_neighborhood(g, node_at(g, center), eps)
    assert g.nodes[nb.members, 0].tolist() == expected
    assert nb.center == node_at(g, center)


def test_ball_is_open():
    g = unit_interval_grid()
    nb = ball_neighborhood(g, node_at(g, 0.5), 0.25)
    assert g.nodes[nb.members, 0].tolist() == [0.5]


def test_radius_beyond_fattening():
    g = unit_interval_grid()
    with pytest.raises(RadiusExceedsFattening):
        ball_neighborhood(g, node_at(g, 0.5), 0.31)


@pytest.mark.parametrize(
    "domain,x,d",
    [
        (DomainSpec.disc((0.0, 0.0), 1.0), (2.0, 0.0), 1.0),
        (DomainSpec.interval(0.0, 1.0), (-0.25,), 0.25),
        (DomainSpec.annulus((0.0, 0.0), 1.0, 2.0), (0.0, 0.0), 1.0),
        (DomainSpec.box((0.0, 0.0), (1.0, 2.0)), (4.0, 6.0), 5.0),
        (DomainSpec.annulus((0.0, 0.0), 1.0, 2.0), (1.5, 0.0), 0.0),
    ],
)
def test_distance_examples(domain, x, d):
    assert distance_to_domain(domain, x) == pytest.approx(d, abs=1e-15)


# -- invariants

DOMAINS = [
    DomainSpec.interval(-0.3, 0.8),
    DomainSpec.box((0.0, -0.5), (1.0, 0.4)),
    DomainSpec.disc((0.1, -0.2), 0.7),
    DomainSpec.annulus((0.0, 0.0), 0.4, 1.0),
]


@pytest.mark.parametrize("domain", DOMAINS, ids=lambda d: d.shape)
def test_classification_invariants(domain):
    h = 0.05
    eps0 = 0.17
    g = build_grid(domain, h, eps0)
    assert np.all(domain.contains(g.nodes[g.interior]))
    bnd = g.nodes[g.boundary]
    assert not np.any(domain.contains(bnd))
    assert np.all(domain.distance(bnd) < eps0)
    # lexicographic order
    assert all(tuple(a) < tuple(b) for a, b in zip(g.lattice[:-1].tolist(), g.lattice[1:].tolist()))
    # every lattice point close to the domain is a node
    lo, hi = domain.bounds()
    ranges = [np.arange(math.floor((l - eps0) / h) - 1, math.ceil((u + eps0) / h) + 2) for l, u in zip(lo, hi)]
    full = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1).reshape(-1, domain.dim)
    near = full[domain.distance(full * h) < eps0]
    assert len(near) == g.n_nodes
    assert np.all(g.index_of(near) >= 0)


@pytest.mark.parametrize("domain", DOMAINS, ids=lambda d: d.shape)
def test_moves_never_leave_the_grid(domain):
    g = build_grid(domain, 0.05, 0.17)
    table = g.neighbor_table(0.17)
    assert np.all(table.nbr >= 0)


@settings(max_examples=25, deadline=None)
@given(
    domain=st.sampled_from(DOMAINS),
    h=st.sampled_from([0.04, 0.05, 0.0625, 0.1]),
    ratio=st.floats(0.3, 4.0),
    data=st.data(),
)
def test_neighborhoods_match_brute_force(domain, h, ratio, data):
    eps = ratio * h
    g = build_grid(domain, h, eps + h)
    nodes = g.nodes
    picks = data.draw(st.lists(st.integers(0, g.n_nodes - 1), min_size=1, max_size=8))
    for node in picks:
        nb = ball_neighborhood(g, node, eps)
        expected = brute_neighborhood(nodes, node, eps)
        assert nb.members.tolist() == expected.tolist()
        assert node in nb.members


def test_neighborhood_symmetry_among_interior_nodes():
    g = build_grid(DomainSpec.disc((0.0, 0.0), 1.0), 0.05, 0.3)
    eps = 0.23
    inner = set(g.interior.tolist())
    members = {int(x): set(ball_neighborhood(g, x, eps).members.tolist()) for x in g.interior}
    for x, ms in members.items():
        for y in ms & inner:
            assert x in members[y]


@pytest.mark.parametrize("dim,minimum", [(1, 3), (2, 5)])
def test_neighborhood_cardinality_grows_with_refinement(dim, minimum):
    domain = DomainSpec.interval(0.0, 1.0) if dim == 1 else DomainSpec.disc((0.0, 0.0), 1.0)
    eps = 0.2
    sizes = []
    for h in (0.1, 0.05, 0.04, 0.025, 0.02):
        g = build_grid(domain, h, eps + h)
        k = g.neighbor_table(eps).size
        sizes.append(k)
        if h <= eps / 2:
            assert k >= minimum
    assert sizes == sorted(sizes)


def test_builds_are_deterministic():
    a = build_grid(DomainSpec.annulus((0.0, 0.0), 1.0, 2.0), 0.1, 0.25)
    b = build_grid(DomainSpec.annulus((0.0, 0.0), 1.0, 2.0), 0.1, 0.25)
    np.testing.assert_array_equal(a.lattice, b.lattice)
    np.testing.assert_array_equal(a.is_interior, b.is_interior)


@settings(max_examples=200, deadline=None)
@given(
    domain=st.sampled_from(DOMAINS),
    x=st.lists(st.floats(-2.0, 2.0), min_size=2, max_size=2),
)
def test_distance_zero_exactly_on_closure(domain, x):
    pt = np.array(x[: domain.dim])
    d = distance_to_domain(domain, pt)
    assert d >= 0
    if domain.contains(pt[None])[0]:
        assert d == 0.0
    if d > 0:
        assert not domain.contains(pt[None])[0]


def test_grid_json_round_trip():
    g = build_grid(DomainSpec.disc((0.0, 0.0), 1.0), 0.1, 0.25)
    doc = grid_to_json(g)
    assert set(["h", "eps0", "N", "nodes", "class"]) <= set(doc)
    back = grid_from_json(doc)
    np.testing.assert_array_equal(back.lattice, g.lattice)
    np.testing.assert_array_equal(back.is_interior, g.is_interior)


def test_domain_json_round_trip():
    for d in DOMAINS:
        assert DomainSpec.from_json(d.to_json()) == d
    with pytest.raises(ValueError):
        DomainSpec.from_json({"shape": "triangle"})
