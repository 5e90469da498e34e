"""Finite multiplication tables: groups of small order, the 16-element
octonion unit loop, and random Latin squares.

Tables are (n, n) integer arrays with table[i, j] = index of element i * j.
"""

import itertools

import numpy as np

from .errors import InvalidArgumentError

# Oriented Fano lines (a, b, c): e_a e_b = +e_c cyclically. This orientation
# matches the Cayley-Dickson doubling with (a,b)(c,d) = (ac - d*b, da + bc*),
# which the tests use as an independent oracle.
FANO_TRIPLES = ((1, 2, 3), (1, 4, 5), (1, 7, 6), (2, 4, 6),
                (2, 5, 7), (3, 4, 7), (3, 6, 5))


def cayley_dickson_multiply(x, y):
    """Product in the 2^n-dimensional Cayley-Dickson algebra over the reals."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(x)
    if n != len(y) or n & (n - 1):
        raise InvalidArgumentError("operands must share a power-of-two length")
    if n == 1:
        return x * y

    def conj(u):
        v = -u
        v[0] = u[0]
        return v

    h = n // 2
    a, b = x[:h], x[h:]
    c, d = y[:h], y[h:]
    return np.concatenate([
        cayley_dickson_multiply(a, c) - cayley_dickson_multiply(conj(d.copy()), b),
        cayley_dickson_multiply(d, a) + cayley_dickson_multiply(b, conj(c.copy())),
    ])


def _basis_product(i, j, triples):
    """Sign and index of e_i e_j under Fano-style rules."""
    if i == 0:
        return 1, j
    if j == 0:
        return 1, i
    if i == j:
        return -1, 0
    for a, b, c in triples:
        line = (a, b, c)
        if i in line and j in line:
            k = next(x for x in line if x not in (i, j))
            pos = ((a, b), (b, c), (c, a))
            return (1, k) if (i, j) in pos else (-1, k)
    raise InvalidArgumentError(f"basis pair ({i}, {j}) lies on no line")


def _signed_loop_table(n_basis, triples):
    """Unit loop {+-e_0 .. +-e_(n_basis-1)}: index i + n_basis * sign_bit."""
    n = 2 * n_basis
    table = np.empty((n, n), dtype=np.intp)
    for x in range(n):
        sx, ix = x // n_basis, x % n_basis
        for y in range(n):
            sy, iy = y // n_basis, y % n_basis
            sgn, k = _basis_product(ix, iy, triples)
            neg = (sgn < 0) ^ bool(sx) ^ bool(sy)
            table[x, y] = k + n_basis * int(neg)
    return table


def octonion_loop_table():
    """16-element octonion unit loop from the oriented Fano plane."""
    return _signed_loop_table(8, FANO_TRIPLES)


def quaternion_table():
    """The quaternion group Q8 as a signed loop over 1, i, j, k."""
    return _signed_loop_table(4, ((1, 2, 3),))


def cyclic_table(n):
    i = np.arange(n)
    return (i[:, None] + i[None, :]) % n


def direct_product_table(t1, t2):
    t1 = np.asarray(t1)
    t2 = np.asarray(t2)
    n2 = len(t2)
    i = np.arange(len(t1) * n2)
    a, b = i // n2, i % n2
    return t1[np.ix_(a, a)] * n2 + t2[np.ix_(b, b)]


def dihedral_table(n):
    """Dihedral group of order 2n; element r^i s^e encoded as i + n*e."""
    size = 2 * n
    table = np.empty((size, size), dtype=np.intp)
    for x in range(size):
        i, e = x % n, x // n
        for y in range(size):
            j, f = y % n, y // n
            rot = (i + (j if e == 0 else -j)) % n
            table[x, y] = rot + n * ((e + f) % 2)
    return table


def symmetric3_table():
    """S3 as composition of the 6 permutations of (0, 1, 2), lexicographic."""
    perms = list(itertools.permutations(range(3)))
    index = {p: i for i, p in enumerate(perms)}
    table = np.empty((6, 6), dtype=np.intp)
    for i, p in enumerate(perms):
        for j, q in enumerate(perms):
            table[i, j] = index[tuple(p[q[x]] for x in range(3))]
    return table


def all_groups_up_to_order_8():
    """Every group of order <= 8 (14 of them), as (name, table) pairs."""
    c2 = cyclic_table(2)
    c4 = cyclic_table(4)
    return [
        ("C1", cyclic_table(1)),
        ("C2", c2),
        ("C3", cyclic_table(3)),
        ("C4", c4),
        ("C2xC2", direct_product_table(c2, c2)),
        ("C5", cyclic_table(5)),
        ("C6", cyclic_table(6)),
        ("S3", symmetric3_table()),
        ("C7", cyclic_table(7)),
        ("C8", cyclic_table(8)),
        ("C2xC4", direct_product_table(c2, c4)),
        ("C2xC2xC2", direct_product_table(c2, direct_product_table(c2, c2))),
        ("D4", dihedral_table(4)),
        ("Q8", quaternion_table()),
    ]


def is_latin(table):
    table = np.asarray(table)
    n = len(table)
    want = np.arange(n)
    rows = np.all(np.sort(table, axis=1) == want, axis=None)
    cols = np.all(np.sort(table, axis=0) == want[:, None], axis=None)
    return bool(rows and cols)


def random_latin_square(n, seed):
    """Random isotope of the cyclic table: pi[(sigma[i] + tau[j]) mod n].

    Isotopes of groups are quasigroups but generically neither associative
    nor Moufang, which is exactly what the soundness probes need.
    """
    rng = np.random.default_rng(seed)
    pi = rng.permutation(n)
    sigma = rng.permutation(n)
    tau = rng.permutation(n)
    return pi[(sigma[:, None] + tau[None, :]) % n]
