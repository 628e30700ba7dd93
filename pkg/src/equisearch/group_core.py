"""Finite permutation groups, their products, and validated group actions.

Groups are stored as explicit element lists. Every group, including abstract
products, is realized as a :class:`PermGroup` so the orbit code only ever sees
permutations of integer indices.
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DEFAULT_GROUP_CAP = 20_000
EXHAUSTIVE_CHECK_CAP = 256
SAMPLED_PAIRS = 1_000


class GroupError(ValueError):
    """Base error for invalid permutations, groups and actions."""


class GroupTooLargeError(GroupError):
    """Closure or product would exceed the configured element cap."""

    def __init__(self, cap: int, what: str = "group"):
        super().__init__(f"{what} too large: more than {cap} elements (raise the cap to allow it)")
        self.cap = cap


class Perm:
    """A bijection on ``{0, ..., D-1}``; ``map[i]`` is the image of ``i``."""

    __slots__ = ("_map", "_key")

    def __init__(self, images: Iterable[int] | np.ndarray, *, check: bool = True):
        arr = np.array(images, dtype=np.int64).reshape(-1)
        if check and not _is_bijection(arr):
            raise GroupError(f"not a permutation of 0..{arr.size - 1}: {_preview(arr)}")
        arr.flags.writeable = False
        self._map = arr
        self._key = arr.tobytes()

    @classmethod
    def identity(cls, degree: int) -> "Perm":
        return cls(np.arange(degree), check=False)

    @classmethod
    def from_cycles(cls, degree: int, *cycles: Sequence[int]) -> "Perm":
        """Build a permutation from disjoint cycles, e.g. ``from_cycles(3, (0, 1, 2))``."""
        arr = np.arange(degree)
        for cyc in cycles:
            for a, b in zip(cyc, list(cyc[1:]) + [cyc[0]]):
                arr[a] = b
        return cls(arr)

    @property
    def map(self) -> np.ndarray:
        return self._map

    @property
    def degree(self) -> int:
        return self._map.size

    @property
    def key(self) -> bytes:
        return self._key

    def is_identity(self) -> bool:
        return bool(np.array_equal(self._map, np.arange(self._map.size)))

    def order(self) -> int:
        p, k = self, 1
        ident = Perm.identity(self.degree)
        while p != ident:
            p = compose(self, p)
            k += 1
        return k

    def __call__(self, i: int) -> int:
        return int(self._map[i])

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Perm) and self._key == other._key

    def __hash__(self) -> int:
        return hash(self._key)

    def __len__(self) -> int:
        return self._map.size

    def __repr__(self) -> str:
        return f"Perm({_preview(self._map)})"


def _is_bijection(arr: np.ndarray) -> bool:
    n = arr.size
    if n == 0:
        return True
    if arr.min() < 0 or arr.max() >= n:
        return False
    seen = np.zeros(n, dtype=bool)
    seen[arr] = True
    return bool(seen.all())


def _preview(arr: np.ndarray, k: int = 12) -> str:
    vals = arr[:k].tolist()
    return "[" + ", ".join(map(str, vals)) + (", ...]" if arr.size > k else "]")


def compose(a: Perm, b: Perm) -> Perm:
    """Return ``a o b``: apply ``b`` first, then ``a``."""
    if a.degree != b.degree:
        raise GroupError(f"degree mismatch: {a.degree} vs {b.degree}")
    return Perm(a.map[b.map], check=False)


def inverse(p: Perm) -> Perm:
    inv = np.empty_like(p.map)
    inv[p.map] = np.arange(p.degree)
    return Perm(inv, check=False)


def act_on_vector(p: Perm | np.ndarray, x: np.ndarray) -> np.ndarray:
    """Move entry ``i`` of ``x`` to position ``p(i)`` along the last axis."""
    m = p.map if isinstance(p, Perm) else p
    out = np.empty_like(x)
    out[..., m] = x
    return out


class PermGroup:
    """A finite group given as a closed list of permutations of one degree.

    Element 0 is always the identity. Construction validates the group
    axioms: exhaustively for groups of at most ``EXHAUSTIVE_CHECK_CAP``
    elements, and by closure under the stored generators (or sampled pairs
    when no generators are known) above that.
    """

    def __init__(
        self,
        elements: Sequence[Perm],
        *,
        generators: Sequence[Perm] | None = None,
        check: bool = True,
        seed: int = 0,
    ):
        if not elements:
            raise GroupError("a group needs at least the identity element")
        degree = elements[0].degree
        uniq: dict[bytes, Perm] = {}
        for p in elements:
            if p.degree != degree:
                raise GroupError(f"degree mismatch: {p.degree} vs {degree}")
            uniq.setdefault(p.key, p)
        ident = Perm.identity(degree)
        if ident.key not in uniq:
            raise GroupError("element list does not contain the identity")
        ordered = [ident] + [p for k, p in uniq.items() if k != ident.key]
        self._elements = tuple(ordered)
        self._index = {p.key: i for i, p in enumerate(self._elements)}
        self._degree = degree
        self._generators = tuple(generators) if generators is not None else None
        self._table: np.ndarray | None = None
        self._array: np.ndarray | None = None
        if check:
            self._validate(seed)

    @property
    def degree(self) -> int:
        return self._degree

    @property
    def elements(self) -> tuple[Perm, ...]:
        return self._elements

    @property
    def generators(self) -> tuple[Perm, ...]:
        if self._generators is not None:
            return self._generators
        return self._elements[1:]

    @property
    def order(self) -> int:
        return len(self._elements)

    def __len__(self) -> int:
        return len(self._elements)

    def __iter__(self):
        return iter(self._elements)

    def __contains__(self, p: Perm) -> bool:
        return p.key in self._index

    def __repr__(self) -> str:
        return f"PermGroup(order={self.order}, degree={self.degree})"

    def index_of(self, p: Perm) -> int:
        try:
            return self._index[p.key]
        except KeyError:
            raise GroupError(f"{p!r} is not an element of this group") from None

    def as_array(self) -> np.ndarray:
        """Elements stacked into an ``(order, degree)`` int64 array."""
        if self._array is None:
            arr = np.stack([p.map for p in self._elements]) if self._degree else np.zeros((self.order, 0), np.int64)
            arr.flags.writeable = False
            self._array = arr
        return self._array

    def multiply(self, i: int, j: int) -> int:
        """Index of ``elements[i] o elements[j]``."""
        if self._table is not None:
            return int(self._table[i, j])
        return self.index_of(compose(self._elements[i], self._elements[j]))

    def table(self) -> np.ndarray:
        """Multiplication table; ``table[i, j]`` indexes ``e_i o e_j``."""
        if self._table is None:
            arr = self.as_array()
            k = self.order
            tab = np.empty((k, k), dtype=np.int64)
            for i in range(k):
                prods = arr[i][arr]  # row j is e_i o e_j
                for j in range(k):
                    idx = self._index.get(prods[j].tobytes())
                    if idx is None:
                        raise GroupError(f"not closed: element {i} o element {j} is missing")
                    tab[i, j] = idx
            tab.flags.writeable = False
            self._table = tab
        return self._table

    def inverse_index(self, i: int) -> int:
        return self.index_of(inverse(self._elements[i]))

    def is_abelian(self) -> bool:
        t = self.table()
        return bool(np.array_equal(t, t.T))

    def element_orders(self) -> list[int]:
        return [p.order() for p in self._elements]

    def _validate(self, seed: int) -> None:
        if self.order <= EXHAUSTIVE_CHECK_CAP:
            self.table()
            for p in self._elements:
                if inverse(p).key not in self._index:
                    raise GroupError(f"not closed under inverses: {p!r}")
            return
        if self._generators is not None:
            for p in self._elements:
                for g in self._generators:
                    if compose(g, p).key not in self._index:
                        raise GroupError("element list not closed under its generators")
            return
        rng = np.random.default_rng(seed)
        k = self.order
        for i, j in rng.integers(0, k, size=(SAMPLED_PAIRS, 2)):
            if compose(self._elements[i], self._elements[j]).key not in self._index:
                raise GroupError(f"not closed: element {i} o element {j} is missing")
        for i in rng.integers(0, k, size=SAMPLED_PAIRS):
            if inverse(self._elements[i]).key not in self._index:
                raise GroupError(f"not closed under inverses: element {i}")


def trivial_group(degree: int) -> PermGroup:
    return PermGroup([Perm.identity(degree)], generators=[])


def close_generators(
    gens: Sequence[Perm], *, degree: int | None = None, cap: int = DEFAULT_GROUP_CAP
) -> PermGroup:
    """Smallest permutation group containing ``gens`` (breadth-first closure).

    Raises :class:`GroupTooLargeError` as soon as the closure exceeds ``cap``.
    """
    gens = list(gens)
    if degree is None:
        if not gens:
            raise GroupError("degree is required when there are no generators")
        degree = gens[0].degree
    for g in gens:
        if g.degree != degree:
            raise GroupError(f"degree mismatch: generator of degree {g.degree}, expected {degree}")
    ident = Perm.identity(degree)
    useful = [g for g in dict.fromkeys(gens) if g != ident]
    seen = {ident.key: ident}
    frontier = [ident]
    while frontier:
        nxt = []
        for x in frontier:
            for g in useful:
                y = compose(g, x)
                if y.key not in seen:
                    seen[y.key] = y
                    if len(seen) > cap:
                        raise GroupTooLargeError(cap)
                    nxt.append(y)
        frontier = nxt
    return PermGroup(list(seen.values()), generators=useful)


def cyclic_group(n: int) -> PermGroup:
    """Z_n acting on ``{0, ..., n-1}`` by shifting."""
    return close_generators([Perm(np.roll(np.arange(n), -1))], degree=n)


@dataclass(frozen=True)
class GroupAction:
    """A homomorphism from ``group`` into permutations of ``domain_size`` points.

    ``perms[k]`` is the image of ``group.elements[k]``.
    """

    group: PermGroup
    perms: tuple[Perm, ...]
    domain_size: int
    check_cap: int = field(default=EXHAUSTIVE_CHECK_CAP, repr=False, compare=False)

    def __post_init__(self):
        if len(self.perms) != self.group.order:
            raise GroupError(f"need one perm per group element: got {len(self.perms)}, order {self.group.order}")
        for p in self.perms:
            if p.degree != self.domain_size:
                raise GroupError(f"action perm of degree {p.degree} on a domain of size {self.domain_size}")
        if not self.perms[0].is_identity():
            raise GroupError("the identity element must act as the identity permutation")
        self._check_homomorphism()

    @classmethod
    def from_arrays(cls, group: PermGroup, perms: np.ndarray | Sequence, **kw) -> "GroupAction":
        perms = [p if isinstance(p, Perm) else Perm(p) for p in perms]
        return cls(group, tuple(perms), perms[0].degree if perms else 0, **kw)

    def _check_homomorphism(self) -> None:
        g = self.group
        k = g.order
        if k <= self.check_cap:
            t = g.table()
            pairs: Iterable = itertools.product(range(k), range(k))
        else:
            rng = np.random.default_rng(0)
            t = None
            pairs = rng.integers(0, k, size=(SAMPLED_PAIRS, 2)).tolist()
        for i, j in pairs:
            ij = t[i, j] if t is not None else g.multiply(i, j)
            if compose(self.perms[i], self.perms[j]) != self.perms[ij]:
                raise GroupError(f"not a homomorphism: action(g{i} g{j}) != action(g{i}) o action(g{j})")

    def as_array(self) -> np.ndarray:
        """Action permutations stacked into a read-only ``(order, domain_size)`` array."""
        return self._array

    @functools.cached_property
    def _array(self) -> np.ndarray:
        arr = np.stack([p.map for p in self.perms]) if self.domain_size else np.zeros((len(self.perms), 0), np.int64)
        arr.flags.writeable = False
        return arr

    def __call__(self, k: int) -> Perm:
        return self.perms[k]


def natural_action(group: PermGroup) -> GroupAction:
    return GroupAction(group, group.elements, group.degree)


def trivial_action(group: PermGroup, domain_size: int) -> GroupAction:
    ident = Perm.identity(domain_size)
    return GroupAction(group, (ident,) * group.order, domain_size)


def regular_action(group: PermGroup) -> GroupAction:
    """Left-multiplication action of ``group`` on its own element indices."""
    t = group.table()
    return GroupAction(group, tuple(Perm(row, check=False) for row in t), group.order)


def regular_block_action(group: PermGroup, width: int) -> GroupAction:
    """``width // |G|`` copies of the regular action, on consecutive blocks."""
    k = group.order
    if width % k:
        raise GroupError(f"width {width} is not a multiple of the group order {k}")
    t = group.table()
    offsets = np.arange(0, width, k)
    perms = tuple(Perm((offsets[:, None] + t[i][None, :]).reshape(-1), check=False) for i in range(k))
    return GroupAction(group, perms, width)


def split_action(group: PermGroup, sizes: Sequence[int]) -> list[GroupAction]:
    """Slice a group on a disjoint union of blocks into one action per block."""
    if sum(sizes) != group.degree:
        raise GroupError(f"block sizes {list(sizes)} do not sum to degree {group.degree}")
    arr = group.as_array()
    out, start = [], 0
    for s in sizes:
        block = arr[:, start:start + s] - start
        out.append(GroupAction(group, tuple(Perm(r) for r in block), s))
        start += s
    return out


def concat_actions(actions: Sequence[GroupAction]) -> list[Perm]:
    """Per-element permutations of the disjoint union of the actions' domains."""
    group = actions[0].group
    for a in actions:
        if a.group is not group:
            raise GroupError("actions are over different groups")
    offsets = np.cumsum([0] + [a.domain_size for a in actions[:-1]])
    return [
        Perm(np.concatenate([a.perms[k].map + off for a, off in zip(actions, offsets)]), check=False)
        for k in range(group.order)
    ]


# -- abstract products, realized by the regular representation ---------------


def _regular_from_table(table: np.ndarray, *, check: bool = True) -> PermGroup:
    # row x of the table is the permutation z -> x*z
    return PermGroup([Perm(row, check=False) for row in table], check=check)


def direct_product(g1: PermGroup, g2: PermGroup, *, cap: int = DEFAULT_GROUP_CAP) -> PermGroup:
    """Block-diagonal product on ``D1 + D2`` points; element ``(a, b)`` has index ``a*|G2| + b``."""
    if g1.order * g2.order > cap:
        raise GroupTooLargeError(cap, "direct product")
    a1, a2 = g1.as_array(), g2.as_array()
    elems = [
        Perm(np.concatenate([a1[i], a2[j] + g1.degree]), check=False)
        for i in range(g1.order)
        for j in range(g2.order)
    ]
    gens = [Perm(np.concatenate([g.map, np.arange(g2.degree) + g1.degree]), check=False) for g in g1.generators]
    gens += [Perm(np.concatenate([np.arange(g1.degree), g.map + g1.degree]), check=False) for g in g2.generators]
    return PermGroup(elems, generators=gens)


def _check_alpha(g1: PermGroup, g2: PermGroup, alpha: np.ndarray) -> None:
    k1, k2 = g1.order, g2.order
    if alpha.shape != (k2, k1):
        raise GroupError(f"alpha must have shape ({k2}, {k1}), got {alpha.shape}")
    if not np.array_equal(alpha[0], np.arange(k1)):
        raise GroupError("alpha(identity) must be the identity automorphism")
    t1, t2 = g1.table(), g2.table()
    for j in range(k2):
        a = alpha[j]
        if not _is_bijection(a):
            raise GroupError(f"alpha(g2[{j}]) is not a bijection of G1")
        # automorphism: a(x*y) == a(x)*a(y)
        bad = np.argwhere(a[t1] != t1[a[:, None], a[None, :]])
        if bad.size:
            x, y = bad[0]
            raise GroupError(f"alpha(g2[{j}]) is not an automorphism: fails on pair (g1[{x}], g1[{y}])")
    for j in range(k2):
        for k in range(k2):
            if not np.array_equal(alpha[t2[j, k]], alpha[j][alpha[k]]):
                raise GroupError(f"alpha is not a homomorphism: fails on pair (g2[{j}], g2[{k}])")


def semidirect_product(
    g1: PermGroup, g2: PermGroup, alpha: np.ndarray | Sequence[Sequence[int]], *, cap: int = DEFAULT_GROUP_CAP
) -> PermGroup:
    """``G1 x| G2`` with ``(a, b)(a', b') = (a * alpha_b(a'), b b')``.

    ``alpha[j][i]`` is the index in ``g1.elements`` of ``alpha_{g2[j]}(g1[i])``.
    The result acts regularly on its own elements; element ``(a, b)`` has
    index ``a*|G2| + b``.
    """
    k1, k2 = g1.order, g2.order
    if k1 * k2 > cap:
        raise GroupTooLargeError(cap, "semidirect product")
    alpha = np.asarray(alpha, dtype=np.int64)
    _check_alpha(g1, g2, alpha)
    t1, t2 = g1.table(), g2.table()
    a = np.repeat(np.arange(k1), k2)
    b = np.tile(np.arange(k2), k1)
    # table[x, y] for x=(a, b), y=(a', b')
    left = t1[a[:, None], alpha[b[:, None], a[None, :]]]
    right = t2[b[:, None], b[None, :]]
    return _regular_from_table(left * k2 + right)


def semidirect_product_table(g1: PermGroup, g2: PermGroup, alpha) -> np.ndarray:
    """Abstract multiplication table of ``G1 x|_alpha G2`` in ``(a, b)`` index order."""
    return semidirect_product(g1, g2, alpha).table()


@dataclass(frozen=True)
class CentralExtension:
    group: PermGroup
    pairs: tuple[tuple[int, int], ...]  # (g1 index, g2 index) of each group element
    factorization_holds: bool
    failing_pairs: tuple[tuple[int, int], ...]


def check_cocycle(g1: PermGroup, g2: PermGroup, psi: np.ndarray) -> tuple[int, int, int] | None:
    """First triple violating the 2-cocycle identity, or ``None``."""
    t1, t2 = g1.table(), g2.table()
    k2 = g2.order
    for g, h, k in itertools.product(range(k2), repeat=3):
        lhs = t1[psi[g, t2[h, k]], psi[h, k]]
        rhs = t1[psi[g, h], psi[t2[g, h], k]]
        if lhs != rhs:
            return g, h, k
    return None


def central_extension(
    g1: PermGroup, g2: PermGroup, psi: np.ndarray | Sequence[Sequence[int]], *, normalized: bool = True,
    cap: int = DEFAULT_GROUP_CAP,
) -> CentralExtension:
    """Central extension of ``G2`` by abelian ``G1`` through the 2-cocycle ``psi``.

    ``psi[i][j]`` is the ``g1`` index of ``psi(g2[i], g2[j])``. Multiplication is
    ``(a, b)(a', b') = (a a' psi(b, b'), b b')``. The result also reports
    whether ``(a, e)(e, b) == (a, b)`` for every pair.

    With ``normalized=False`` the ``psi(e, e) = e`` requirement is dropped;
    such cocycles still define a group, but ``(e, e)`` is then not its
    identity.
    """
    k1, k2 = g1.order, g2.order
    if k1 * k2 > cap:
        raise GroupTooLargeError(cap, "central extension")
    if not g1.is_abelian():
        raise GroupError("central extension needs an abelian kernel group G1")
    psi = np.asarray(psi, dtype=np.int64)
    if psi.shape != (k2, k2) or psi.min() < 0 or psi.max() >= k1:
        raise GroupError(f"psi must be a ({k2}, {k2}) table of G1 indices")
    if normalized and psi[0, 0] != 0:
        raise GroupError("psi(e, e) must be the identity of G1")
    bad = check_cocycle(g1, g2, psi)
    if bad is not None:
        raise GroupError(f"psi violates the cocycle identity at (g2[{bad[0]}], g2[{bad[1]}], g2[{bad[2]}])")
    t1, t2 = g1.table(), g2.table()
    a = np.repeat(np.arange(k1), k2)
    b = np.tile(np.arange(k2), k1)
    left = t1[t1[a[:, None], a[None, :]], psi[b[:, None], b[None, :]]]
    right = t2[b[:, None], b[None, :]]
    table = left * k2 + right
    # the identity row is the one acting as the identity permutation
    ident_rows = np.flatnonzero((table == np.arange(k1 * k2)).all(axis=1))
    if ident_rows.size != 1:
        raise GroupError("psi does not define a group")
    rows = [int(ident_rows[0])] + [x for x in range(k1 * k2) if x != ident_rows[0]]
    group = PermGroup([Perm(table[x], check=False) for x in rows])
    pairs = tuple((x // k2, x % k2) for x in rows)
    failing = []
    for i in range(k1):
        for j in range(k2):
            x, y = i * k2, j  # (g1_i, e) and (e, g2_j)
            if table[x, y] != i * k2 + j:
                failing.append((i, j))
    return CentralExtension(group, pairs, not failing, tuple(failing))


def isomorphic_tables(t1: np.ndarray, t2: np.ndarray, relabel: np.ndarray) -> bool:
    """True when ``relabel`` maps table ``t1`` onto ``t2`` (``relabel[t1[x,y]] == t2[relabel[x], relabel[y]]``)."""
    return bool(np.array_equal(relabel[t1], t2[relabel[:, None], relabel[None, :]]))


def find_isomorphism(t1: np.ndarray, t2: np.ndarray) -> np.ndarray | None:
    """Brute-force backtracking isomorphism search between small multiplication tables."""
    n = t1.shape[0]
    if t2.shape[0] != n:
        return None
    ord1 = _orders_from_table(t1)
    ord2 = _orders_from_table(t2)
    if sorted(ord1) != sorted(ord2):
        return None
    phi = -np.ones(n, dtype=np.int64)
    phi[0] = 0
    used = np.zeros(n, dtype=bool)
    used[0] = True

    def consistent() -> bool:
        known = np.flatnonzero(phi >= 0)
        for x in known:
            for y in known:
                z = t1[x, y]
                if phi[z] >= 0 and phi[z] != t2[phi[x], phi[y]]:
                    return False
        return True

    def extend(pos: int) -> bool:
        if pos == n:
            return True
        if phi[pos] >= 0:
            return extend(pos + 1)
        for cand in range(n):
            if used[cand] or ord2[cand] != ord1[pos]:
                continue
            phi[pos] = cand
            used[cand] = True
            if consistent() and extend(pos + 1):
                return True
            phi[pos] = -1
            used[cand] = False
        return False

    return phi.copy() if extend(1) else None


def _orders_from_table(t: np.ndarray) -> list[int]:
    out = []
    for x in range(t.shape[0]):
        k, y = 1, x
        while y != 0:
            y = t[x, y]
            k += 1
        out.append(k)
    return out


# -- permutation text format ---------------------------------------------------


def parse_perm_lines(text: str, *, source: str = "<string>") -> list[Perm]:
    """Parse one permutation per line (space-separated images); ``#`` starts a comment."""
    perms = []
    degree = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            vals = [int(tok) for tok in line.split()]
        except ValueError:
            raise GroupError(f"{source}:{lineno}: malformed permutation line") from None
        if degree is None:
            degree = len(vals)
        elif len(vals) != degree:
            raise GroupError(f"{source}:{lineno}: degree {len(vals)} differs from earlier lines ({degree})")
        try:
            perms.append(Perm(vals))
        except GroupError as exc:
            raise GroupError(f"{source}:{lineno}: {exc}") from None
    return perms


def format_perm_lines(perms: Sequence[Perm], header: str | None = None) -> str:
    lines = [f"# {h}" for h in header.splitlines()] if header else []
    lines += [" ".join(map(str, p.map.tolist())) for p in perms]
    return "\n".join(lines) + "\n"


def load_group_file(path: str | Path, *, degree: int | None = None, cap: int = DEFAULT_GROUP_CAP) -> PermGroup:
    """Load generator lines from ``path`` and close them into a group."""
    path = Path(path)
    gens = parse_perm_lines(path.read_text(), source=str(path))
    if degree is not None and gens and gens[0].degree != degree:
        raise GroupError(f"{path}: permutations have degree {gens[0].degree}, expected {degree}")
    if not gens and degree is None:
        raise GroupError(f"{path}: no permutations and no degree given")
    return close_generators(gens, degree=degree, cap=cap)


def save_group_file(group: PermGroup, path: str | Path, header: str | None = None) -> None:
    Path(path).write_text(format_perm_lines(list(group.generators), header))
