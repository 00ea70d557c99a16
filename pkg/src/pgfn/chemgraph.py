"""Fragment vocabulary, assembled molecule trees, hashing, and fingerprints.

Molecules are trees of typed fragments joined at numbered attachment stems.
A new fragment always bonds through its stem 0, which keeps the forward
action space to (open stem x fragment type). Fragment interiors are opaque:
no atom-level chemistry here.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    EmptyMolecule,
    InvariantViolation,
    LengthMismatch,
    ParseError,
    StemOccupied,
    UnknownFragment,
    VocabMismatch,
)

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

EMPTY_HASH = 0  # sentinel canonical hash of the empty molecule


def fnv1a64(data: bytes) -> int:
    """FNV-1a 64-bit hash; fixed so fingerprints are identical everywhere."""
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & _MASK64
    return h


def _u64(x: int) -> bytes:
    return int(x).to_bytes(8, "little")


@dataclass(frozen=True)
class FragmentType:
    """One entry of the building-block vocabulary."""

    id: int
    label: str
    arity: int

    def __post_init__(self):
        if self.arity < 1:
            raise InvariantViolation(f"fragment {self.label!r}: arity must be >= 1")


@dataclass(frozen=True)
class FragmentVocab:
    """Ordered fragment set; order is part of the identity (action indexing)."""

    fragments: tuple[FragmentType, ...]
    version: str = "default"

    def __post_init__(self):
        if not self.fragments:
            raise InvariantViolation("vocabulary must be non-empty")
        ids = [f.id for f in self.fragments]
        if ids != list(range(len(self.fragments))):
            raise InvariantViolation("fragment ids must be dense 0..V-1 in order")
        labels = [f.label for f in self.fragments]
        if len(set(labels)) != len(labels):
            raise InvariantViolation("fragment labels must be unique")

    def __len__(self) -> int:
        return len(self.fragments)

    def __getitem__(self, frag_id: int) -> FragmentType:
        return self.fragments[frag_id]

    def arity(self, frag_id: int) -> int:
        return self.fragments[frag_id].arity

    @property
    def max_arity(self) -> int:
        return max(f.arity for f in self.fragments)


def save_vocab(vocab: FragmentVocab, path) -> None:
    lines = [f"#fragvocab v1 {vocab.version}"]
    for f in vocab.fragments:
        lines.append(f"{f.id}\t{f.label}\t{f.arity}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_vocab(path) -> FragmentVocab:
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith("#fragvocab v1 "):
        raise ParseError(f"{path}: missing '#fragvocab v1' header")
    version = lines[0][len("#fragvocab v1 "):].strip()
    frags = []
    for ln in lines[1:]:
        parts = ln.split("\t")
        if len(parts) != 3:
            raise ParseError(f"{path}: bad vocabulary line {ln!r}")
        try:
            frags.append(FragmentType(int(parts[0]), parts[1], int(parts[2])))
        except ValueError as exc:
            raise ParseError(f"{path}: bad vocabulary line {ln!r}") from exc
    return FragmentVocab(tuple(frags), version=version)


@dataclass(frozen=True, eq=False)
class PartialMol:
    """A (possibly empty) connected tree of fragments with open stems.

    Node ids are positions in `nodes`. Edges record (nodeA, stemA, nodeB,
    stemB); each (node, stem) pair is used by at most one edge. Immutable.
    """

    vocab: FragmentVocab = field(repr=False)
    nodes: tuple[int, ...] = ()
    edges: tuple[tuple[int, int, int, int], ...] = ()

    def __post_init__(self):
        self._validate()
        object.__setattr__(self, "_canon", None)

    # labeled structural equality; isomorphism goes through canonical_hash
    def __eq__(self, other):
        if not isinstance(other, PartialMol):
            return NotImplemented
        return self.nodes == other.nodes and self.edges == other.edges

    def __hash__(self):
        return hash((self.nodes, self.edges))

    def _validate(self) -> None:
        n = len(self.nodes)
        v = len(self.vocab)
        for frag in self.nodes:
            if not 0 <= frag < v:
                raise UnknownFragment(f"fragment id {frag} outside vocabulary")
        if len(self.edges) != max(0, n - 1):
            raise InvariantViolation("edge count must be |nodes| - 1")
        used = set()
        adj = [[] for _ in range(n)]
        for a, sa, b, sb in self.edges:
            if not (0 <= a < n and 0 <= b < n) or a == b:
                raise InvariantViolation(f"bad edge ({a},{sa},{b},{sb})")
            if sa >= self.vocab.arity(self.nodes[a]) or sb >= self.vocab.arity(self.nodes[b]):
                raise InvariantViolation(f"stem index out of range in edge ({a},{sa},{b},{sb})")
            for key in ((a, sa), (b, sb)):
                if key in used:
                    raise InvariantViolation(f"stem {key} used twice")
                used.add(key)
            adj[a].append(b)
            adj[b].append(a)
        if n > 1:
            seen = {0}
            stack = [0]
            while stack:
                for nb in adj[stack.pop()]:
                    if nb not in seen:
                        seen.add(nb)
                        stack.append(nb)
            if len(seen) != n:
                raise InvariantViolation("molecule graph is not connected")

    @classmethod
    def empty(cls, vocab: FragmentVocab) -> "PartialMol":
        return cls(vocab=vocab)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def is_empty(self) -> bool:
        return not self.nodes

    def adjacency(self) -> list[list[tuple[int, int, int]]]:
        """Per node: list of (own stem, neighbor stem, neighbor id)."""
        adj = [[] for _ in self.nodes]
        for a, sa, b, sb in self.edges:
            adj[a].append((sa, sb, b))
            adj[b].append((sb, sa, a))
        return adj

    @property
    def open_stems(self) -> tuple[tuple[int, int], ...]:
        """Unused (nodeId, stemIndex) pairs, sorted; the canonical action order."""
        used = set()
        for a, sa, b, sb in self.edges:
            used.add((a, sa))
            used.add((b, sb))
        out = []
        for node, frag in enumerate(self.nodes):
            for stem in range(self.vocab.arity(frag)):
                if (node, stem) not in used:
                    out.append((node, stem))
        return tuple(out)


def attach(mol: PartialMol, stem: tuple[int, int] | None, frag: int) -> PartialMol:
    """Bond a new fragment's stem 0 to an open stem of `mol`.

    For an empty molecule the stem is ignored and `frag` becomes the root.
    """
    if not 0 <= frag < len(mol.vocab):
        raise UnknownFragment(f"fragment id {frag} outside vocabulary")
    if mol.is_empty():
        return PartialMol(vocab=mol.vocab, nodes=(frag,))
    if stem is None or stem not in mol.open_stems:
        raise StemOccupied(f"stem {stem} is not open")
    new_id = mol.n_nodes
    return PartialMol(
        vocab=mol.vocab,
        nodes=mol.nodes + (frag,),
        edges=mol.edges + ((stem[0], stem[1], new_id, 0),),
    )


def _remove_leaf(mol: PartialMol, node: int) -> PartialMol:
    """Drop a degree-<=1 node and re-densify ids (ids above shift down)."""
    nodes = mol.nodes[:node] + mol.nodes[node + 1:]
    edges = []
    for a, sa, b, sb in mol.edges:
        if a == node or b == node:
            continue
        edges.append((a - (a > node), sa, b - (b > node), sb))
    return PartialMol(vocab=mol.vocab, nodes=nodes, edges=tuple(edges))


def leaf_parents(mol: PartialMol) -> list[tuple[PartialMol, int]]:
    """Predecessor states, one entry per removable leaf.

    A leaf is removable when some forward `attach` on the reduced molecule
    rebuilds an isomorphic copy; leaves bonded through their stem 0 always
    qualify, a root bonded through a higher stem only via a matching rebuild.
    """
    if mol.is_empty():
        raise EmptyMolecule("empty molecule has no parents")
    if mol.n_nodes == 1:
        return [(PartialMol.empty(mol.vocab), 0)]
    degree = [0] * mol.n_nodes
    incident: dict[int, tuple[int, int, int, int]] = {}
    for a, sa, b, sb in mol.edges:
        degree[a] += 1
        degree[b] += 1
        incident[a] = (a, sa, b, sb)
        incident[b] = (a, sa, b, sb)
    out = []
    target = canonical_hash(mol)
    for v in range(mol.n_nodes):
        if degree[v] != 1:
            continue
        a, sa, b, sb = incident[v]
        own_stem = sa if a == v else sb
        parent = _remove_leaf(mol, v)
        if own_stem == 0:
            out.append((parent, v))
            continue
        # non-stem-0 leaf (an original root): removable only if a rebuild
        # from the parent happens to be isomorphic
        frag = mol.nodes[v]
        if any(
            canonical_hash(attach(parent, s, frag)) == target
            for s in parent.open_stems
        ):
            out.append((parent, v))
    return out


def _wl_rounds(mol: PartialMol, rounds: int) -> list[list[int]]:
    """Per-round Weisfeiler-Lehman node hashes (round 0 = fragment type only)."""
    adj = mol.adjacency()
    labels = [fnv1a64(b"N" + _u64(f)) for f in mol.nodes]
    history = [labels]
    for _ in range(rounds):
        prev = history[-1]
        nxt = []
        for v, frag in enumerate(mol.nodes):
            parts = sorted((sv, su, prev[u]) for sv, su, u in adj[v])
            data = b"R" + _u64(frag)
            for sv, su, h in parts:
                data += _u64(sv) + _u64(su) + _u64(h)
            nxt.append(fnv1a64(data))
        history.append(nxt)
    return history

def canonical_hash(mol: PartialMol) -> int:
    """64-bit hash invariant under node relabeling; 0 for the empty molecule."""
    cached = getattr(mol, "_canon", None)
    if cached is not None:
        return cached
    if mol.is_empty():
        value = EMPTY_HASH
    else:
        final = _wl_rounds(mol, rounds=mol.n_nodes)[-1]
        data = b"G" + _u64(mol.n_nodes)
        for h in sorted(final):
            data += _u64(h)
        value = fnv1a64(data)
    object.__setattr__(mol, "_canon", value)
    return value


@dataclass(frozen=True)
class Fingerprint:
    """Fixed-length bit set stored as a Python int bitmask."""

    length: int
    bits: int
    n_set: int

    @classmethod
    def from_indices(cls, indices: Iterable[int], length: int) -> "Fingerprint":
        mask = 0
        for i in indices:
            mask |= 1 << (i % length)
        return cls(length=length, bits=mask, n_set=mask.bit_count())

    def indices(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.length) if (self.bits >> i) & 1)

    def to_dense(self) -> np.ndarray:
        raw = self.bits.to_bytes((self.length + 7) // 8, "little")
        dense = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little")
        return dense[: self.length].astype(np.float64)

    def to_hex(self) -> str:
        return format(self.bits, f"0{(self.length + 3) // 4}x")

    @classmethod
    def from_hex(cls, text: str, length: int) -> "Fingerprint":
        if len(text) != (length + 3) // 4:
            raise ParseError(f"fingerprint hex width {len(text)} does not match length {length}")
        try:
            mask = int(text, 16)
        except ValueError as exc:
            raise ParseError(f"bad fingerprint hex {text!r}") from exc
        if mask >> length:
            raise ParseError("fingerprint hex has bits beyond its length")
        return cls(length=length, bits=mask, n_set=mask.bit_count())


def fingerprint(mol: PartialMol, radius: int = 3, bits: int = 2048) -> Fingerprint:
    """Circular fingerprint over the fragment graph.

    One bit per (node, neighborhood radius r in 0..radius); bit index is the
    r-round WL hash mod `bits`.
    """
    if mol.is_empty():
        raise EmptyMolecule("cannot fingerprint the empty molecule")
    history = _wl_rounds(mol, rounds=radius)
    return Fingerprint.from_indices(
        (h % bits for level in history for h in level), length=bits
    )


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    """|A & B| / |A | B|, with 0/0 defined as 1.0."""
    if a.length != b.length:
        raise LengthMismatch(f"fingerprint lengths differ: {a.length} vs {b.length}")
    union = (a.bits | b.bits).bit_count()
    if union == 0:
        return 1.0
    return (a.bits & b.bits).bit_count() / union


# -- assembly-string serialization --------------------------------------------
# format: v1|n:<fragId>,<fragId>,...|e:<a>.<sa>-<b>.<sb>;...   ("v1|" when empty)

def serialize(mol: PartialMol) -> str:
    if mol.is_empty():
        return "v1|"
    parts = ["v1", "n:" + ",".join(str(f) for f in mol.nodes)]
    edges = ";".join(f"{a}.{sa}-{b}.{sb}" for a, sa, b, sb in mol.edges)
    parts.append("e:" + edges)
    return "|".join(parts)


def parse(text: str, vocab: FragmentVocab) -> PartialMol:
    text = text.strip()
    if not text.startswith("v1|"):
        raise ParseError(f"assembly string must start with 'v1|': {text!r}")
    body = text[len("v1|"):]
    if not body:
        return PartialMol.empty(vocab)
    sections = body.split("|")
    if len(sections) != 2 or not sections[0].startswith("n:") or not sections[1].startswith("e:"):
        raise ParseError(f"malformed assembly string {text!r}")
    try:
        nodes = tuple(int(t) for t in sections[0][2:].split(","))
    except ValueError as exc:
        raise ParseError(f"bad node list in {text!r}") from exc
    for frag in nodes:
        if not 0 <= frag < len(vocab):
            raise VocabMismatch(f"fragment id {frag} not in vocabulary {vocab.version!r}")
    edges = []
    edge_body = sections[1][2:]
    if edge_body:
        for item in edge_body.split(";"):
            try:
                left, right = item.split("-")
                a, sa = left.split(".")
                b, sb = right.split(".")
                edges.append((int(a), int(sa), int(b), int(sb)))
            except ValueError as exc:
                raise ParseError(f"bad edge field {item!r} in {text!r}") from exc
    try:
        return PartialMol(vocab=vocab, nodes=nodes, edges=tuple(edges))
    except UnknownFragment as exc:
        raise VocabMismatch(str(exc)) from exc
