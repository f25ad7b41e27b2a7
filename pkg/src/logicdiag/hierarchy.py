"""Tree-shaped label hierarchy: parsing, validation, and structural queries.

The hierarchy file format is JSON: a node is an object with a required
"name" and an optional non-empty "children" array (leaves omit the key).
The top level is either a single root node or an array of nodes; in the
array case a virtual root named "Root" is inserted automatically.

Concept ids are assigned in document order (depth-first, parents before
children), so id 0 is always the root and the id table is reproducible
across runs and tools. Leaves sit at level 1, the root at level
``num_levels``; non-uniform leaf depth is rejected at parse time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import HierarchyFormatError, ValidationError

VIRTUAL_ROOT_NAME = "Root"

_NODE_KEYS = {"name", "children"}


@dataclass(frozen=True)
class ConceptNode:
    name: str
    concept_id: int


class LabelHierarchy:
    """Immutable tree of semantic concepts.

    Construction happens through :func:`parse_hierarchy`; after that the
    object is read-only and safe for unrestricted concurrent access.
    """

    def __init__(self, names: list[str], parents: list[int]):
        # parents[i] is the parent id of node i, -1 for the root only.
        self._names = tuple(names)
        self._parents = tuple(parents)
        self._children: tuple[tuple[int, ...], ...] = self._build_children()
        self._levels: tuple[int, ...] = self._assign_levels()
        self._name_to_id = {n: i for i, n in enumerate(self._names)}
        self._leaf_ids = tuple(
            i for i in range(len(self._names)) if not self._children[i]
        )

    def _build_children(self) -> tuple[tuple[int, ...], ...]:
        kids: list[list[int]] = [[] for _ in self._names]
        for i, p in enumerate(self._parents):
            if p >= 0:
                kids[p].append(i)
        return tuple(tuple(k) for k in kids)

    def _assign_levels(self) -> tuple[int, ...]:
        depth = [0] * len(self._names)
        for i, p in enumerate(self._parents):
            if p >= 0:
                depth[i] = depth[p] + 1  # parents precede children in id order
        max_depth = max(depth)
        return tuple(max_depth - d + 1 for d in depth)

    # -- structure queries ------------------------------------------------

    def __len__(self) -> int:
        return len(self._names)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LabelHierarchy):
            return NotImplemented
        return self._names == other._names and self._parents == other._parents

    def __hash__(self) -> int:
        return hash((self._names, self._parents))

    @property
    def nodes(self) -> list[ConceptNode]:
        return [ConceptNode(n, i) for i, n in enumerate(self._names)]

    @property
    def root_index(self) -> int:
        return 0

    @property
    def num_levels(self) -> int:
        return self._levels[0]

    @property
    def leaf_ids(self) -> tuple[int, ...]:
        return self._leaf_ids

    @property
    def num_leaves(self) -> int:
        return len(self._leaf_ids)

    def name(self, o: int) -> str:
        return self._names[o]

    def id_of(self, name: str) -> int:
        try:
            return self._name_to_id[name]
        except KeyError:
            raise ValidationError(f"unknown concept name {name!r}") from None

    def level_of(self, o: int) -> int:
        return self._levels[o]

    def is_root(self, o: int) -> bool:
        return o == 0

    def is_leaf(self, o: int) -> bool:
        return not self._children[o]

    def parent(self, o: int) -> int:
        """Parent id of ``o``; the root has none."""
        p = self._parents[o]
        if p < 0:
            raise ValidationError(
                f"concept {self._names[o]!r} is the root and has no parent"
            )
        return p

    def parent_or_none(self, o: int) -> int | None:
        p = self._parents[o]
        return None if p < 0 else p

    def children_of(self, o: int) -> tuple[int, ...]:
        return self._children[o]

    def siblings(self, o: int) -> tuple[int, ...]:
        """All other children of ``o``'s parent; empty for the root."""
        p = self._parents[o]
        if p < 0:
            return ()
        return tuple(c for c in self._children[p] if c != o)

    def leaf_path(self, leaf: int) -> tuple[int, ...]:
        """Concept ids from the root down to ``leaf`` inclusive."""
        path = [leaf]
        while self._parents[path[-1]] >= 0:
            path.append(self._parents[path[-1]])
        return tuple(reversed(path))


def _node_error(path: str, message: str) -> HierarchyFormatError:
    return HierarchyFormatError(f"{message} (at {path})")


def _walk(node: object, path: str, names: list[str], parents: list[int],
          parent_id: int, seen: set[str]) -> None:
    if not isinstance(node, dict):
        raise _node_error(path, "node must be a JSON object")
    unknown = set(node) - _NODE_KEYS
    if unknown:
        raise _node_error(path, f"unknown node keys {sorted(unknown)}")
    name = node.get("name")
    if not isinstance(name, str) or not name:
        raise _node_error(path, "node requires a non-empty string 'name'")
    if name in seen:
        raise _node_error(path, f"duplicate concept name {name!r}")
    seen.add(name)
    node_id = len(names)
    names.append(name)
    parents.append(parent_id)
    if "children" in node:
        children = node["children"]
        if not isinstance(children, list) or not children:
            raise _node_error(
                f"{path}.{name}",
                "'children' must be a non-empty array; omit it for leaves",
            )
        for idx, child in enumerate(children):
            _walk(child, f"{path}.{name}[{idx}]", names, parents, node_id, seen)


def parse_hierarchy(text: str) -> LabelHierarchy:
    """Parse and validate hierarchy-file contents.

    Raises :class:`HierarchyFormatError` for malformed JSON, duplicate
    names, empty input, a root without leaves, or non-uniform leaf depth,
    naming the offending node or position.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise HierarchyFormatError(f"malformed hierarchy file: {exc}") from None

    if isinstance(doc, list):
        if not doc:
            raise HierarchyFormatError("empty hierarchy: no nodes given")
        if len(doc) == 1:
            doc = doc[0]
        else:
            doc = {"name": VIRTUAL_ROOT_NAME, "children": doc}

    names: list[str] = []
    parents: list[int] = []
    _walk(doc, "$", names, parents, -1, set())

    if len(names) < 2:
        raise HierarchyFormatError(
            f"hierarchy must contain at least one leaf below the root "
            f"(got only {names[0]!r})"
        )

    h = LabelHierarchy(names, parents)
    _check_uniform_depth(h)
    return h


def _check_uniform_depth(h: LabelHierarchy) -> None:
    depths = {}
    for leaf in h.leaf_ids:
        depths.setdefault(len(h.leaf_path(leaf)), leaf)
    if len(depths) > 1:
        detail = ", ".join(
            f"{h.name(leaf)!r} at depth {d}" for d, leaf in sorted(depths.items())
        )
        raise HierarchyFormatError(
            f"non-uniform leaf depth: all leaves must sit at the same depth "
            f"({detail})"
        )


def _node_dict(h: LabelHierarchy, o: int) -> dict:
    node: dict = {"name": h.name(o)}
    kids = h.children_of(o)
    if kids:
        node["children"] = [_node_dict(h, c) for c in kids]
    return node


def serialize_hierarchy(h: LabelHierarchy) -> str:
    """Canonical JSON rendering; ``parse_hierarchy`` round-trips it."""
    return json.dumps(_node_dict(h, h.root_index), indent=2) + "\n"


def id_table(h: LabelHierarchy) -> str:
    """Tab-separated ``id name level parent_id`` lines (root parent is -1)."""
    lines = []
    for i in range(len(h)):
        p = h.parent_or_none(i)
        lines.append(f"{i}\t{h.name(i)}\t{h.level_of(i)}\t{-1 if p is None else p}")
    return "\n".join(lines) + "\n"
