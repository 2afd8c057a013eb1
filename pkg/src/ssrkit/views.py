"""Static random dimension filters: fixed per-view index subsets.

Each view draws d_v source columns uniformly without replacement; draws are
independent across views, so overlap between views is allowed (feature
bagging). Selections are frozen at creation and applied as zero-FLOP column
gathers, mathematically identical to multiplying by a one-hot selection
matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import EngineError, Tensor, gather_columns


@dataclass(frozen=True)
class ViewSelection:
    views: tuple  # tuple of b tuples of column indices, each of length d_v
    d_in: int
    seed: int

    @property
    def b(self) -> int:
        return len(self.views)

    @property
    def d_v(self) -> int:
        return len(self.views[0])

    def to_lists(self) -> list[list[int]]:
        return [list(v) for v in self.views]

    @classmethod
    def from_lists(cls, views: list[list[int]], d_in: int,
                   seed: int = -1) -> "ViewSelection":
        return cls(views=tuple(tuple(int(i) for i in v) for v in views),
                   d_in=d_in, seed=seed)


def sample_views(d_in: int, d_v: int, b: int, seed: int) -> ViewSelection:
    """Draw b independent without-replacement index subsets of size d_v.

    Uses PCG64 so the same seed reproduces the same selection on any
    platform; checkpoints nevertheless store the explicit index lists.
    """
    if not 1 <= d_v <= d_in:
        raise EngineError(f"sample_views requires 1 <= d_v <= d_in, "
                          f"got d_v={d_v}, d_in={d_in}")
    if b < 1:
        raise EngineError(f"sample_views requires b >= 1, got {b}")
    rng = np.random.Generator(np.random.PCG64(seed))
    views = tuple(tuple(int(i) for i in rng.choice(d_in, size=d_v, replace=False))
                  for _ in range(b))
    return ViewSelection(views=views, d_in=d_in, seed=seed)


def apply_filter(x: Tensor, sel: ViewSelection, view: int) -> Tensor:
    if not 0 <= view < sel.b:
        raise EngineError(f"view index {view} out of range [0, {sel.b})")
    return gather_columns(x, sel.views[view])


def selection_to_matrix(sel: ViewSelection, view: int) -> Tensor:
    """Explicit one-hot matrix M with column j = e_{views[view][j]}."""
    if not 0 <= view < sel.b:
        raise EngineError(f"view index {view} out of range [0, {sel.b})")
    m = np.zeros((sel.d_in, sel.d_v))
    for j, src in enumerate(sel.views[view]):
        m[src, j] = 1.0
    return Tensor(m)


def uncovered_fraction(sel: ViewSelection) -> float:
    """Fraction of source columns never picked by any view (reported, not
    asserted; shrinks as b*d_v grows past d_in*ln(d_in))."""
    covered = set()
    for v in sel.views:
        covered.update(v)
    return 1.0 - len(covered) / sel.d_in
