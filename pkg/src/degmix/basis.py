"""Cubic B-spline basis on a bounded time window.

The basis is clamped: boundary knots are repeated to the spline order, and
interior knots are equally spaced. With that layout the q basis functions
are nonnegative, sum to one everywhere on [0, M], and the first/last
functions interpolate the endpoints, so a coefficient vector reads directly
as a degradation curve on the experimental window.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidDimension, InvalidDomain, OutOfDomain

ORDER = 4  # cubic
DEGREE = ORDER - 1


@dataclass(frozen=True)
class BasisSpec:
    """Immutable knot layout for a basis of dimension ``q`` on ``[0, M]``.

    ``knots`` has ``q + 4`` entries: four zeros, the interior knots, and
    four copies of the domain end.
    """

    q: int
    domain_end: float
    knots: tuple[float, ...]

    def __post_init__(self):
        if self.q < ORDER:
            raise InvalidDimension(f"cubic B-splines need q >= {ORDER}, got q={self.q}")
        if not self.domain_end > 0:
            raise InvalidDomain(f"domain end must be > 0, got {self.domain_end}")
        if len(self.knots) != self.q + ORDER:
            raise InvalidDomain(
                f"knot vector needs q + {ORDER} = {self.q + ORDER} entries, "
                f"got {len(self.knots)}"
            )
        kn = np.asarray(self.knots, dtype=float)
        if np.any(np.diff(kn) < 0):
            raise InvalidDomain("knots must be nondecreasing")
        if np.any(kn[:ORDER] != 0.0) or np.any(kn[-ORDER:] != self.domain_end):
            raise InvalidDomain("boundary knots must be clamped to 0 and the domain end")
        interior = kn[ORDER:-ORDER]
        if interior.size and (interior[0] <= 0.0 or interior[-1] >= self.domain_end):
            raise InvalidDomain("interior knots must lie strictly inside (0, M)")


def make_basis(q: int, domain_end: float) -> BasisSpec:
    """Build a clamped cubic basis with ``q - 4`` equally spaced interior knots.

    Raises:
        InvalidDimension: if ``q < 4``.
        InvalidDomain: if ``domain_end <= 0``.
    """
    if q < ORDER:
        raise InvalidDimension(f"cubic B-splines need q >= {ORDER}, got q={q}")
    if not domain_end > 0:
        raise InvalidDomain(f"domain end must be > 0, got {domain_end}")
    m = float(domain_end)
    interior = np.linspace(0.0, m, q - 2)[1:-1]  # q - 4 points strictly inside
    knots = (0.0,) * ORDER + tuple(float(t) for t in interior) + (m,) * ORDER
    return BasisSpec(q=int(q), domain_end=m, knots=knots)


def design_matrix(spec: BasisSpec, times) -> np.ndarray:
    """Evaluate all q basis functions at each time, one row per time.

    Rows are nonnegative and sum to one; at most four entries per row are
    nonzero (local support of cubic splines).

    Raises:
        OutOfDomain: if any time is outside ``[0, M]``.
    """
    t = np.atleast_1d(np.asarray(times, dtype=float))
    out = np.zeros((t.size, spec.q))
    if t.size == 0:
        return out
    if t.min() < 0.0 or t.max() > spec.domain_end:
        raise OutOfDomain(
            f"times must lie in [0, {spec.domain_end}], "
            f"got range [{t.min()}, {t.max()}]"
        )

    kn = np.asarray(spec.knots, dtype=float)
    # Knot span per point; the last nonempty span absorbs t == M.
    span = np.searchsorted(kn, t, side="right") - 1
    span = np.clip(span, DEGREE, spec.q - 1)

    # Triangular Cox-de Boor recurrence, vectorized over evaluation points.
    npts = t.size
    vals = np.zeros((npts, ORDER))
    vals[:, 0] = 1.0
    left = np.zeros((npts, ORDER))
    right = np.zeros((npts, ORDER))
    for j in range(1, ORDER):
        left[:, j] = t - kn[span + 1 - j]
        right[:, j] = kn[span + j] - t
        saved = np.zeros(npts)
        for r in range(j):
            tmp = vals[:, r] / (right[:, r + 1] + left[:, j - r])
            vals[:, r] = saved + right[:, r + 1] * tmp
            saved = left[:, j - r] * tmp
        vals[:, j] = saved

    cols = span[:, None] - DEGREE + np.arange(ORDER)[None, :]
    out[np.arange(npts)[:, None], cols] = vals
    return out


def eval_basis(spec: BasisSpec, t: float) -> np.ndarray:
    """Row vector of the q basis values at a single time in ``[0, M]``."""
    return design_matrix(spec, [t])[0]
