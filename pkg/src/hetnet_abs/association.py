"""Association structure of relaxed allocations, rounding, and baseline schemes.

A user is associated with BS j in a phase when its share there exceeds a
small threshold. Fractional users (several BSs within one phase) are rare at
the optimum, and the sharing structure forms a forest once each BS's user
clique is contracted to a single node.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path

import networkx as nx
import numpy as np

from .channel import EfficiencyMatrices
from .optimizer import Allocation, SolverOptions, rates, solve_fixed_z, solve_joint

EPSILON = 1e-6
PHASES = ("normal", "blank")
SCHEMES = ("max_sinr_no_br", "load_aware_no_br", "max_sinr_with_br", "max_sinr_normal_with_br")


@dataclass(frozen=True)
class AssociationReport:
    """Per-phase association sets of a (relaxed) allocation and the counts bounded by theory.

    Attributes
    ----------
    normal_assoc, blank_assoc : tuple of frozenset
        For each user, the BSs with share above ``epsilon`` in that phase.
    fractional_normal, fractional_blank : int
        Users associated with two or more BSs within the phase.
    dual_service_users : int
        Users served by the same BS in both phases.
    """

    normal_assoc: tuple
    blank_assoc: tuple
    fractional_normal: int
    fractional_blank: int
    dual_service_users: int
    n_bs: int
    n_macro: int
    epsilon: float
    allocation: Allocation

    @property
    def n_users(self) -> int:
        return len(self.normal_assoc)

    def phase_assoc(self, phase: str) -> tuple:
        return {"normal": self.normal_assoc, "blank": self.blank_assoc}[phase]

    def bounds(self) -> dict:
        """Upper bounds on the three counts; the blank bound is 0 when every BS is a macro."""
        return {
            "fractional_normal": self.n_bs - 1,
            "fractional_blank": max(self.n_bs - self.n_macro - 1, 0),
            "dual_service_users": self.n_bs - self.n_macro,
        }

    def bound_violations(self) -> dict:
        """``{name: (count, bound)}`` for each count above its bound; empty when all hold."""
        out = {}
        for name, bound in self.bounds().items():
            count = getattr(self, name)
            if count > bound:
                out[name] = (count, bound)
        return out


def extract_association(allocation: Allocation, eff: EfficiencyMatrices | None = None,
                        epsilon: float = EPSILON) -> AssociationReport:
    """Threshold an allocation's shares at ``epsilon`` into per-phase association sets.

    ``eff`` only supplies the macro count used by the bounds; without it the
    macros are taken to be the BSs with no blank-phase share at all.
    """
    x = np.asarray(allocation.x)
    y = np.asarray(allocation.y)
    on_n = x > epsilon
    on_b = y > epsilon
    normal = tuple(frozenset(np.flatnonzero(row).tolist()) for row in on_n)
    blank = tuple(frozenset(np.flatnonzero(row).tolist()) for row in on_b)
    n_macro = eff.n_macro if eff is not None else int(np.sum(~np.any(y > 0, axis=0)))
    return AssociationReport(
        normal_assoc=normal,
        blank_assoc=blank,
        fractional_normal=int(np.sum(on_n.sum(axis=1) >= 2)),
        fractional_blank=int(np.sum(on_b.sum(axis=1) >= 2)),
        dual_service_users=int(np.sum(np.any(on_n & on_b, axis=1))),
        n_bs=x.shape[1],
        n_macro=n_macro,
        epsilon=epsilon,
        allocation=allocation,
    )


@dataclass(frozen=True)
class AssociationGraph:
    """User graph with one colored edge per pair of users sharing a BS in a phase.

    Users of one BS form a monochrome clique. Contracting every clique to a
    node gives the bipartite user/BS incidence graph, which is a forest on
    generic optimal solutions.
    """

    n_users: int
    assoc: dict  # phase -> tuple of frozensets
    edges: tuple  # (user_a, user_b, phase, bs) with user_a < user_b

    def phase_edges(self, phase: str) -> list:
        return [e for e in self.edges if e[2] == phase]

    def multi_edges(self, phase: str | None = None) -> list:
        """User pairs joined by two or more colors within one phase, as ``(a, b, phase, bss)``."""
        phases = PHASES if phase is None else (phase,)
        out = []
        for ph in phases:
            colors = {}
            for a, b, _, bs in self.phase_edges(ph):
                colors.setdefault((a, b), []).append(bs)
            out.extend((a, b, ph, tuple(sorted(c))) for (a, b), c in sorted(colors.items()) if len(c) > 1)
        return out

    def contracted(self, phase: str) -> nx.Graph:
        """Bipartite graph with nodes ``("user", i)`` and ``("bs", j)``, one node per contracted clique."""
        g = nx.Graph()
        for i, bss in enumerate(self.assoc[phase]):
            g.add_node(("user", i))
            for j in bss:
                g.add_edge(("user", i), ("bs", j))
        return g

    def cycle(self, phase: str):
        """One cycle of the contracted graph as a list of edges, or None if it is a forest."""
        try:
            return nx.find_cycle(self.contracted(phase))
        except nx.NetworkXNoCycle:
            return None

    def is_acyclic(self, phase: str | None = None) -> bool:
        phases = PHASES if phase is None else (phase,)
        return all(self.cycle(ph) is None for ph in phases)

    def write_edge_list(self, path: str | Path) -> None:
        """Whitespace-separated ``user_a user_b color`` lines; the color is ``<phase>:bs<j>``."""
        with open(path, "w") as fh:
            for a, b, phase, bs in self.edges:
                fh.write(f"{a} {b} {phase}:bs{bs}\n")


def build_graph(report: AssociationReport) -> AssociationGraph:
    edges = []
    assoc = {"normal": report.normal_assoc, "blank": report.blank_assoc}
    for phase in PHASES:
        members = {}
        for i, bss in enumerate(assoc[phase]):
            for j in bss:
                members.setdefault(j, []).append(i)
        for j in sorted(members):
            edges.extend((a, b, phase, j) for a, b in combinations(members[j], 2))
    edges.sort(key=lambda e: (PHASES.index(e[2]), e[3], e[0], e[1]))
    return AssociationGraph(report.n_users, assoc, tuple(edges))


# ---------------------------------------------------------------------------
# rounding


@dataclass(frozen=True)
class BinaryAssociation:
    """Single association per phase; -1 marks a user not served in that phase."""

    normal_bs: np.ndarray
    blank_bs: np.ndarray
    allocation: Allocation


def _equal_split(assigned, n_bs, budget):
    """Share matrix giving each BS's budget in equal parts to its assigned users."""
    n_u = len(assigned)
    share = np.zeros((n_u, n_bs))
    users = np.flatnonzero(assigned >= 0)
    if len(users) == 0 or budget <= 0:
        return share
    counts = np.bincount(assigned[users], minlength=n_bs)
    share[users, assigned[users]] = budget / counts[assigned[users]]
    return share


def round_to_single(allocation: Allocation, eff: EfficiencyMatrices, epsilon: float = EPSILON,
                    resplit: str = "equal", opts: SolverOptions | None = None):
    """Keep each user's largest-contribution BS per phase, then re-split the BS budgets.

    Parameters
    ----------
    resplit : {"equal", "optimal"}
        ``"equal"`` gives every BS's phase budget in equal parts to its
        retained users. ``"optimal"`` keeps the same binary association but
        re-solves the shares at the same z, so users that also draw rate in
        the other phase get smaller shares.

    Returns
    -------
    (BinaryAssociation, ndarray)
        The binary association and the per-user rates it achieves.
    """
    if resplit not in ("equal", "optimal"):
        raise ValueError(f"unknown resplit rule {resplit!r}")
    x = np.asarray(allocation.x)
    y = np.asarray(allocation.y)
    contrib_n = x * eff.c_n
    contrib_b = y * eff.c_b
    keep_n = np.where((x > epsilon).any(axis=1), contrib_n.argmax(axis=1), -1)
    keep_b = np.where((y > epsilon).any(axis=1), contrib_b.argmax(axis=1), -1)
    # a user whose shares all fall below the threshold keeps its single best link
    lost = np.flatnonzero((keep_n < 0) & (keep_b < 0))
    if len(lost):
        best = np.hstack([contrib_n, contrib_b])[lost].argmax(axis=1)
        in_n = best < eff.n_bs
        keep_n[lost[in_n]] = best[in_n]
        keep_b[lost[~in_n]] = best[~in_n] - eff.n_bs
    z = allocation.z
    if resplit == "equal":
        binary = Allocation(_equal_split(keep_n, eff.n_bs, 1.0 - z), _equal_split(keep_b, eff.n_bs, z), z)
    else:
        on_n = _equal_split(keep_n, eff.n_bs, 1.0) > 0
        on_b = _equal_split(keep_b, eff.n_bs, 1.0) > 0
        restricted = EfficiencyMatrices(eff.c_n * on_n, eff.c_b * on_b, eff.is_macro, eff.tiers)
        binary, _ = solve_fixed_z(restricted, z, opts)
    return BinaryAssociation(keep_n, keep_b, binary), rates(binary, eff)


# ---------------------------------------------------------------------------
# baselines


def _max_sinr(sinr):
    best = sinr.argmax(axis=1)
    return np.where(sinr.max(axis=1) > 0, best, -1)


def baseline_scheme(eff: EfficiencyMatrices, sinr, scheme: str, z: float | None = None,
                    opts: SolverOptions | None = None):
    """Allocation and rates of one reference association scheme.

    Parameters
    ----------
    sinr : (ndarray, ndarray)
        Normal- and blank-phase SINR matrices.
    scheme : str
        One of ``max_sinr_no_br`` (z = 0, strongest-SINR BS, equal shares),
        ``load_aware_no_br`` (optimal allocation at z = 0),
        ``max_sinr_with_br`` (per-phase strongest-SINR BS at blank fraction z) or
        ``max_sinr_normal_with_br`` (the normal-phase choice reused in the blank phase).
    z : float, optional
        Blank fraction for the two schemes with blanking. Defaults to the
        jointly optimal z of the same instance.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    sinr_n, sinr_b = (np.asarray(s) for s in sinr)
    n_bs = eff.n_bs
    if scheme == "load_aware_no_br":
        alloc, _ = solve_fixed_z(eff, 0.0, opts)
        return alloc, rates(alloc, eff)
    if scheme == "max_sinr_no_br":
        alloc = Allocation(_equal_split(_max_sinr(sinr_n), n_bs, 1.0), np.zeros((eff.n_users, n_bs)), 0.0)
        return alloc, rates(alloc, eff)

    if z is None:
        z = solve_joint(eff, opts)[0].z
    if not 0.0 <= z <= 1.0:
        raise ValueError(f"blank fraction must lie in [0, 1], got {z}")
    normal = _max_sinr(sinr_n)
    if scheme == "max_sinr_with_br":
        blank = _max_sinr(np.where(eff.c_b > 0, sinr_b, 0.0))
    else:
        # macro-associated users stay idle while their BS is blanked
        blank = np.where((normal >= 0) & ~eff.is_macro[np.maximum(normal, 0)], normal, -1)
    alloc = Allocation(_equal_split(normal, n_bs, 1.0 - z), _equal_split(blank, n_bs, z), float(z))
    return alloc, rates(alloc, eff)


def write_association_csv(allocation: Allocation, path: str | Path, epsilon: float = EPSILON) -> None:
    """One ``user,phase,bs,share`` row per share above ``epsilon``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["user", "phase", "bs", "share"])
        for phase, mat in (("normal", allocation.x), ("blank", allocation.y)):
            for i, j in zip(*np.nonzero(np.asarray(mat) > epsilon)):
                w.writerow([int(i), phase, int(j), f"{mat[i, j]:.10g}"])
