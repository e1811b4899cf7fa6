"""Precedent/dependent graph over workbook cells.

Nodes are cell locations (sheet, row, col); an edge u -> v means cell v's
formula reads cell u.  Strongly connected components are labelled at build
time so the evaluator can solve circular clusters iteratively and the
detector can trace dependents of the balance sheet footings.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import FormulaSyntaxError, UnknownNameError
from .formula import parse_formula, references_of
from .workbook import CellRef, Workbook


@dataclass
class DependencyGraph:
    nodes: list = field(default_factory=list)  # CellRef, deterministic order
    index: dict = field(default_factory=dict)  # key -> position in nodes
    dependents: dict = field(default_factory=dict)  # key -> sorted list of keys
    precedents: dict = field(default_factory=dict)  # key -> sorted list of keys
    scc_index: dict = field(default_factory=dict)  # key -> scc id
    sccs: list = field(default_factory=list)  # scc id -> list of keys

    def node_for(self, key) -> CellRef:
        return self.nodes[self.index[key]]

    def has_node(self, key) -> bool:
        return key in self.index


def _plain(ref: CellRef) -> CellRef:
    return CellRef(ref.sheet, ref.col, ref.row)


def build_graph(wb: Workbook, asts: dict | None = None) -> DependencyGraph:
    """Build the cell dependency graph; ``asts`` may carry pre-parsed formulas.

    Node order is deterministic: sheet declaration order, then row, then
    column; referenced-but-undefined cells become (blank) nodes.
    """
    g = DependencyGraph()

    def add_node(ref: CellRef):
        key = ref.key()
        if key not in g.index:
            g.index[key] = len(g.nodes)
            g.nodes.append(_plain(ref))
            g.dependents[key] = []
            g.precedents[key] = []
        return key

    edges = []
    for sh in wb.sheets:
        for cell in sh.iter_cells():
            add_node(cell.ref.with_sheet(sh.name))

    for sh in wb.sheets:
        for cell in sh.iter_cells():
            if not cell.is_formula:
                continue
            holder = cell.ref.with_sheet(sh.name)
            try:
                ast = asts[holder.key()] if asts else parse_formula(cell.formula)
            except FormulaSyntaxError as exc:
                raise FormulaSyntaxError(exc.position, exc.expected, exc.src) from exc
            try:
                reads = references_of(ast, holder, wb.named_ranges)
            except UnknownNameError:
                reads = set()  # evaluates to #NAME?, no edges
            for read in reads:
                if wb.sheet(read.sheet) is None:
                    continue  # evaluation yields #REF!, no node
                add_node(read)
                edges.append((read.key(), holder.key()))

    for u, v in edges:
        g.dependents[u].append(v)
        g.precedents[v].append(u)
    for key in g.dependents:
        g.dependents[key] = sorted(set(g.dependents[key]), key=g.index.__getitem__)
        g.precedents[key] = sorted(set(g.precedents[key]), key=g.index.__getitem__)

    _label_sccs(g)
    return g


def _label_sccs(g: DependencyGraph) -> None:
    """Iterative Tarjan over the dependent edges."""
    sys_index = {}
    lowlink = {}
    on_stack = set()
    stack = []
    counter = [0]
    comp_of = {}
    comps = []

    for start in (n.key() for n in g.nodes):
        if start in sys_index:
            continue
        work = [(start, iter(g.dependents[start]))]
        sys_index[start] = lowlink[start] = counter[0]
        counter[0] += 1
        stack.append(start)
        on_stack.add(start)
        while work:
            node, it = work[-1]
            advanced = False
            for succ in it:
                if succ not in sys_index:
                    sys_index[succ] = lowlink[succ] = counter[0]
                    counter[0] += 1
                    stack.append(succ)
                    on_stack.add(succ)
                    work.append((succ, iter(g.dependents[succ])))
                    advanced = True
                    break
                if succ in on_stack:
                    lowlink[node] = min(lowlink[node], sys_index[succ])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                lowlink[parent] = min(lowlink[parent], lowlink[node])
            if lowlink[node] == sys_index[node]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == node:
                        break
                comps.append(comp)

    # Renumber components deterministically by smallest member node index.
    comps.sort(key=lambda comp: min(g.index[k] for k in comp))
    for cid, comp in enumerate(comps):
        comp.sort(key=g.index.__getitem__)
        for key in comp:
            comp_of[key] = cid
    g.sccs = comps
    g.scc_index = comp_of


def transitive_dependents(g: DependencyGraph, seeds) -> set:
    """All cells reachable from ``seeds`` via dependent edges, seeds excluded."""
    seed_keys = {s.key() if isinstance(s, CellRef) else s for s in seeds}
    seen = set()
    frontier = [k for k in seed_keys if k in g.index]
    while frontier:
        key = frontier.pop()
        for succ in g.dependents.get(key, ()):
            if succ not in seen:
                seen.add(succ)
                frontier.append(succ)
    return {g.node_for(k) for k in seen - seed_keys}


def topo_order(g: DependencyGraph) -> list:
    """Condensation topological order; each entry is a list of node keys.

    Deterministic: ready components are taken smallest-first by their
    smallest member's node index.
    """
    n_comp = len(g.sccs)
    comp_succ = [set() for _ in range(n_comp)]
    indeg = [0] * n_comp
    for u in g.dependents:
        cu = g.scc_index[u]
        for v in g.dependents[u]:
            cv = g.scc_index[v]
            if cu != cv and cv not in comp_succ[cu]:
                comp_succ[cu].add(cv)
                indeg[cv] += 1

    import heapq

    ready = [cid for cid in range(n_comp) if indeg[cid] == 0]
    heapq.heapify(ready)
    out = []
    while ready:
        cid = heapq.heappop(ready)
        out.append(g.sccs[cid])
        for succ in comp_succ[cid]:
            indeg[succ] -= 1
            if indeg[succ] == 0:
                heapq.heappush(ready, succ)
    return out


def is_cyclic_component(g: DependencyGraph, comp) -> bool:
    """True for multi-cell components and genuine self-loops."""
    if len(comp) > 1:
        return True
    key = comp[0]
    return key in g.dependents.get(key, ()) or key in set(g.dependents[key])


def to_dot(g: DependencyGraph) -> str:
    lines = ["digraph cells {"]
    for node in g.nodes:
        lines.append(f'  "{node.to_a1()}";')
    for u, succs in g.dependents.items():
        ua = g.node_for(u).to_a1()
        for v in succs:
            lines.append(f'  "{ua}" -> "{g.node_for(v).to_a1()}";')
    lines.append("}")
    return "\n".join(lines) + "\n"
