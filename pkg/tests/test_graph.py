import random

from audit_kit.formula import parse_formula, print_formula, references_of
from audit_kit.graph import (
    build_graph,
    is_cyclic_component,
    to_dot,
    topo_order,
    transitive_dependents,
)
from audit_kit.workbook import Workbook, loads_workbook, parse_a1

CHAIN = """\
sheet S
S!A1 = 1
S!A2 = =A1+1
S!A3 = =A2+1
S!B1 = =SUM(A1:A3)
"""


def test_edges_and_direction():
    g = build_graph(loads_workbook(CHAIN))
    a1, a2, b1 = (parse_a1(t).key() for t in ("S!A1", "S!A2", "S!B1"))
    assert a2 in g.dependents[a1]
    assert b1 in g.dependents[a1]
    assert a1 in g.precedents[a2]
    assert g.precedents[a1] == []


def test_topo_order_respects_dependencies():
    g = build_graph(loads_workbook(CHAIN))
    order = [key for comp in topo_order(g) for key in comp]
    pos = {key: idx for idx, key in enumerate(order)}
    for u, succs in g.dependents.items():
        for v in succs:
            if g.scc_index[u] != g.scc_index[v]:
                assert pos[u] < pos[v]


def test_cycles_grouped_into_one_scc():
    wb = loads_workbook("sheet S\nS!A1 = =B1+1\nS!B1 = =A1*0.5\nS!C1 = =A1\n")
    g = build_graph(wb)
    a1, b1, c1 = (parse_a1(t).key() for t in ("S!A1", "S!B1", "S!C1"))
    assert g.scc_index[a1] == g.scc_index[b1]
    assert g.scc_index[c1] != g.scc_index[a1]
    comp = g.sccs[g.scc_index[a1]]
    assert is_cyclic_component(g, comp)
    assert not is_cyclic_component(g, g.sccs[g.scc_index[c1]])


def test_self_loop_is_cyclic():
    g = build_graph(loads_workbook("sheet S\nS!A1 = =0.5*A1+1\n"))
    comp = g.sccs[g.scc_index[parse_a1("S!A1").key()]]
    assert is_cyclic_component(g, comp)


def test_transitive_dependents_matches_bfs_oracle():
    rng = random.Random(7)
    for _ in range(20):
        wb = Workbook()
        wb.add_sheet("S")
        n = rng.randint(3, 25)
        for row in range(1, n + 1):
            if row == 1 or rng.random() < 0.3:
                wb.set_cell(parse_a1(f"S!A{row}"), value=float(row))
            else:
                deps = rng.sample(range(1, row), k=min(rng.randint(1, 3), row - 1))
                body = "+".join(f"A{d}" for d in deps)
                wb.set_cell(parse_a1(f"S!A{row}"), formula="=" + body)
        g = build_graph(wb)

        # naive adjacency straight from the formulas
        naive = {}
        for cell in wb.formula_cells():
            holder = cell.ref.with_sheet("S")
            for read in references_of(parse_formula(cell.formula), holder):
                naive.setdefault(read.key(), set()).add(holder.key())
        seed = parse_a1("S!A1")
        reach = set()
        frontier = [seed.key()]
        while frontier:
            k = frontier.pop()
            for succ in naive.get(k, ()):
                if succ not in reach:
                    reach.add(succ)
                    frontier.append(succ)
        reach.discard(seed.key())
        got = {r.key() for r in transitive_dependents(g, [seed])}
        assert got == reach


def test_deterministic_node_order_and_dot():
    wb = loads_workbook(CHAIN)
    g1 = build_graph(wb)
    g2 = build_graph(loads_workbook(CHAIN))
    assert [n.key() for n in g1.nodes] == [n.key() for n in g2.nodes]
    dot = to_dot(g1)
    assert dot.startswith("digraph") and '"S!A1" -> "S!A2"' in dot


def test_referenced_blank_cells_become_nodes():
    g = build_graph(loads_workbook("sheet S\nS!A1 = =Z99+1\n"))
    assert g.has_node(parse_a1("S!Z99").key())


def test_pre_parsed_asts_accepted():
    wb = loads_workbook(CHAIN)
    asts = {}
    for sh in wb.sheets:
        for cell in sh.iter_cells():
            if cell.is_formula:
                asts[cell.ref.with_sheet(sh.name).key()] = parse_formula(cell.formula)
    g = build_graph(wb, asts)
    assert g.dependents == build_graph(wb).dependents
