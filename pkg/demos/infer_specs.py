"""Run the bundled graph documents through the engine and compare with brute force.

    python3 demos/infer_specs.py
"""
from pathlib import Path

import numpy as np

from bpmf.factor_graph import check_algorithm1_applicable
from bpmf.graph_io import load_graph_spec
from bpmf.message_passing import UpdateConfig
from bpmf.oracle import exact_marginals
from bpmf.scheduler import run_algorithm1, run_loopy
from bpmf.tabular import ContradictionError

SPECS = Path(__file__).parent / "specs"


def show(name):
    spec = load_graph_spec(SPECS / f"{name}.json")
    g, part = spec.graph, spec.part
    app = check_algorithm1_applicable(g, part)
    print(f"== {name}: {g.n_vars} variables, {g.n_factors} factors, {len(part.bp)} in the BP part")
    try:
        if app:
            st, tr = run_algorithm1(g, part, stop=spec.stop, em=spec.em)
        else:
            print(f"   {app.describe(g)}")
            st, tr = run_loopy(g, part, UpdateConfig(damping=spec.damping), spec.stop, spec.em, spec.n_inner)
    except ContradictionError as exc:
        print(f"   contradiction: {exc}\n")
        return
    print(f"   {tr.status} after {tr.iterations} iterations, F = {tr.free_energies[-1]:.6f}")
    discrete = all(not v.is_gaussian for v in g.variables)
    vm = exact_marginals(g)[0] if discrete else None
    for i, v in enumerate(g.variables):
        b = st.var_beliefs[i]
        if v.is_gaussian:
            print(f"   {v.name}: mean {np.round(b.mean, 4)}, variance {np.round(b.variances(), 4)}")
        else:
            extra = f"  (exact {np.round(vm[i], 4)})" if vm is not None else ""
            print(f"   {v.name}: {np.round(b, 4)}{extra}")
    print()


if __name__ == "__main__":
    for name in ("chain", "loop", "mixed", "contradiction"):
        show(name)
