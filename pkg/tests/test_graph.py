import numpy as np
import pytest

from symconj import graph as G
from symconj.errors import GraphError, NonDifferentiableError, SymconjError

from oracles import central_diff


def beta_bernoulli_graph():
    def model(z, heads, draws, a, b):
        lp = (a - 1.0) * G.log(z) + (b - 1.0) * G.log1p(-z)
        lp = lp + heads * G.log(z) + (draws - heads) * G.log1p(-z)
        lp = lp - G.log_gamma(a) - G.log_gamma(b) + G.log_gamma(a + b)
        return lp
    return G.build(model, [("z", (), "UNIT_INTERVAL"), ("heads", ()),
                           ("draws", ()), ("a", ()), ("b", ())])


BB_ENV = dict(z=0.5, heads=60.0, draws=100.0, a=0.5, b=0.5)


def bb_direct(z, heads, draws, a, b):
    from scipy.special import gammaln
    return ((a - 1) * np.log(z) + (b - 1) * np.log1p(-z)
            + heads * np.log(z) + (draws - heads) * np.log1p(-z)
            - gammaln(a) - gammaln(b) + gammaln(a + b))


class TestBuild:
    def test_identity_callback(self):
        g = G.build(lambda x: x, [("x", (3,))], scalar=False)
        assert len(g.inputs) == 1
        assert g.output == g.inputs[0]

    def test_beta_bernoulli_transcription(self):
        g = beta_bernoulli_graph()
        ops = {n.op for n in g.nodes if isinstance(n, G.PrimNode)}
        assert {"log", "log1p", "log_gamma", "multiply", "add"} <= ops
        got = G.evaluate(g, BB_ENV)
        assert abs(got - bb_direct(**BB_ENV)) < 1e-12

    def test_dot_plus_scalar(self):
        g = G.build(lambda w, x, b: G.einsum("i,i->", w, x) + b,
                    [("w", (3,)), ("x", (3,)), ("b", ())])
        assert len(g.inputs) == 3
        env = dict(w=[1.0, 2, 3], x=[4.0, 5, 6], b=0.5)
        assert G.evaluate(g, env) == 1 * 4 + 2 * 5 + 3 * 6 + 0.5

    def test_scalar_requirement(self):
        with pytest.raises(GraphError):
            G.build(lambda x: x, [("x", (3,))], scalar=True)

    def test_mixing_builders_rejected(self):
        gb1 = G.GraphBuilder()
        gb2 = G.GraphBuilder()
        x = gb1.input("x", ())
        y = gb2.input("y", ())
        with pytest.raises(GraphError):
            x + y

    def test_shape_inconsistency_at_construction(self):
        gb = G.GraphBuilder()
        x = gb.input("x", (3,))
        y = gb.input("y", (2,))
        with pytest.raises(SymconjError, match="'i'"):
            G.einsum("i,i->", x, y)
        with pytest.raises(GraphError):
            gb.prim("add", (x, y))

    def test_acyclicity_structural(self):
        g = beta_bernoulli_graph()
        assert g.check_acyclic()


class TestEvaluate:
    def test_constant_only_graph(self):
        gb = G.GraphBuilder()
        c = gb.constant([1.0, 2.0])
        g = gb.finish(c)
        assert np.array_equal(G.evaluate(g, {}), [1, 2])
        assert np.array_equal(G.evaluate(g, {"junk": 3.0}), [1, 2])

    def test_missing_binding(self):
        g = beta_bernoulli_graph()
        with pytest.raises(GraphError, match="missing binding"):
            G.evaluate(g, {"z": 0.5})

    def test_shape_mismatch(self):
        g = G.build(lambda x: G.sum_all(x), [("x", (3,))])
        with pytest.raises(GraphError, match="shape"):
            G.evaluate(g, {"x": np.ones(4)})

    def test_kernel_domain_error_propagates(self):
        from symconj.errors import NumericDomainError
        g = G.build(lambda x: G.log(x), [("x", ())])
        with pytest.raises(NumericDomainError):
            G.evaluate(g, {"x": -1.0})

    def test_compositionality_at_cut_nodes(self):
        rng = np.random.default_rng(0)
        g = beta_bernoulli_graph()
        env = dict(z=0.3, heads=7.0, draws=11.0, a=1.5, b=2.5)
        full = G.evaluate(g, env)
        # evaluate a subgraph at an interior node, then splice its value in
        for nid in range(len(g.nodes)):
            node = g.nodes[nid]
            if not isinstance(node, G.PrimNode):
                continue
            sub = G.subgraph(g, nid)
            cut_value = G.evaluate(sub, env)
            replaced, _ = G.replace_nodes(g, {nid: ("const", cut_value)})
            assert abs(G.evaluate(replaced, env) - full) < 1e-12


class TestCSE:
    def test_duplicate_logs_merge(self):
        gb = G.GraphBuilder()
        x = gb.input("x", ())
        l1 = gb.prim("log", (x,))
        l2 = gb.prim("log", (x,))
        g = gb.finish(gb.prim("add", (l1, l2)))
        assert l1.nid != l2.nid
        out = G.cse(g)
        logs = [n for n in out.nodes
                if isinstance(n, G.PrimNode) and n.op == "log"]
        assert len(logs) == 1
        add = [n for n in out.nodes
               if isinstance(n, G.PrimNode) and n.op == "add"][0]
        assert add.args[0] == add.args[1]

    def test_idempotent(self):
        g = beta_bernoulli_graph()
        once = G.cse(g)
        twice = G.cse(once)
        assert G.graph_equal(once, twice)

    def test_hundred_random_graphs_preserved(self):
        for seed in range(100):
            rng = np.random.default_rng(seed)
            gb = G.GraphBuilder()
            pool = [gb.input("x", (3,)), gb.input("y", (3,))]
            for _ in range(50):
                op = rng.choice(["add", "multiply", "square", "einsum"])
                a = pool[rng.integers(len(pool))]
                if op == "einsum":
                    b = pool[rng.integers(len(pool))]
                    h = G.einsum("i,i->i", a, b)
                elif op == "square":
                    h = G.square(a)
                else:
                    b = pool[rng.integers(len(pool))]
                    h = gb.prim(op, (a, b))
                pool.append(h)
            g = gb.finish(G.sum_all(pool[-1]))
            env = dict(x=rng.standard_normal(3), y=rng.standard_normal(3))
            before = G.evaluate(g, env)
            after = G.evaluate(G.cse(g), env)
            assert abs(before - after) <= 1e-12 * max(1.0, abs(before))
            assert len(G.cse(g)) <= len(g)


class TestGrad:
    def test_linear_form(self):
        g = G.build(lambda c, t: G.einsum("i,i->", c, t),
                    [("c", (3,)), ("t", (3,))])
        gr = G.grad(g, g.input_id("t"))
        env = dict(c=[1.0, 2, 3], t=[0.0, 0, 0])
        assert np.array_equal(G.evaluate(gr, env), [1, 2, 3])

    def test_sum_of_squares(self):
        g = G.build(lambda t: G.sum_all(G.square(t)), [("t", (2,))])
        gr = G.grad(g, g.input_id("t"))
        assert np.array_equal(G.evaluate(gr, {"t": [1.0, 2.0]}), [2, 4])

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)

        def model(x, w):
            q = G.einsum("i,ij,j->", x, w, x)
            return q + G.sum_all(G.log(G.square(x) + 0.5)) + G.logsumexp(x, 0)

        g = G.build(model, [("x", (3,)), ("w", (3, 3))])
        x0 = rng.standard_normal(3)
        w0 = rng.standard_normal((3, 3))
        gr = G.grad(g, g.input_id("x"))
        got = G.evaluate(gr, dict(x=x0, w=w0))
        fd = central_diff(lambda v: float(G.evaluate(g, dict(x=v, w=w0))), x0)
        assert np.abs(got - fd).max() < 1e-5

    def test_interior_node(self):
        def model(x):
            return G.sum_all(G.square(x))
        gb = G.GraphBuilder()
        x = gb.input("x", (2,))
        sq = G.square(x)
        g = gb.finish(G.sum_all(sq))
        gr = G.grad(g, sq.nid, wrt_name="t")
        # d(sum t)/dt = ones, independent of x
        out = G.evaluate(gr, {"x": [5.0, 6.0], "t": [0.0, 0.0]})
        assert np.array_equal(out, [1.0, 1.0])

    def test_grad_linearity(self):
        rng = np.random.default_rng(7)
        a, b = 2.5, -1.25

        def f(t, c):
            return G.einsum("i,i->", t, c)

        def h(t, c):
            return G.sum_all(G.square(t))

        gf = G.build(lambda t, c: f(t, c), [("t", (3,)), ("c", (3,))])
        gh = G.build(lambda t, c: h(t, c), [("t", (3,)), ("c", (3,))])
        gcomb = G.build(lambda t, c: a * f(t, c) + b * h(t, c),
                        [("t", (3,)), ("c", (3,))])
        env = dict(t=rng.standard_normal(3), c=rng.standard_normal(3))
        lhs = G.evaluate(G.grad(gcomb, gcomb.input_id("t")), env)
        rhs = (a * G.evaluate(G.grad(gf, gf.input_id("t")), env)
               + b * G.evaluate(G.grad(gh, gh.input_id("t")), env))
        assert np.abs(lhs - rhs).max() < 1e-10

    def test_one_hot_not_differentiable(self):
        g = G.build(lambda z, v: G.einsum("k,k->", G.one_hot(z, 3), v),
                    [("z", ()), ("v", (3,))])
        with pytest.raises(NonDifferentiableError):
            G.grad(g, g.input_id("z"))

    def test_nonscalar_output_rejected(self):
        g = G.build(lambda x: G.square(x), [("x", (3,))], scalar=False)
        with pytest.raises(GraphError):
            G.grad(g, g.input_id("x"))

    def test_broadcast_binary_grads(self):
        rng = np.random.default_rng(9)

        def model(s, v):
            return G.sum_all((s + v) * (v - s) / (s + 2.0))

        g = G.build(model, [("s", ()), ("v", (4,))])
        s0 = 0.7
        v0 = rng.standard_normal(4)
        for name, x0 in (("s", np.asarray(s0)), ("v", v0)):
            gr = G.grad(g, g.input_id(name))
            got = G.evaluate(gr, dict(s=s0, v=v0))
            def f(val):
                env = dict(s=s0, v=v0)
                env[name] = val if name == "v" else float(val)
                return float(G.evaluate(g, env))
            fd = central_diff(f, x0)
            assert np.abs(np.asarray(got) - fd).max() < 1e-5


class TestSplice:
    def test_constant_for_constant(self):
        gb = G.GraphBuilder()
        x = gb.input("x", ())
        c = gb.constant(2.0)
        g = gb.finish(gb.prim("add", (x, c)))
        rb = G.GraphBuilder()
        frag = rb.finish(rb.constant(2.0))
        out = G.splice(g, c.nid, frag)
        assert G.evaluate(out, {"x": 1.0}) == 3.0

    def test_square_for_product(self):
        gb = G.GraphBuilder()
        x = gb.input("x", (3,))
        prod = gb.prim("multiply", (x, x))
        g = gb.finish(G.sum_all(prod))
        rb = G.GraphBuilder()
        xr = rb.input("x", (3,))
        frag = rb.finish(G.square(xr))
        out = G.splice(g, prod.nid, frag)
        rng = np.random.default_rng(0)
        for _ in range(5):
            v = rng.standard_normal(3)
            assert abs(G.evaluate(out, {"x": v})
                       - G.evaluate(g, {"x": v})) < 1e-12

    def test_zero_splice_drops_linear_terms(self):
        # c1*t + c2*t^2 + c3: zeroing the statistic node drops terms in it
        gb = G.GraphBuilder()
        t = gb.input("t", ())
        c1 = gb.input("c1", ())
        c2 = gb.input("c2", ())
        expr = c1 * t + c2 * (t * t) + 5.0
        g = gb.finish(expr)
        replaced, _ = G.replace_nodes(g, {t.nid: ("const", 0.0)})
        env = dict(c1=3.0, c2=4.0)
        assert G.evaluate(replaced, env) == 5.0

    def test_shape_mismatch_rejected(self):
        gb = G.GraphBuilder()
        x = gb.input("x", (3,))
        g = gb.finish(G.sum_all(x))
        rb = G.GraphBuilder()
        frag = rb.finish(rb.constant(np.ones(2)))
        with pytest.raises(GraphError):
            G.splice(g, x.nid, frag)


class TestDump:
    def test_single_input_identity(self):
        g = G.build(lambda x: x, [("x", (3,))], scalar=False)
        txt = G.dump(g, "text")
        assert sum(1 for line in txt.splitlines()
                   if line.startswith("input ")) == 1

    def test_roundtrip_fixed_point(self):
        g = beta_bernoulli_graph()
        txt = G.dump(g, "text")
        g2 = G.parse(txt)
        assert G.dump(g2, "text") == txt
        assert abs(G.evaluate(g2, BB_ENV) - G.evaluate(g, BB_ENV)) < 1e-15

    def test_dot_is_valid_digraph(self):
        g = beta_bernoulli_graph()
        dot = G.dump(g, "dot")
        lines = [ln.strip() for ln in dot.splitlines() if ln.strip()]
        assert lines[0] == "digraph termgraph {"
        assert lines[-1] == "}"
        assert dot.count("{") == dot.count("}")
        declared = set()
        for ln in lines[1:-1]:
            if "[" in ln and "->" not in ln:
                declared.add(ln.split()[0])
        for ln in lines[1:-1]:
            if "->" in ln:
                src, dst = ln.rstrip(";").split("->")
                assert src.strip() in declared
                assert dst.strip() in declared

    def test_parse_error_has_line_number(self):
        with pytest.raises(GraphError, match="line 3"):
            G.parse("# symconj-graph v1\ninput x ()\nprim n1 bogus x\noutput n1")
