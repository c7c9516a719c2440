"""Smoke test for the dualgnn_py extension.

Build first:  maturin develop -m crates/python/Cargo.toml --release
Then run:     python python/smoke_test.py
"""

import os
import tempfile

import dualgnn_py as dg


def main():
    g = dg.Graph.sbm(seed=3, blocks=4, nodes_per_block=20, p_intra=1.0, q_inter=0.0,
                     feature_noise=0.05, train_per_class=5, val_size=20, test_size=40)
    print(g)
    assert g.num_nodes == 80 and g.num_classes == 4
    assert g.num_edges == 4 * 190
    assert len(g.train_nodes()) == 20

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "cliques.graph")
        g.save(path)
        back = dg.Graph.load(path)
        assert back.edges() == g.edges()
        assert back.features() == g.features()

        small = g.subsample_labels(2, seed=1).drop_edges(0.5, seed=1)
        assert len(small.train_nodes()) == 8
        assert small.num_edges == g.num_edges // 2

        rec = dg.train(g, mode="dual", seed=0, epochs=100)
        print("dual on cliques:", rec["final_test_accuracy"])
        assert rec["final_test_accuracy"] == 1.0
        assert len(rec["losses"]) == 100
        assert rec == dg.train(g, mode="dual", seed=0, epochs=100)

        spec = {"modes": ["gcn", "aux-cluster"], "labels_per_class": [2],
                "structures": 2, "repeats": 1, "train": {"epochs": 20}}
        res = dg.run_experiment(spec, graph=g, out_dir=tmp)
        assert [c["cell"]["mode"] for c in res["cells"]] == ["gcn", "aux-cluster"]
        assert all(len(c["runs"]) == 2 for c in res["cells"])
        with open(os.path.join(tmp, "results.csv")) as f:
            assert f.readline().startswith("mode,labels_per_class")

    edges = dg.correlation_graph([[1, 0], [1, 0], [0, 1]], 0.5)
    pairs = {(i, j): w for i, j, w in edges}
    assert abs(pairs[(0, 1)] - 1.0) < 1e-12 and (0, 2) not in pairs

    try:
        dg.train(g, mode="bogus")
    except ValueError as e:
        print("rejected:", e)
    else:
        raise AssertionError("bogus mode accepted")
    print("smoke test ok")


if __name__ == "__main__":
    main()
