import json

import numpy as np
import pytest

from cascadegen.cascade import build_cascades
from cascadegen.errors import EmptyCorpus, FormatVersionError
from cascadegen.features import FeatureSchema
from cascadegen.generator import (ConditionalTable, GenerationBudgetExceeded, GeneratorConfig, SeedRoot, TableSet,
                                  baseline_predict, fit_conditionals, generate_block, generate_tree,
                                  generate_trees, sample, size_bucket, trial_rng)
from cascadegen.metrics import js_from_probabilities

from helpers import ev, tree_from_parents


def table_set(degree, delay=None, extra=()):
    tables = {"degree|level": ConditionalTable("degree", "level", degree),
              "delay|size_bucket": ConditionalTable("delay", "size_bucket", delay or {0: {5: 1}})}
    for t in extra:
        tables[t.name] = t
    return TableSet(tables)


def seed(eid="s", t=0):
    return SeedRoot(eid, t)


def test_counting_and_fallback():
    # level-1 nodes with degrees 0, 0, 2
    tree = tree_from_parents([-1, 0, 0, 0, 3, 3])
    tables = fit_conditionals([tree])
    probs = tables["degree|level"].probabilities(1)
    assert probs == {0: 2 / 3, 2: 1 / 3}
    t = tables["degree|level"]
    assert t.histogram(999) == t.fallback
    total = {}
    for h in t.table.values():
        for v, c in h.items():
            total[v] = total.get(v, 0) + c
    assert t.fallback == total
    for key in t.table:
        assert abs(sum(t.probabilities(key).values()) - 1.0) < 1e-12


def test_path_of_three_table():
    tables = fit_conditionals([tree_from_parents([-1, 0, 1])])
    assert tables["degree|level"].table == {0: {1: 1}, 1: {1: 1}, 2: {0: 1}}
    assert set(tables.tables) >= {"degree|level", "degree|birth_order", "delay|size_bucket",
                                  "speed_class|level", "speed_class|birth_order"}


def test_attribute_tables():
    attrs = [{"sentiment": 1.0}, {"sentiment": -1.0}]
    tables = fit_conditionals([tree_from_parents([-1, 0], attrs=attrs)], ["sentiment"])
    assert tables["sentiment|level"].table == {0: {1.0: 1}, 1: {-1.0: 1}}


def test_empty_corpus():
    with pytest.raises(EmptyCorpus):
        fit_conditionals([])


def test_size_bucket():
    assert [size_bucket(n) for n in (1, 2, 3, 4, 7, 8, 1000)] == [0, 1, 1, 2, 2, 3, 9]


def test_sample_frequencies():
    t = ConditionalTable("degree", "level", {0: {0: 3, 2: 1}})
    rng = np.random.default_rng(0)
    draws = np.array([sample(t, 0, rng) for _ in range(10**6)])
    assert abs((draws == 0).mean() - 0.75) < 0.005
    one = ConditionalTable("degree", "level", {0: {5: 7}})
    assert all(sample(one, 0, rng) == 5 for _ in range(100))
    fb = ConditionalTable("degree", "level", {3: {0: 1}})
    assert sample(fb, 42, rng) == 0


def test_sample_deterministic():
    t = ConditionalTable("degree", "level", {0: {0: 3, 1: 2, 4: 1}})
    a = [t.sample(0, np.random.default_rng(9)) for _ in range(1)]
    b = [t.sample(0, np.random.default_rng(9)) for _ in range(1)]
    assert a == b


def test_singletons_when_degree_always_zero():
    tables = table_set({0: {0: 1}, 1: {0: 1}})
    rng = np.random.default_rng(1)
    assert all(generate_tree(seed(), tables, GeneratorConfig(), rng).size == 1 for _ in range(50))


def test_path_of_three():
    tables = table_set({0: {1: 1}, 1: {1: 1}, 2: {0: 1}})
    rng = np.random.default_rng(1)
    for _ in range(20):
        t = generate_tree(seed(), tables, GeneratorConfig(), rng)
        assert t.size == 3 and t.max_depth == 2 and not t.truncated


def test_generation_is_deterministic():
    tables = table_set({0: {2: 1, 0: 1}, 1: {1: 2, 0: 1}}, {0: {3: 1}, 1: {1: 1, 9: 1}, 2: {4: 1}})
    a = generate_tree(seed(), tables, GeneratorConfig(), np.random.default_rng(77))
    b = generate_tree(seed(), tables, GeneratorConfig(), np.random.default_rng(77))
    assert a.signature() == b.signature()


def test_caps_truncate():
    tables = table_set({k: {2: 1} for k in range(200)})
    t = generate_tree(seed(), tables, GeneratorConfig(max_depth=4), np.random.default_rng(0))
    assert t.max_depth == 4 and t.truncated and t.size == 31
    t = generate_tree(seed(), tables, GeneratorConfig(max_size=10), np.random.default_rng(0))
    assert t.size == 10 and t.truncated


def test_step_budget():
    tables = table_set({k: {2: 1} for k in range(200)})
    with pytest.raises(GenerationBudgetExceeded):
        generate_tree(seed(), tables, GeneratorConfig(max_depth=None, max_size=None), np.random.default_rng(0),
                      step_budget=1000)


def test_subcritical_generation_terminates():
    tables = table_set({0: {0: 1, 1: 1, 2: 1}, 1: {0: 3, 1: 1, 2: 1}}, {0: {1: 1}})
    cfg = GeneratorConfig(max_depth=None, max_size=None)
    rng = np.random.default_rng(3)
    for _ in range(10**4):
        generate_tree(seed(), tables, cfg, rng, step_budget=10**5)


def test_generated_trees_are_valid():
    rng = np.random.default_rng(4)
    tables = table_set({0: {3: 1}, 1: {0: 1, 1: 1, 2: 1}, 2: {0: 2, 1: 1}},
                       {1: {0: 1, 5: 1}, 2: {2: 3, 60: 1}, 3: {7: 1}})
    for t in generate_trees([seed(f"s{i}", 100 * i) for i in range(200)], tables, GeneratorConfig(), rng):
        (again,) = build_cascades(t.to_events(), strict=True)
        assert again.signature() == t.signature()
        for node in t.nodes[1:]:
            assert node.time >= node.parent.time


def test_seed_attributes_kept_and_children_sampled():
    attr_t = ConditionalTable("sentiment", "level", {1: {0.5: 1}})
    tables = table_set({0: {2: 1}, 1: {0: 1}}, extra=[attr_t])
    tables.attributes = ["sentiment"]
    root = SeedRoot("s", 10, {"sentiment": -3.0}, "alice", "alpha")
    t = generate_tree(root, tables, GeneratorConfig(), np.random.default_rng(0))
    assert t.root.attributes == {"sentiment": -3.0} and t.root.author_id == "alice"
    assert t.community == "alpha"
    assert [n.attributes["sentiment"] for n in t.nodes[1:]] == [0.5, 0.5]


def test_generate_block():
    tables = table_set({0: {1: 1}, 1: {0: 1}})
    seeds = [seed("c"), seed("a"), seed("b")]
    block = generate_block(seeds, tables, GeneratorConfig(), rng_seed=5)
    assert [b.cascade_id for b in block.bricks] == ["c", "a", "b"] and block.rng_seed == 5
    with pytest.raises(EmptyCorpus):
        generate_block([], tables, GeneratorConfig())


def test_generate_block_reproducible_bytes(tmp_path):
    from cascadegen import storage

    tables = table_set({0: {2: 1, 0: 1}, 1: {1: 1, 0: 2}, 2: {0: 1}}, {1: {3: 1, 8: 2}, 2: {1: 1}})
    seeds = [seed(f"s{i}", i) for i in range(30)]
    for name in ("a", "b"):
        storage.write_block(tmp_path / name, generate_block(seeds, tables, GeneratorConfig(), rng_seed=12))
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()
    assert storage.sidecar_path(tmp_path / "a").read_bytes() == storage.sidecar_path(tmp_path / "b").read_bytes()


def test_baseline_rates():
    tables = TableSet({
        "degree|level": ConditionalTable("degree", "level", {1: {0: 9, 3: 1}}),
        "degree|birth_order": ConditionalTable("degree", "birth_order", {1: {0: 1}, 2: {4: 1}}),
        "speed_class|level": ConditionalTable("speed_class", "level", {2: {0: 1}}),
    })
    rng = np.random.default_rng(0)
    draws = [baseline_predict(1, 1, "degree|level", tables, rng) for _ in range(10**5)]
    assert abs(np.mean(draws) - 0.10) < 0.01
    assert all(baseline_predict(2, 1, "speed|level", tables, rng) == 0 for _ in range(100))
    # unseen birth order 7 draws from the fallback {0: 1, 4: 1}
    fb = [baseline_predict(0, 7, "degree|birth_order", tables, rng) for _ in range(4000)]
    assert 0.45 < np.mean(fb) < 0.55
    with pytest.raises(ValueError):
        baseline_predict(0, 1, "delay|level", tables, rng)


def test_table_json_roundtrip():
    tables = fit_conditionals([tree_from_parents([-1, 0, 0, 1], attrs=[{"x": 1.5}] * 4)], ["x"])
    doc = json.loads(json.dumps(tables.to_dict()))
    again = TableSet.from_dict(doc)
    assert again.tables == tables.tables and again.attributes == ["x"]
    with pytest.raises(FormatVersionError):
        TableSet.from_dict(dict(doc, version="2.0"))
    with pytest.raises(FormatVersionError):
        TableSet.from_dict(dict(doc, format="other"))


def test_trial_rng_substreams():
    a = trial_rng(5, 0).random(4)
    assert np.array_equal(a, trial_rng(5, 0).random(4))
    assert not np.array_equal(a, trial_rng(5, 1).random(4))
