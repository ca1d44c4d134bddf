import json
import random

import pytest

from fead.capmodel import (
    AttributeSpec,
    CapabilityTriple,
    CollectedOutput,
    Dtype,
    ImplClass,
    IntegrationExpr,
    TaskSpec,
    UnresolvedReferenceError,
    mu,
)
from fead.errors import ConfigError
from fead.planner import (
    Assignment,
    BindingError,
    CostParams,
    DecomposerStrategy,
    cost_deploy,
    cost_dev,
    cost_total,
    decompose_task,
    DecompositionResult,
    execute_plan,
    generate_integration_logic,
    generate_subtasks,
    plan,
    plan_document,
    rank_solutions,
)

A = AttributeSpec


def cap(name, entities=("process",), attrs=(), events=("execute",), overhead=0.1):
    return CapabilityTriple(name, frozenset(entities), frozenset(attrs),
                            frozenset(events), ImplClass.EXISTING, overhead)


def task(name="t", entities=("process",), attrs=(), events=("execute",)):
    return TaskSpec(name, frozenset(entities), frozenset(attrs), frozenset(events))


@pytest.fixture
def envvar_catalog():
    return [
        cap("cmd_history", attrs=[A("cmd_str", Dtype.STR), A("pid", Dtype.INT)],
            events=("execute",), overhead=0.12),
        cap("env_list", attrs=[A("var_name", Dtype.STR)],
            events=("envvar_set",), overhead=0.05),
    ]


@pytest.fixture
def envvar_task():
    return task("envvar_watch",
                attrs=[A("cmd_str", Dtype.STR), A("var_name", Dtype.STR)],
                events=("execute", "envvar_set"))


class TestGenerateSubtasks:
    def test_env_var_split_with_name_join(self, envvar_task, envvar_catalog):
        subs, expr = generate_subtasks(envvar_task, envvar_catalog, DecomposerStrategy())
        assert len(subs) == 2
        assert expr.op == "name_join"
        # the command-history side feeds the left operand
        assert expr.children[0].ref == subs[0].name
        assert "cmd_str" in {a.name for a in subs[0].attributes}
        assert "var_name" in {a.name for a in subs[1].attributes}

    def test_directly_covered_task_is_identity(self):
        c = cap("all", attrs=[A("cmd", Dtype.STR)])
        t = task(attrs=[A("cmd", Dtype.STR)])
        subs, expr = generate_subtasks(t, [c], DecomposerStrategy())
        assert subs == [t]
        assert expr.op == "subtask" and expr.ref == t.name

    def test_empty_catalog_returns_task_unchanged(self):
        t = task()
        subs, expr = generate_subtasks(t, [], DecomposerStrategy())
        assert subs == [t]
        assert mu(t, []) == 0


class TestDecomposeTask:
    def test_env_var_round_trip_sets(self, envvar_task, envvar_catalog):
        d = decompose_task(envvar_task, envvar_catalog)
        assert len(d.subtasks) == 2
        assert d.new_needs == []
        assert d.integration[d.task].op == "name_join"
        assert all(mu(t, envvar_catalog) == 1 for t in d.subtasks)

    def test_fully_covered_task(self):
        c = cap("all")
        t = task()
        d = decompose_task(t, [c])
        assert [s.name for s in d.subtasks] == [t.name]
        assert d.new_needs == []
        assert d.assignments[t.name].capability == "all"

    def test_empty_catalog_goes_to_new_needs(self):
        t = task()
        d = decompose_task(t, [])
        assert d.subtasks == []
        assert [n.name for n in d.new_needs] == [t.name]
        assert d.assignments[t.name].kind == "new"

    def test_partial_coverage_splits_s_and_n(self):
        catalog = [cap("exec_watch", events=("execute",))]
        t = task(events=("execute", "envvar_set"))
        d = decompose_task(t, catalog)
        assert len(d.subtasks) == 1
        assert len(d.new_needs) == 1
        assert "envvar_set" in d.new_needs[0].events

    def test_partition_soundness_on_random_catalogs(self):
        rng = random.Random(23)
        ents = ["process", "file", "socket"]
        evs = ["read", "write", "execute", "connect", "envvar_set"]
        ats = [A("a1", Dtype.STR), A("a2", Dtype.INT), A("a3", Dtype.REAL)]

        def pick(pool, lo=1):
            return frozenset(rng.sample(pool, rng.randint(lo, min(3, len(pool)))))

        for trial in range(150):
            catalog = [
                CapabilityTriple(f"c{i}", pick(ents),
                                 frozenset(rng.sample(ats, rng.randint(0, 3))),
                                 pick(evs))
                for i in range(rng.randint(0, 4))
            ]
            t = TaskSpec("t", pick(ents),
                         frozenset(rng.sample(ats, rng.randint(0, 3))), pick(evs))
            d = decompose_task(t, catalog)  # must terminate
            assert all(mu(s, catalog) == 1 for s in d.subtasks)
            assert all(mu(n, catalog) == 0 for n in d.new_needs)
            for name in [s.name for s in d.subtasks] + [n.name for n in d.new_needs]:
                assert name in d.assignments


class TestGenerateIntegrationLogic:
    def test_first_match_binding(self):
        t1 = task("t1")
        compose = IntegrationExpr.leaf("t1")
        bound = generate_integration_logic(t1, compose, [cap("first"), cap("second")])
        assert bound.binding == "cap:first"

    def test_tie_break_prefers_earlier_catalog_entry(self):
        # both capabilities match; enumerating both confirms only catalog
        # order decides (cost ranking happens later, at the solution level)
        t1 = task("t1")
        one, two = cap("one", overhead=0.9), cap("two", overhead=0.01)
        for catalog in ([one, two], [two, one]):
            bound = generate_integration_logic(t1, IntegrationExpr.leaf("t1"), catalog)
            assert bound.binding == f"cap:{catalog[0].name}"

    def test_placeholder_without_catalog(self):
        t = task("t_new")
        bound = generate_integration_logic(t, IntegrationExpr.leaf("t_new"))
        assert bound.binding == "new:t_new"

    def test_no_match_is_binding_error(self):
        t = task("t1", events=("envvar_set",))
        with pytest.raises(BindingError, match="t1"):
            generate_integration_logic(t, IntegrationExpr.leaf("t1"), [cap("c")])


class TestCosts:
    def test_deploy_existing(self):
        a = Assignment.existing(cap("c", overhead=0.10))
        assert cost_deploy(a, CostParams()) == pytest.approx(0.02)

    def test_deploy_new_user_and_hw(self):
        user = Assignment.new(ImplClass.NEW_USER, 0.10)
        hw = Assignment.new(ImplClass.NEW_HARDWARE, 0.10)
        assert cost_deploy(user, CostParams()) == pytest.approx(0.07)
        assert cost_deploy(hw, CostParams()) == pytest.approx(0.03)

    def test_dev_costs(self):
        params = CostParams()
        assert cost_dev(Assignment.existing(cap("c")), params) == 0.0
        assert cost_dev(Assignment.new(ImplClass.NEW_USER, 0.1), params) == 10.0
        assert cost_dev(Assignment.new(ImplClass.NEW_KERNEL, 0.1), params) == 25.0
        assert cost_dev(Assignment.new(ImplClass.NEW_HARDWARE, 0.1), params) == 50.0

    def test_total_two_existing(self):
        d = _decomp([("s1", Assignment.existing(cap("c1", overhead=0.1))),
                     ("s2", Assignment.existing(cap("c2", overhead=0.1)))], [])
        assert cost_total(d, CostParams()) == pytest.approx(2.04)

    def test_total_one_new_user(self):
        d = _decomp([], [("n1", Assignment.new(ImplClass.NEW_USER, 0.1))])
        assert cost_total(d, CostParams()) == pytest.approx(11.07)

    def test_total_empty_decomposition_is_zero(self):
        d = _decomp([], [])
        assert cost_total(d, CostParams()) == 0.0
        assert cost_total(d, CostParams(complexity_model="log")) == 0.0

    def test_log_complexity_switch(self):
        d = _decomp([("s1", Assignment.existing(cap("c1", overhead=0.0))),
                     ("s2", Assignment.existing(cap("c2", overhead=0.0)))], [])
        assert cost_total(d, CostParams(complexity_model="log")) == pytest.approx(2.0)
        d4 = _decomp([(f"s{i}", Assignment.existing(cap(f"c{i}", overhead=0.0)))
                      for i in range(4)], [])
        assert cost_total(d4, CostParams(complexity_model="log")) == pytest.approx(3.0)

    def test_param_orderings_enforced(self):
        with pytest.raises(ConfigError):
            CostParams(beta_hw=0.9)
        with pytest.raises(ConfigError):
            CostParams(gamma_user=30.0)

    def test_dominance_swapping_existing_for_new(self):
        # with the default parameters, converting any existing assignment to
        # a new monitor of any class strictly raises the total cost
        rng = random.Random(5)
        params = CostParams()
        for trial in range(200):
            n_existing = rng.randint(1, 5)
            n_new = rng.randint(0, 3)
            subs = [(f"s{i}", Assignment.existing(cap(f"c{i}", overhead=rng.random())))
                    for i in range(n_existing)]
            news = [(f"n{i}", Assignment.new(rng.choice(list(ImplClass)[1:]), rng.random()))
                    for i in range(n_new)]
            d = _decomp(subs, news)
            base = cost_total(d, params)
            i = rng.randrange(n_existing)
            name, old = subs[i]
            for impl in (ImplClass.NEW_USER, ImplClass.NEW_KERNEL, ImplClass.NEW_HARDWARE):
                d.assignments[name] = Assignment.new(impl, old.overhead)
                assert cost_total(d, params) > base
            d.assignments[name] = old


def _decomp(subs, news):
    return DecompositionResult(
        task="t",
        subtasks=[task(n) for n, _ in subs],
        new_needs=[task(n) for n, _ in news],
        integration={"t": IntegrationExpr.leaf("t")},
        assignments={n: a for n, a in subs + news},
    )


class TestRanking:
    def test_ascending_with_head_minimizing(self):
        cheap = _decomp([("s1", Assignment.existing(cap("c", overhead=0.1))),
                         ("s2", Assignment.existing(cap("d", overhead=0.1)))], [])
        costly = _decomp([], [("n1", Assignment.new(ImplClass.NEW_USER, 0.1))])
        ranked = rank_solutions([costly, cheap], CostParams())
        assert ranked[0].decomposition is cheap
        assert ranked[0].score == pytest.approx(2.04)
        assert ranked[1].score == pytest.approx(11.07)
        scores = [s.score for s in ranked]
        assert scores == sorted(scores)

    def test_single_candidate(self):
        d = _decomp([("s", Assignment.existing(cap("c")))], [])
        assert rank_solutions([d], CostParams())[0].decomposition is d

    def test_stable_on_ties(self):
        d1 = _decomp([("s", Assignment.existing(cap("c", overhead=0.5)))], [])
        d2 = _decomp([("s", Assignment.existing(cap("c", overhead=0.5)))], [])
        ranked = rank_solutions([d1, d2], CostParams())
        assert ranked[0].decomposition is d1
        assert ranked[1].decomposition is d2

    def test_empty_list_rejected(self):
        with pytest.raises(ValueError):
            rank_solutions([], CostParams())


class TestExecutePlan:
    def test_identity_integration_passthrough(self):
        c = cap("all")
        t = task()
        d = decompose_task(t, [c])
        res = execute_plan(d, {t.name: CollectedOutput.of(t.name, [{"x": 1}])})
        assert list(res.records) == [{"x": 1}]

    def test_union_over_disjoint_streams(self):
        catalog = [cap("exec_watch", events=("execute",)),
                   cap("fork_watch", events=("fork",))]
        t = task(events=("execute", "fork"))
        d = decompose_task(t, catalog)
        assert d.integration[d.task].op == "union"
        outputs = {
            d.subtasks[0].name: CollectedOutput.of("a", [{"x": 1}]),
            d.subtasks[1].name: CollectedOutput.of("b", [{"x": 2}]),
        }
        res = execute_plan(d, outputs)
        assert list(res.records) == [{"x": 1}, {"x": 2}]

    def test_env_var_round_trip_matches_brute_force(self, envvar_task, envvar_catalog):
        d = decompose_task(envvar_task, envvar_catalog)
        cmds = [{"cmd_str": "export PATH=/tmp:$PATH"}, {"cmd_str": "ls -la"},
                {"cmd_str": "export LD_PRELOAD=/tmp/e.so"}, {"cmd_str": "cat notes"}]
        variables = [{"var_name": "PATH"}, {"var_name": "LD_PRELOAD"}]
        cmd_sub = next(s for s in d.subtasks
                       if "cmd_str" in {a.name for a in s.attributes})
        var_sub = next(s for s in d.subtasks if s is not cmd_sub)
        res = execute_plan(d, {
            cmd_sub.name: CollectedOutput.of("t1", cmds),
            var_sub.name: CollectedOutput.of("t2", variables),
        })
        brute = [c for c in cmds
                 if any(v["var_name"] in c["cmd_str"] for v in variables)]
        assert list(res.records) == brute

    def test_missing_stream_is_reference_error(self, envvar_task, envvar_catalog):
        d = decompose_task(envvar_task, envvar_catalog)
        with pytest.raises(UnresolvedReferenceError, match="missing output"):
            execute_plan(d, {d.subtasks[0].name: CollectedOutput.of("t1", [])})


class TestExternalDecomposer:
    def _proposal(self, envvar_task):
        return json.dumps({
            "subtasks": [
                {"name": "hist", "entities": ["process"],
                 "attributes": [{"name": "cmd_str", "dtype": "Str"}],
                 "events": ["execute"]},
                {"name": "vars", "entities": ["process"],
                 "attributes": [{"name": "var_name", "dtype": "Str"}],
                 "events": ["envvar_set"]},
            ],
            "integration": {"op": "name_join", "children": [
                {"op": "subtask", "ref": "hist"}, {"op": "subtask", "ref": "vars"},
            ]},
        })

    def test_valid_proposal_is_used(self, envvar_task, envvar_catalog):
        client_calls = []

        def client(prompt):
            client_calls.append(prompt)
            return self._proposal(envvar_task)

        strategy = DecomposerStrategy("external", max_attempts=1, client=client)
        subs, expr = generate_subtasks(envvar_task, envvar_catalog, strategy)
        assert [s.name for s in subs] == ["hist", "vars"]
        assert expr.op == "name_join"
        assert "cmd_history" in client_calls[0]  # capabilities are in the prompt

    def test_invalid_then_valid_with_feedback(self, envvar_task, envvar_catalog):
        responses = iter(["not json at all", self._proposal(envvar_task)])
        prompts = []

        def client(prompt):
            prompts.append(prompt)
            return next(responses)

        strategy = DecomposerStrategy("external", max_attempts=3, client=client)
        subs, _ = generate_subtasks(envvar_task, envvar_catalog, strategy)
        assert len(subs) == 2
        assert "rejected" in prompts[1]

    def test_uncovered_proposal_falls_back_to_rule(self, envvar_task, envvar_catalog):
        bad = json.dumps({
            "subtasks": [{"name": "only_hist", "entities": ["process"],
                          "attributes": [{"name": "cmd_str", "dtype": "Str"}],
                          "events": ["execute"]}],
            "integration": {"op": "subtask", "ref": "only_hist"},
        })
        strategy = DecomposerStrategy("external", max_attempts=2, client=lambda p: bad)
        subs, expr = generate_subtasks(envvar_task, envvar_catalog, strategy)
        # rule-based fallback reproduces the two-way split
        assert len(subs) == 2
        assert expr.op == "name_join"

    def test_plan_ranks_external_and_rule_candidates(self, envvar_task, envvar_catalog):
        strategy = DecomposerStrategy(
            "external", max_attempts=1,
            client=lambda p: self._proposal(envvar_task))
        sols = plan(envvar_task, envvar_catalog, strategy)
        assert len(sols) == 2
        assert sols[0].score <= sols[1].score

    def test_max_attempts_bounds_client_calls(self, envvar_task, envvar_catalog):
        calls = []

        def client(prompt):
            calls.append(1)
            return "garbage"

        strategy = DecomposerStrategy("external", max_attempts=3, client=client)
        generate_subtasks(envvar_task, envvar_catalog, strategy)
        assert len(calls) == 3


class TestPlanDocument:
    def test_document_shape_and_determinism(self, envvar_task, envvar_catalog):
        sols = plan(envvar_task, envvar_catalog)
        doc = plan_document(envvar_task, sols)
        doc2 = plan_document(envvar_task, plan(envvar_task, envvar_catalog))
        assert json.dumps(doc) == json.dumps(doc2)
        assert doc["task"] == "envvar_watch"
        sol = doc["solutions"][0]
        assert set(sol) == {"score", "subtasks", "new_needs", "integration"}
        assert sol["subtasks"][0]["impl_class"] == "Existing"
        assert sol["integration"]["op"] == "name_join"

    def test_new_needs_carry_impl_class(self):
        t = task(events=("envvar_set",))
        doc = plan_document(t, plan(t, []))
        need = doc["solutions"][0]["new_needs"][0]
        assert need["impl_class"] == "NewUser"
        assert need["events"] == ["envvar_set"]
