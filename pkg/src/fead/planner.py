"""Monitoring-task decomposition over a capability catalog, with cost ranking.

Decomposition recursively splits a task into subtasks until each one is
either covered by a single existing collector (set `S`) or flagged as a
new-collector requirement (set `N`), while synthesizing the integration
expression that reassembles subtask outputs into the original task output.
Candidate decompositions are scored by deployment + development +
complexity cost and ranked ascending; the head is the selected strategy.

With the rule-based strategy everything here is a pure function of
(task, catalog, params), safe to run concurrently across tasks; external
generator calls are serialized within one plan invocation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

from .capmodel import (
    CapabilityTriple,
    CollectedOutput,
    ImplClass,
    IntegrationExpr,
    TaskSpec,
    UnresolvedReferenceError,
    eval_integration,
    matches,
    mu,
    task_from_json,
)
from .errors import ConfigError, InputError


class BindingError(InputError):
    """No catalog capability matches the subtask being bound."""


@dataclass(frozen=True)
class CostParams:
    """Cost-model weights.

    Deployment weights must satisfy beta_hw < beta_kernel < beta_user and
    development costs 0 < gamma_user < gamma_kernel < gamma_hw; the
    defaults encode that user-space monitors are cheap to build but costly
    to run, and hardware monitors the reverse.
    """

    alpha: float = 0.2
    beta_user: float = 0.7
    beta_kernel: float = 0.5
    beta_hw: float = 0.3
    gamma_user: float = 10.0
    gamma_kernel: float = 25.0
    gamma_hw: float = 50.0
    complexity_model: str = "linear"  # "linear" (= subtask count) or "log"

    def __post_init__(self):
        if not self.beta_hw < self.beta_kernel < self.beta_user:
            raise ConfigError("cost params must satisfy beta_hw < beta_kernel < beta_user")
        if not 0 < self.gamma_user < self.gamma_kernel < self.gamma_hw:
            raise ConfigError("cost params must satisfy 0 < gamma_user < gamma_kernel < gamma_hw")
        if self.complexity_model not in ("linear", "log"):
            raise ConfigError("complexity_model must be 'linear' or 'log'")

    def beta(self, impl: ImplClass) -> float:
        return {
            ImplClass.NEW_USER: self.beta_user,
            ImplClass.NEW_KERNEL: self.beta_kernel,
            ImplClass.NEW_HARDWARE: self.beta_hw,
        }[impl]

    def gamma(self, impl: ImplClass) -> float:
        return {
            ImplClass.NEW_USER: self.gamma_user,
            ImplClass.NEW_KERNEL: self.gamma_kernel,
            ImplClass.NEW_HARDWARE: self.gamma_hw,
        }[impl]


@dataclass(frozen=True)
class Assignment:
    """How one subtask will be collected: an existing capability or a new monitor."""

    kind: str  # "existing" | "new"
    capability: str | None
    impl_class: ImplClass
    overhead: float

    @staticmethod
    def existing(cap: CapabilityTriple) -> "Assignment":
        return Assignment("existing", cap.name, ImplClass.EXISTING, cap.overhead)

    @staticmethod
    def new(impl_class: ImplClass, overhead: float) -> "Assignment":
        if impl_class is ImplClass.EXISTING:
            raise ConfigError("new-monitor assignment needs a NewUser/NewKernel/NewHardware class")
        return Assignment("new", None, impl_class, overhead)


@dataclass
class DecompositionResult:
    task: str
    subtasks: list[TaskSpec]          # S: covered by existing collectors
    new_needs: list[TaskSpec]         # N: require new collectors
    integration: dict[str, IntegrationExpr]
    assignments: dict[str, Assignment]


@dataclass(frozen=True)
class Solution:
    decomposition: DecompositionResult
    score: float


@dataclass(frozen=True)
class DecomposerStrategy:
    kind: str = "rule"  # "rule" | "external"
    max_attempts: int = 3
    client: object = None  # callable(prompt: str) -> str, external kind only

    def __post_init__(self):
        if self.kind not in ("rule", "external"):
            raise ConfigError(f"decomposer kind must be 'rule' or 'external', got {self.kind!r}")
        if self.max_attempts < 1:
            raise ConfigError("max_attempts must be >= 1")


def _signature(t: TaskSpec):
    return (t.entities, t.attributes, t.events)


def _synthesize_integration(task: TaskSpec, subs: list[TaskSpec]) -> IntegrationExpr:
    """Integration for rule-based splits: name_join for the command/variable
    pairing, a union fold otherwise."""
    if len(subs) == 1:
        return IntegrationExpr.leaf(subs[0].name)
    if len(subs) == 2:
        attr_names = [frozenset(a.name for a in s.attributes) for s in subs]
        if "cmd_str" in attr_names[0] and "var_name" in attr_names[1]:
            return IntegrationExpr("name_join",
                                   (IntegrationExpr.leaf(subs[0].name),
                                    IntegrationExpr.leaf(subs[1].name)))
        if "cmd_str" in attr_names[1] and "var_name" in attr_names[0]:
            return IntegrationExpr("name_join",
                                   (IntegrationExpr.leaf(subs[1].name),
                                    IntegrationExpr.leaf(subs[0].name)))
    expr = IntegrationExpr.leaf(subs[0].name)
    for s in subs[1:]:
        expr = IntegrationExpr("union", (expr, IntegrationExpr.leaf(s.name)))
    return expr


def _rule_subtasks(task: TaskSpec, catalog: list[CapabilityTriple]):
    """Project the task onto catalog capabilities, greedily in catalog order.

    Each projection keeps only the components one collector can observe, so
    every kept projection is directly mappable. Whatever stays uncovered
    becomes one remainder subtask for further decomposition.
    """
    covered_e: set[str] = set()
    covered_a = set()
    covered_t: set[str] = set()
    subs: list[TaskSpec] = []
    for cap in catalog:
        ents = task.entities & cap.entities
        attrs = task.attributes & cap.attributes
        events = task.events & cap.events
        if not ents or not events:
            continue
        if not ((ents - covered_e) or (attrs - covered_a) or (events - covered_t)):
            continue
        subs.append(TaskSpec(f"{task.name}/{cap.name}", ents, frozenset(attrs), events))
        covered_e |= ents
        covered_a |= attrs
        covered_t |= events
    if not subs:
        # nothing observable: the task is atomic for this catalog
        return [task], IntegrationExpr.leaf(task.name)
    rest_e = task.entities - covered_e
    rest_a = task.attributes - covered_a
    rest_t = task.events - covered_t
    if rest_e or rest_a or rest_t:
        subs.append(TaskSpec(
            f"{task.name}/unmet",
            rest_e or task.entities,
            frozenset(rest_a),
            rest_t or task.events,
        ))
    return subs, _synthesize_integration(task, subs)


# --- external (text-generation) decomposer --------------------------------


def build_decomposition_prompt(task: TaskSpec, catalog: list[CapabilityTriple]) -> str:
    lines = [
        "Decompose the monitoring task below into subtasks that existing",
        "collectors can serve, and give the integration logic that combines",
        "their outputs back into the task output.",
        "",
        "Existing collector capabilities:",
    ]
    for cap in catalog:
        lines.append(json.dumps(_capability_doc(cap), sort_keys=True))
    lines += [
        "",
        "Task requirements: target entities "
        + json.dumps(sorted(task.entities))
        + ", attribute output types "
        + json.dumps([[a.name, a.dtype.value] for a in sorted(task.attributes, key=lambda a: (a.name, a.dtype.value))])
        + ", event types "
        + json.dumps(sorted(task.events))
        + ".",
        "Respond with one JSON object: {\"subtasks\": [{name, entities, attributes:",
        "[{name, dtype}], events}], \"integration\": <expression tree>}.",
    ]
    return "\n".join(lines)


def _capability_doc(cap: CapabilityTriple) -> dict:
    return {
        "name": cap.name,
        "entities": sorted(cap.entities),
        "attributes": [
            {"name": a.name, "dtype": a.dtype.value}
            for a in sorted(cap.attributes, key=lambda a: (a.name, a.dtype.value))
        ],
        "events": sorted(cap.events),
        "impl_class": cap.impl_class.value,
        "overhead": cap.overhead,
    }


def _validate_proposal(doc, task: TaskSpec, catalog: list[CapabilityTriple]):
    """Check a generated decomposition: schema, leaf references, and that the
    capabilities bound to the subtasks jointly cover the task components."""
    if not isinstance(doc, dict):
        raise InputError("decomposition must be a JSON object")
    subs_doc = doc.get("subtasks")
    if not isinstance(subs_doc, list) or not subs_doc:
        raise InputError("decomposition needs a non-empty 'subtasks' list")
    subs = [task_from_json(d) for d in subs_doc]
    names = [s.name for s in subs]
    if len(set(names)) != len(names):
        raise InputError("subtask names must be unique")
    expr = IntegrationExpr.from_json(doc.get("integration"))
    for leaf in expr.leaves():
        if leaf.ref not in names:
            raise InputError(f"integration references unknown subtask {leaf.ref!r}")
    cov_e: set[str] = set()
    cov_a = set()
    cov_t: set[str] = set()
    for s in subs:
        for cap in catalog:
            if matches(s, cap):
                cov_e |= cap.entities
                cov_a |= set(cap.attributes)
                cov_t |= cap.events
                break
    missing = []
    if not task.entities <= cov_e:
        missing.append("entities")
    if not task.attributes <= cov_a:
        missing.append("attributes")
    if not task.events <= cov_t:
        missing.append("events")
    if missing:
        raise InputError("bound capabilities do not cover task " + ", ".join(missing))
    return subs, expr


def external_proposals(task: TaskSpec, catalog: list[CapabilityTriple],
                       strategy: DecomposerStrategy):
    """Validated decompositions from the external generator (possibly none).

    Invalid responses trigger a retry with the validation error fed back,
    up to max_attempts in total; the first validated proposal ends the loop.
    """
    if strategy.client is None:
        raise ConfigError("external decomposer requires a client")
    prompt = build_decomposition_prompt(task, catalog)
    proposals = []
    for _ in range(strategy.max_attempts):
        try:
            response = strategy.client(prompt)
            doc = json.loads(response)
            proposals.append(_validate_proposal(doc, task, catalog))
            break
        except (InputError, json.JSONDecodeError, ValueError) as exc:
            prompt = (
                build_decomposition_prompt(task, catalog)
                + f"\nThe previous response was rejected: {exc}. Please fix it."
            )
    return proposals


def generate_subtasks(task: TaskSpec, catalog: list[CapabilityTriple],
                      strategy: DecomposerStrategy):
    """Split a task into subtasks plus the expression recombining them.

    A task a single capability already covers is returned unchanged with an
    identity expression. Otherwise the strategy decides: rule-based
    projection, or the external generator with validation, retries, and a
    rule-based fallback.
    """
    if any(matches(task, c) for c in catalog):
        return [task], IntegrationExpr.leaf(task.name)
    if strategy.kind == "external" and strategy.client is not None:
        proposals = external_proposals(task, catalog, strategy)
        if proposals:
            return proposals[0]
    return _rule_subtasks(task, catalog)


def _bind_leaf(expr: IntegrationExpr, ref: str, binding: str) -> IntegrationExpr:
    if expr.op == "subtask":
        return expr.with_binding(binding) if expr.ref == ref else expr
    if expr.op == "lit":
        return expr
    return replace(expr, children=tuple(_bind_leaf(c, ref, binding) for c in expr.children))


def generate_integration_logic(subtask: TaskSpec, compose: IntegrationExpr,
                               catalog: list[CapabilityTriple] | None = None) -> IntegrationExpr:
    """Bind the subtask's leaf in ``compose`` to a collector.

    With a catalog: the first matching capability in catalog order (cost
    ranking happens at the solution level, so binding stays first-match).
    Without: a declared new-collector placeholder.
    """
    if catalog is not None:
        for cap in catalog:
            if matches(subtask, cap):
                return _bind_leaf(compose, subtask.name, f"cap:{cap.name}")
        raise BindingError(f"no capability matches subtask {subtask.name!r}")
    return _bind_leaf(compose, subtask.name, f"new:{subtask.name}")


def first_matching(subtask: TaskSpec, catalog: list[CapabilityTriple]) -> CapabilityTriple:
    for cap in catalog:
        if matches(subtask, cap):
            return cap
    raise BindingError(f"no capability matches subtask {subtask.name!r}")


def decompose_task(task: TaskSpec, catalog: list[CapabilityTriple],
                   strategy: DecomposerStrategy | None = None,
                   depth_limit: int = 5,
                   new_impl: ImplClass = ImplClass.NEW_USER,
                   new_overhead: float = 0.1) -> DecompositionResult:
    """Recursive decomposition: mappable subtasks enter S, atomic unmappable
    ones enter N, everything else recurses (bounded by ``depth_limit``)."""
    if depth_limit < 1:
        raise ConfigError("depth_limit must be >= 1")
    strategy = strategy or DecomposerStrategy()
    subs, compose = generate_subtasks(task, catalog, strategy)
    return _classify(task, subs, compose, catalog, strategy, depth_limit,
                     frozenset({_signature(task)}), new_impl, new_overhead)


def _classify(task, subs, compose, catalog, strategy, depth, ancestors,
              new_impl, new_overhead) -> DecompositionResult:
    result = DecompositionResult(task.name, [], [], {}, {})
    for t in subs:
        if mu(t, catalog):
            result.subtasks.append(t)
            compose = generate_integration_logic(t, compose, catalog)
            result.assignments[t.name] = Assignment.existing(first_matching(t, catalog))
            continue
        sig = _signature(t)
        child = None
        if depth > 1 and sig not in ancestors:
            child_subs, child_compose = generate_subtasks(t, catalog, strategy)
            child = _classify(t, child_subs, child_compose, catalog, strategy,
                              depth - 1, ancestors | {sig}, new_impl, new_overhead)
        if child is not None and child.subtasks:
            result.subtasks.extend(child.subtasks)
            result.new_needs.extend(child.new_needs)
            result.integration.update(child.integration)
            result.assignments.update(child.assignments)
        else:
            result.new_needs.append(t)
            compose = generate_integration_logic(t, compose, catalog=None)
            result.assignments[t.name] = Assignment.new(new_impl, new_overhead)
    result.integration[task.name] = compose
    return result


# --- cost model ------------------------------------------------------------


def cost_deploy(assignment: Assignment, params: CostParams) -> float:
    if assignment.kind == "existing":
        return params.alpha * assignment.overhead
    return params.beta(assignment.impl_class) * assignment.overhead


def cost_dev(assignment: Assignment, params: CostParams) -> float:
    if assignment.kind == "existing":
        return 0.0
    return params.gamma(assignment.impl_class)


def cost_total(d: DecompositionResult, params: CostParams) -> float:
    names = [t.name for t in d.subtasks] + [t.name for t in d.new_needs]
    total = 0.0
    for name in names:
        a = d.assignments[name]
        total += cost_deploy(a, params) + cost_dev(a, params)
    n = len(names)
    if params.complexity_model == "log":
        return total + (math.log2(n) + 1.0 if n else 0.0)
    return total + n


def rank_solutions(solutions: list[DecompositionResult],
                   params: CostParams) -> list[Solution]:
    """Ascending by total cost; stable, so equal scores keep input order."""
    if not solutions:
        raise ValueError("rank_solutions needs at least one candidate")
    scored = [Solution(d, cost_total(d, params)) for d in solutions]
    return sorted(scored, key=lambda s: s.score)


def plan(task: TaskSpec, catalog: list[CapabilityTriple],
         strategy: DecomposerStrategy | None = None,
         params: CostParams | None = None,
         depth_limit: int = 5,
         new_impl: ImplClass = ImplClass.NEW_USER,
         new_overhead: float = 0.1) -> list[Solution]:
    """Enumerate candidate decompositions and rank them by cost.

    Candidates are the rule-based decomposition plus one per validated
    external proposal (never more than the strategy's attempt budget).
    """
    strategy = strategy or DecomposerStrategy()
    params = params or CostParams()
    rule = DecomposerStrategy("rule")
    candidates = []
    if strategy.kind == "external" and strategy.client is not None:
        task_sig = frozenset({_signature(task)})
        for subs, expr in external_proposals(task, catalog, strategy):
            candidates.append(_classify(task, subs, expr, catalog, rule, depth_limit,
                                        task_sig, new_impl, new_overhead))
    candidates.append(decompose_task(task, catalog, rule, depth_limit,
                                     new_impl, new_overhead))
    return rank_solutions(candidates, params)


# --- plan execution and serialization --------------------------------------


def execute_plan(d: DecompositionResult,
                 outputs: dict[str, CollectedOutput]) -> CollectedOutput:
    """Evaluate the decomposition's integration logic over collected outputs."""
    missing = [t.name for t in list(d.subtasks) + list(d.new_needs)
               if t.name not in outputs]
    if missing:
        raise UnresolvedReferenceError(
            "missing output streams: " + ", ".join(sorted(missing))
        )
    resolved = dict(outputs)

    def resolve(name: str, stack: tuple[str, ...]) -> CollectedOutput:
        if name in resolved:
            return resolved[name]
        if name not in d.integration or name in stack:
            raise UnresolvedReferenceError(f"no output supplied for subtask {name!r}")
        expr = d.integration[name]
        for leaf in expr.leaves():
            if leaf.ref != name:
                resolved[leaf.ref] = resolve(leaf.ref, stack + (name,))
        out = eval_integration(expr, resolved, name=name)
        resolved[name] = out
        return out

    return resolve(d.task, ())


def _inline(expr: IntegrationExpr, integration: dict[str, IntegrationExpr],
            root: str, stack: tuple[str, ...]) -> IntegrationExpr:
    if expr.op == "subtask":
        nested = integration.get(expr.ref)
        if (expr.ref != root and nested is not None and expr.ref not in stack
                and not (nested.op == "subtask" and nested.ref == expr.ref)):
            return _inline(nested, integration, root, stack + (expr.ref,))
        return expr
    if expr.op == "lit":
        return expr
    return replace(expr, children=tuple(
        _inline(c, integration, root, stack) for c in expr.children
    ))


def _task_doc(t: TaskSpec) -> dict:
    return {
        "name": t.name,
        "entities": sorted(t.entities),
        "attributes": [
            {"name": a.name, "dtype": a.dtype.value}
            for a in sorted(t.attributes, key=lambda a: (a.name, a.dtype.value))
        ],
        "events": sorted(t.events),
    }


def plan_document(task: TaskSpec, solutions: list[Solution]) -> dict:
    """Serializable plan: ranked solutions with assignments and the inlined
    integration tree. Field order is fixed for reproducible output."""
    sol_docs = []
    for sol in solutions:
        d = sol.decomposition
        subtasks = []
        for t in d.subtasks:
            a = d.assignments[t.name]
            subtasks.append({
                "name": t.name,
                "assignment": a.capability if a.kind == "existing" else f"new:{t.name}",
                "impl_class": a.impl_class.value,
            })
        new_needs = []
        for t in d.new_needs:
            doc = _task_doc(t)
            doc["impl_class"] = d.assignments[t.name].impl_class.value
            new_needs.append(doc)
        root = d.integration[d.task]
        sol_docs.append({
            "score": _round_score(sol.score),
            "subtasks": subtasks,
            "new_needs": new_needs,
            "integration": _inline(root, d.integration, d.task, ()).to_json(),
        })
    return {"task": task.name, "solutions": sol_docs}


def _round_score(score: float) -> float:
    # round away float dust so plan documents are stable across platforms
    return round(score, 12)
