"""Per-field consistency policies for result schemas.

Every leaf of every result schema ends up with a policy.  Leaves already
annotated in the document keep their annotation; the classifier fills in
the rest, and anything it declines to label becomes must-identical.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, replace
from typing import Protocol

from .errors import AnnotationError, OracleError
from .schema import ConsistencyPolicy, SchemaNode, join_pointer, map_leaves
from .spec import ApiSpec, MethodSpec

log = logging.getLogger(__name__)

DEFAULT_POLICY = ConsistencyPolicy.MUST_IDENTICAL


@dataclass(frozen=True)
class FieldLabel:
    policy: ConsistencyPolicy
    environmental: bool = False


class PolicyClassifier(Protocol):
    def label(self, method: MethodSpec, field_path: str, node: SchemaNode) -> FieldLabel | None:
        """Return a label, or ``None`` to accept the default."""


# Field names that carry per-node identity.
_IDENTITY_NAMES = re.compile(
    r"^(peer_?id|enr|node_?id|p2p_addresses|discovery_addresses|last_seen_p2p_address|enode)$", re.I)
_IDENTITY_TEXT = re.compile(r"\bnode'?s? (own )?(public key|identity|identifier)\b", re.I)
# Fields that reflect the local node's sync or connection state.
_NODE_STATE_NAMES = re.compile(
    r"^(is_syncing|syncing|sync_distance|head_slot|is_optimistic|el_offline|"
    r"currentBlock|highestBlock|startingBlock|state|direction|peerCount)$", re.I)
_METADATA_NAMES = re.compile(r"^(version|client_?version|clientVersion)$", re.I)


class RuleClassifier:
    """Keyword table over field names, titles and descriptions."""

    def label(self, method: MethodSpec, field_path: str, node: SchemaNode) -> FieldLabel | None:
        # array items are named after the array that holds them
        named = [t for t in field_path.split("/") if t and t != "*"]
        name = named[-1] if named else (method.result_name or "")
        text = " ".join(filter(None, (node.title, node.description)))
        if _IDENTITY_NAMES.match(name) or _IDENTITY_TEXT.search(text):
            return FieldLabel(ConsistencyPolicy.MUST_DIVERGENT)
        if _NODE_STATE_NAMES.match(name):
            return FieldLabel(ConsistencyPolicy.MAY_DIVERGENT, environmental=True)
        if _METADATA_NAMES.match(name):
            return FieldLabel(ConsistencyPolicy.MAY_DIVERGENT)
        return None


class OracleClassifier:
    """Asks an external model backend to label each field.

    Any backend failure propagates as :class:`AnnotationError`; nothing is
    written half-annotated.
    """

    def __init__(self, backend) -> None:
        self.backend = backend

    def label(self, method: MethodSpec, field_path: str, node: SchemaNode) -> FieldLabel | None:
        try:
            answer = self.backend.classify_field(method, field_path, node)
        except OracleError as exc:
            raise AnnotationError(method.name, field_path, str(exc)) from exc
        try:
            policy = ConsistencyPolicy.parse(answer["policy"])
        except (KeyError, TypeError, ValueError) as exc:
            raise AnnotationError(method.name, field_path, f"unusable classifier answer {answer!r}") from exc
        env = bool(answer.get("environmental")) and policy is ConsistencyPolicy.MAY_DIVERGENT
        return FieldLabel(policy, env)


def annotate_method(method: MethodSpec, classifier: PolicyClassifier) -> tuple[MethodSpec, dict[str, str]]:
    summary: dict[str, str] = {}

    def visit(tokens: tuple[str, ...], leaf: SchemaNode) -> SchemaNode:
        path = join_pointer(tokens)
        if leaf.consistency_policy is None:
            try:
                label = classifier.label(method, path, leaf)
            except AnnotationError:
                raise
            except Exception as exc:  # classifier bugs must not leave a partial annotation
                raise AnnotationError(method.name, path, repr(exc)) from exc
            label = label or FieldLabel(DEFAULT_POLICY)
            leaf = leaf.with_policy(label.policy, label.environmental)
        summary[path or "/"] = leaf.consistency_policy.value
        return leaf

    result = map_leaves(method.result, visit)
    return replace(method, result=result), summary


def annotate_policies(spec: ApiSpec, classifier: PolicyClassifier) -> tuple[ApiSpec, dict[str, dict[str, str]]]:
    """Label every result leaf; returns the new spec and an audit summary.

    The summary maps method name to ``{field path: policy}``.
    """
    methods = {}
    audit = {}
    for name, method in spec.methods.items():
        methods[name], audit[name] = annotate_method(method, classifier)
        log.debug("annotated %s: %d fields", name, len(audit[name]))
    return ApiSpec(methods, spec.source_label), audit
