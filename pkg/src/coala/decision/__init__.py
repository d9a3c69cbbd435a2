from coala.decision.cycle import (
    Agent,
    CycleRecord,
    Reject,
    cycle,
    evaluate,
    execute,
    parse_value,
    propose,
    reason,
    reflect,
    select,
)
from coala.decision.policy import (
    ActionCandidate,
    DecisionPolicy,
    LearningAction,
    LearningTrigger,
    ReasoningStep,
    RetrievalStep,
    TreeSearchConfig,
)
from coala.decision.search import ScriptedTree, SearchResult, tree_search

__all__ = [
    "ActionCandidate",
    "Agent",
    "CycleRecord",
    "DecisionPolicy",
    "LearningAction",
    "LearningTrigger",
    "ReasoningStep",
    "Reject",
    "RetrievalStep",
    "ScriptedTree",
    "SearchResult",
    "TreeSearchConfig",
    "cycle",
    "evaluate",
    "execute",
    "parse_value",
    "propose",
    "reason",
    "reflect",
    "select",
    "tree_search",
]
