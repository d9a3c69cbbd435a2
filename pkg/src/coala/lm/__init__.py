from coala.lm.backends import (
    Capabilities,
    CompletionRequest,
    GenerativeBackend,
    RemoteBackend,
    ScriptedBackend,
    ScriptEntry,
    backend_from_config,
    sample,
    score,
)
from coala.lm.chains import ChainState, ChainStep, chain
from coala.lm.parsing import ActionGrammar, ParsedAction, format_action, parse
from coala.lm.prompts import PromptTemplate, render

__all__ = [
    "ActionGrammar",
    "Capabilities",
    "ChainState",
    "ChainStep",
    "CompletionRequest",
    "GenerativeBackend",
    "ParsedAction",
    "PromptTemplate",
    "RemoteBackend",
    "ScriptEntry",
    "ScriptedBackend",
    "backend_from_config",
    "chain",
    "format_action",
    "parse",
    "render",
    "sample",
    "score",
]
