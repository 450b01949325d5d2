"""Registry of per-sub-task prompt templates with variable interpolation.

Templates live as UTF-8 text files ``prompts/builtin/<id>.system.txt`` /
``<id>.user.txt`` inside the package.  A user-supplied directory with the
same naming convention shadows built-ins by id.  Placeholders use
single-brace ``{name}`` syntax; literal braces are escaped by doubling.
Every analysis-stage system prompt carries a self-check instruction so the
model re-reads its numeric claims before answering.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, NamedTuple

from ..errors import MissingVariable, TemplateError, UnknownTemplate

#: Template ids whose system prompt must contain the self-check clause.
ANALYSIS_TEMPLATE_IDS = frozenset({
    "effectiveness_a",
    "compare_b",
    "reconstruct_c",
    "capability_c",
    "per_trial_d",
    "table_d",
    "overall_d",
    "cross_case_e",
})

#: Assertable substring of the self-check/reflection instruction.
SELF_CHECK_PHRASE = "carefully check"


def _placeholders(text: str) -> set[str]:
    names: set[str] = set()
    for _, name, spec, conversion in string.Formatter().parse(text):
        if name is None:
            continue
        if name == "" or spec or conversion or not name.isidentifier():
            raise TemplateError(
                f"placeholder {{{name}{'!' + conversion if conversion else ''}"
                f"{':' + spec if spec else ''}}} is not a bare variable name"
            )
        names.add(name)
    return names


@dataclass(frozen=True)
class PromptTemplate:
    """A system/user prompt pair; required_vars mirrors the placeholders."""

    id: str
    system_text: str
    user_text: str
    required_vars: frozenset[str] = field(default=frozenset())

    def __post_init__(self) -> None:
        found = _placeholders(self.system_text) | _placeholders(self.user_text)
        if not self.required_vars:
            object.__setattr__(self, "required_vars", frozenset(found))
        elif frozenset(found) != self.required_vars:
            raise TemplateError(
                f"template {self.id!r}: required_vars {sorted(self.required_vars)} "
                f"do not match placeholders {sorted(found)}"
            )

    @classmethod
    def from_texts(cls, template_id: str, system_text: str, user_text: str) -> "PromptTemplate":
        return cls(id=template_id, system_text=system_text, user_text=user_text)


class RenderedPrompt(NamedTuple):
    system: str
    user: str


class TemplateInfo(NamedTuple):
    id: str
    required_vars: tuple[str, ...]


class PromptRegistry:
    """Template lookup by id; later registrations shadow earlier ones."""

    def __init__(self) -> None:
        self._templates: dict[str, PromptTemplate] = {}

    def register(self, template: PromptTemplate) -> None:
        self._templates[template.id] = template

    def get(self, template_id: str) -> PromptTemplate:
        try:
            return self._templates[template_id]
        except KeyError:
            raise UnknownTemplate(f"no template registered under {template_id!r}") from None

    def render(self, template_id: str, variables: Mapping[str, str]) -> RenderedPrompt:
        template = self.get(template_id)
        missing = sorted(template.required_vars - set(variables))
        if missing:
            raise MissingVariable(missing)
        return RenderedPrompt(system=template.system_text.format_map(dict(variables)),
                              user=template.user_text.format_map(dict(variables)))

    def list(self) -> list[TemplateInfo]:
        return [TemplateInfo(id=tid, required_vars=tuple(sorted(t.required_vars)))
                for tid, t in sorted(self._templates.items())]


def _load_dir_templates(registry: PromptRegistry, names_to_text: Mapping[str, str]) -> None:
    ids = {name.rsplit(".", 2)[0] for name in names_to_text if name.endswith(".txt")}
    for template_id in sorted(ids):
        system_name = f"{template_id}.system.txt"
        user_name = f"{template_id}.user.txt"
        if system_name not in names_to_text or user_name not in names_to_text:
            raise TemplateError(
                f"template {template_id!r} needs both {system_name} and {user_name}"
            )
        registry.register(PromptTemplate.from_texts(
            template_id, names_to_text[system_name], names_to_text[user_name]))


def builtin_registry(user_dir: str | Path | None = None) -> PromptRegistry:
    """Fresh registry with the shipped templates, optionally shadowed by
    same-named files from ``user_dir``."""
    registry = PromptRegistry()
    package_files = resources.files(__package__) / "builtin"
    shipped = {entry.name: entry.read_text(encoding="utf-8")
               for entry in package_files.iterdir() if entry.name.endswith(".txt")}
    _load_dir_templates(registry, shipped)
    if user_dir is not None:
        user_dir = Path(user_dir)
        custom = {p.name: p.read_text(encoding="utf-8")
                  for p in sorted(user_dir.glob("*.txt"))}
        if custom:
            _load_dir_templates(registry, custom)
    return registry


_default_registry: PromptRegistry | None = None


def _default() -> PromptRegistry:
    global _default_registry
    if _default_registry is None:
        _default_registry = builtin_registry()
    return _default_registry


def render_prompt(template_id: str, variables: Mapping[str, str],
                  registry: PromptRegistry | None = None) -> RenderedPrompt:
    return (registry or _default()).render(template_id, variables)


def list_templates(registry: PromptRegistry | None = None) -> list[TemplateInfo]:
    return (registry or _default()).list()
