"""Analysis and evaluation report generation for red-blue simulation runs.

Turns simulation outputs (scenario text, metric tables, process-event logs)
into five kinds of Markdown/HTML reports through staged chat-model
interactions with schema-validated extraction, deterministic plotting and
metric tools, a single-shot baseline mode, and a weighted judging harness.
"""

__version__ = "0.1.0"
