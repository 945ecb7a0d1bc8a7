"""Autonomous insight discovery over tabular data.

The engine ingests a tabular source, profiles it, proposes prioritized
hypotheses, compiles the executable ones into both a declarative plan and
an equivalent SQL rendering, validates the generated artifacts, executes
them, assembles a dashboard, and packages everything into a deployable
app directory. Agents communicate over an embedded replayable event bus,
and every artifact records its lineage.
"""

__version__ = "0.1.0"
