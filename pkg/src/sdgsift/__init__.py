"""sdgsift: LLM evaluation agents that separate genuine SDG contributions
from incidental keyword matches in scholarly abstracts."""

__version__ = "0.1.0"
