"""Evolutionary, LLM-guided fuzzing of Python library APIs.

The package generates seed programs for a target API with a completion
model, evolves them with masked-infilling mutation operators scheduled by a
Thompson-sampling bandit, scores candidates by dataflow fitness, and checks
surviving programs with a differential CPU-vs-accelerator oracle.
"""

__version__ = "0.1.0"
