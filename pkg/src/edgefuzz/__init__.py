"""Edge-case driven fuzzing of library APIs.

Stages: mine check statements from native sources, analyze them into edge
cases, standardize those into a type-keyed corpus, synthesize an initial
program per API, then mutate it with matched edge cases and triage crashes.
"""

__version__ = "0.1.0"
