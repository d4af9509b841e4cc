"""
TACO: task-aware selection and ordering of in-context demonstrations.
"""
__version__ = "0.1.0"
