"""telehub: typed context objects and a workflow engine for telecom test automation."""

__version__ = "0.1.0"
