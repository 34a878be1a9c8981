"""Schema-driven differential testing for JSON-RPC and REST API implementations."""

__version__ = "0.1.0"
