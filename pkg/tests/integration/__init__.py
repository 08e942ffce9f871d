"""Integration tests for the trace emulation workflow, relay and MCP server."""
