"""Sustainable data center modeling toolkit."""
