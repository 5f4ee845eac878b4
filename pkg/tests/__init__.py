"""Tests for the dn-stein toolkit."""
