"""Tests for torusfit."""
