"""Tests for the LUCE simulator."""
