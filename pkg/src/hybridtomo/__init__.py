"""Tomographic probability representation of classical, quantum and hybrid states."""
