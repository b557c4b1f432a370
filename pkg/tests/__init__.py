"""Test package for levyrkhs."""
