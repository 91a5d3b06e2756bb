"""CLI module - cdlab sub-commands and batch sweeps"""
