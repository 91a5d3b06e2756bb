"""Operators module - Weighted shifts, functional calculus and flag operators"""
