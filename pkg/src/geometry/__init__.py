"""Geometry module - Sections, curvature and Chern polynomials on disk grids"""
