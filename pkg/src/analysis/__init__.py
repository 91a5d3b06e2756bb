"""Analysis module - Intertwining, compact corrections and equivalence decisions"""
