"""Utils module - Configuration, errors, spec loading and serialization"""
