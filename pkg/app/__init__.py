"""
Orchestra simulator application package: CLI and HTTP surface
"""
