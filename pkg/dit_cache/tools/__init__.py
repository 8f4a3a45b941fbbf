"""
Tools Package
One sub-package per stage of the pipeline
"""
