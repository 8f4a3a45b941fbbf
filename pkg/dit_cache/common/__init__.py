"""
Common Package
Shared plumbing used by every tool: autodiff, optimizer, errors, configuration and run outputs
"""
