"""Multi-exit routing engine"""
