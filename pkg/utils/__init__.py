"""
Utils package: logging setup and Prometheus metrics
"""

__version__ = "1.0.0"
