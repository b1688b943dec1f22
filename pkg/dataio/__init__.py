"""Synthetic data, splits and replay files"""
