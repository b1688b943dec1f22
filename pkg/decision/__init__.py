"""Decision units and the sensitivity gate"""
