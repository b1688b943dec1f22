"""Temperature softmax, dense networks and their training loop"""
