"""Core components."""