"""Latency-minimizing task assignment and resource allocation for D2D edge offloading."""
