"""Advection-diffusion warp, conflict masks and jump-pattern motion evolution."""
