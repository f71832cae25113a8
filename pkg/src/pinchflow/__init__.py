"""Quadratically pinched mean curvature flow in spheres: tensor algebra, exact
solutions, a rotationally symmetric flow solver and a surgery loop."""

__version__ = "0.1.0"
