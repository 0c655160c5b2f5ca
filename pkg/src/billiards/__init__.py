"""Numerical laboratory for elliptic and near-elliptic convex billiards."""
