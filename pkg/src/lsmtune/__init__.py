"""Robust and nominal tuning of LSM trees with a cost model and an I/O-counting simulator."""
