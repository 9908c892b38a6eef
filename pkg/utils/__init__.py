"""Protocol, simulation and path utilities for the population protocol workbench"""
