"""Command families of the popkit command line"""
