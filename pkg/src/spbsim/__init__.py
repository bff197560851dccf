"""Structured partial backprop and the Jigsaw scheduler simulator."""
