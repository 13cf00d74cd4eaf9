"""Boundary-coupled Hindmarsh-Rose neuron network simulator."""
