"""Droplet motion under the mass-conserving stochastic Allen-Cahn equation.

Modules
-------
geometry     boundary curves of the rescaled domain and the droplet interface
fields       mapped polar grid, quadrature, Neumann Laplacian, field I/O
noise        Q-Wiener process on a finite mean-free eigenbasis
droplet      droplet states, mass calibration, xi-derivatives, velocity c
manifold     projection onto the droplet manifold and the reduced SDE
spde         IMEX solver for the full equation
experiments  scaling suite, coupled comparison, exit times, spectral gap
cli          configuration handling and subcommands
"""

__version__ = "0.1.0"
