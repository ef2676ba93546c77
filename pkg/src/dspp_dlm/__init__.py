"""Estimation of doubly stochastic Poisson intensities via deep latent SDE models.

Subpackages:
    nn         minimal tanh MLP with exact parameter/input gradients
    sde        time grids, Euler-Maruyama integration, pathwise sensitivities
    dspp       interval-count observation model and dataset generation
    inference  variational controlled SDE, ELBO, pathwise gradients, Adam training
    baselines  piecewise-constant and piecewise-linear NHPP MLEs
    queueing   infinite-server run-through experiments and statistics
    checkpoint model/optimizer serialization
    cli        experiment driver (generate | train | baseline | runthrough | report | selftest)
"""

__version__ = "0.1.0"
