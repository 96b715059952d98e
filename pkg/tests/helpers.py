"""Shared fixtures-in-spirit: the canonical two-wave test model."""

import math

import numpy as np

from latentepi import (
    HazardParams,
    InfectionParams,
    ModelParams,
    SheddingParams,
)

TRUTH_HEADLINE = {
    "lambda1": 0.002, "lambda2": 0.005,
    "alpha1": 1e-3, "alpha2": 5e-3,
    "beta1": 1e4, "beta2": 2e4,
}


def two_wave_params(n=20000, horizon=200, hazard1=math.log(0.002),
                    hazard2=math.log(0.005)):
    infection = InfectionParams(
        amplitudes=[[0.0045], [0.006]], centers=[[52.0], [138.0]],
        widths=[[13.0], [15.0]], recovery=[0.07, 0.07],
    )
    shedding = SheddingParams(
        shape=(1e-3, 5e-3), intercept=(math.log(1e4), math.log(2e4))
    )
    hazard = HazardParams(intercept=(hazard1, hazard2))
    return ModelParams(
        infection=infection, shedding=shedding, hazard=hazard,
        population=n, horizon=horizon,
    )


def zeros(params):
    return np.zeros((params.num_days, params.num_covariates))
