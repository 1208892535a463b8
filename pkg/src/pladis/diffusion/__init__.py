"""Desk-scale conditional diffusion: data, schedule, denoiser, training, sampling."""
