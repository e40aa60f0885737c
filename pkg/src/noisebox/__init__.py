"""Noise-to-box diffusion detection with a four-direction selective-scan mixer."""
