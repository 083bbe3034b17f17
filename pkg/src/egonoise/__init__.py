"""Drone egonoise suppression: GSC-RLS beamforming, localization and evaluation."""

__version__ = "0.1.0"
