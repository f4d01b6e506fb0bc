"""Quasineutral Vlasov-Poisson: PIC simulation, Wasserstein distances, stability envelopes."""

__version__ = "0.1.0"
