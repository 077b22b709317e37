"""mededge: an offline, desk-scale diagnosis toolkit.

Trains a symptom->disease classifier and a small residual image
classifier, compresses them (freeze / prune / 8-bit quantize) into a
single memory-mappable bundle, and serves top-5 diagnoses through a
constrained-memory inference engine, a CLI and an HTTP service.
"""

__version__ = "0.1.0"
