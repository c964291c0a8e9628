"""Versioned tool wire protocol: envelopes, schemas, transports, cache, client."""
