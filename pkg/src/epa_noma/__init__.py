"""Universal EPA receiver for uplink NOMA."""
