"""Matrix-free DG spectral-element solver for PMUT ultrasound arrays."""
