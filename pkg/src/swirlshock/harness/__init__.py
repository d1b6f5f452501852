"""Configuration, orchestration, reconstruction, verification and file output."""
