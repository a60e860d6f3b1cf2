"""Activity and subject recognition on UCI HAR features under simulated sensor outages."""

__version__ = "0.1.0"
